import math

import pytest

from tcpn.document import normalize_value, serialize_document
from tcpn.synth import GenConfig, NoiseConfig, derive_seed, generate_synthetic, inject_ocr_noise


def test_same_seed_same_bytes():
    a = generate_synthetic(GenConfig(num_docs=20, seed=5))
    b = generate_synthetic(GenConfig(num_docs=20, seed=5))
    assert [serialize_document(d) for d in a] == [serialize_document(d) for d in b]
    c = generate_synthetic(GenConfig(num_docs=20, seed=6))
    assert [serialize_document(d) for d in a] != [serialize_document(d) for d in c]


def test_zero_docs():
    assert generate_synthetic(GenConfig(num_docs=0)) == []


def test_derived_seeds_differ():
    assert len({derive_seed(0, i) for i in range(1000)}) == 1000


def test_ground_truth_appears_in_document():
    for doc in generate_synthetic(GenConfig(num_docs=50, seed=1)):
        texts = {normalize_value(u.text) for u in doc.utterances}
        assert set(doc.ground_truth) == {"DATE", "TOTAL", "NAME"}
        for value in doc.ground_truth.values():
            assert normalize_value(value) in texts


def test_duplicates_always_present():
    for doc in generate_synthetic(GenConfig(num_docs=50, seed=2, dup_prob=1.0)):
        total = normalize_value(doc.ground_truth["TOTAL"])
        assert sum(normalize_value(u.text) == total for u in doc.utterances) >= 2


def test_row_token_budget():
    cfg = GenConfig(num_docs=50, seed=3, max_row_tokens=40)
    for doc in generate_synthetic(cfg):
        assert doc.num_tokens > 0


def test_unknown_category_rejected():
    with pytest.raises(ValueError, match="grammar"):
        GenConfig(categories=("DATE", "PHONE"))


def test_noise_identity_when_disabled():
    doc = generate_synthetic(GenConfig(num_docs=1, seed=4))[0]
    assert inject_ocr_noise(doc, NoiseConfig(), seed=9) == doc


def test_full_substitution_changes_every_token():
    doc = generate_synthetic(GenConfig(num_docs=1, seed=4))[0]
    noisy = inject_ocr_noise(doc, NoiseConfig(p_sub=1.0), seed=9)
    for a, b in zip(doc.utterances, noisy.utterances):
        assert len(a.tokens) == len(b.tokens)
        assert all(x != y for x, y in zip(a.tokens, b.tokens))
    assert noisy.ground_truth == doc.ground_truth


def test_substitution_rate_is_binomial():
    docs = generate_synthetic(GenConfig(num_docs=60, seed=8))
    n = changed = 0
    for i, doc in enumerate(docs):
        noisy = inject_ocr_noise(doc, NoiseConfig(p_sub=0.1), seed=i)
        for a, b in zip(doc.utterances, noisy.utterances):
            n += len(a.tokens)
            changed += sum(x != y for x, y in zip(a.tokens, b.tokens))
    assert n >= 10_000
    sigma = math.sqrt(n * 0.1 * 0.9)
    assert abs(changed - 0.1 * n) <= 3 * sigma


def test_deletion_keeps_one_token_and_shrinks_box():
    doc = generate_synthetic(GenConfig(num_docs=1, seed=4))[0]
    noisy = inject_ocr_noise(doc, NoiseConfig(p_del=1.0), seed=1)
    for a, b in zip(doc.utterances, noisy.utterances):
        assert len(b.tokens) == 1
        assert b.box.width <= a.box.width


def test_values_scope_touches_only_value_utterances():
    doc = generate_synthetic(GenConfig(num_docs=1, seed=4))[0]
    noisy = inject_ocr_noise(doc, NoiseConfig(p_sub=1.0, scope="values"), seed=1)
    gold = {normalize_value(v) for v in doc.ground_truth.values()}
    for a, b in zip(doc.utterances, noisy.utterances):
        assert (a == b) == (normalize_value(a.text) not in gold)
