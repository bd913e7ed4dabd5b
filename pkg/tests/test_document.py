import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcpn.document import (
    EOS, PAD, UNK, BoundingBox, CategorySchema, Document, DocumentParseError, DocumentValidationError,
    Utterance, build_vocab, load_jsonl, parse_ocr_json, serialize_document, write_jsonl,
)


def doc_with(*texts, gt=None):
    utts = tuple(Utterance(BoundingBox(0, 10 * i, 10, 10 * i + 5), t) for i, t in enumerate(texts))
    return Document("d", utts, gt or {})


def test_parse_minimal_document():
    doc = parse_ocr_json(b'{"doc_id": "x", "utterances": [{"box": [0,0,10,10], "text": "AB"}]}')
    assert len(doc.utterances) == 1
    assert doc.utterances[0].tokens == ("A", "B")
    assert doc.ground_truth == {}


def test_parse_empty_utterance_list():
    assert parse_ocr_json('{"doc_id": "x", "utterances": []}').utterances == ()


def test_degenerate_box_names_utterance():
    with pytest.raises(DocumentValidationError, match="utterance 0") as err:
        parse_ocr_json('{"doc_id": "x", "utterances": [{"box": [5,5,5,9], "text": "A"}]}')
    assert err.value.utterance_index == 0


def test_second_utterance_error_index():
    raw = {"doc_id": "x", "utterances": [{"box": [0, 0, 1, 1], "text": "A"}, {"box": [0, 0, 1], "text": "B"}]}
    with pytest.raises(DocumentValidationError) as err:
        parse_ocr_json(json.dumps(raw))
    assert err.value.utterance_index == 1


def test_malformed_json_reports_byte_offset():
    with pytest.raises(DocumentParseError) as err:
        parse_ocr_json('{"doc_id": "é", "utterances": [}'.encode())
    # the é takes two bytes, so the byte offset is one past the char offset
    assert err.value.offset == len('{"doc_id": "é", "utterances": ['.encode())


def test_empty_ground_truth_value_rejected():
    with pytest.raises(DocumentValidationError):
        parse_ocr_json('{"doc_id": "x", "utterances": [], "ground_truth": {"DATE": "  "}}')


def test_vocab_min_freq():
    vocab = build_vocab([doc_with("AAB", "A")], min_freq=2)
    assert vocab.lookup("A") == 3
    assert len(vocab) == 4
    assert vocab.lookup("B") == UNK


def test_vocab_tie_break_lexicographic():
    vocab = build_vocab([doc_with("BA")], min_freq=1)
    assert (vocab.lookup("A"), vocab.lookup("B")) == (3, 4)


def test_vocab_of_empty_documents():
    assert len(build_vocab([Document("e", ())])) == 3


def test_vocab_reserved_ids_and_unknown_lookup():
    vocab = build_vocab([doc_with("XYZ", gt={"NAME": "Q"})])
    assert (PAD, UNK, EOS) == (0, 1, 2)
    assert vocab.token(EOS) == "<eos>"
    assert vocab.lookup("never-seen") == UNK
    assert "Q" in vocab


def test_category_schema_ids():
    schema = CategorySchema.from_documents([doc_with("A", gt={"TOTAL": "1", "DATE": "2"})])
    assert schema.names == ("DATE", "TOTAL")
    assert schema.id_of("TOTAL") == 2
    assert [c.id for c in schema.categories] == [1, 2]
    with pytest.raises(KeyError):
        schema.id_of("NAME")


def test_whitespace_is_not_a_token():
    assert Utterance(BoundingBox(0, 0, 1, 1), "JOHN LEE").tokens == tuple("JOHNLEE")
    with pytest.raises(ValueError):
        Utterance(BoundingBox(0, 0, 1, 1), "   ")


def test_jsonl_roundtrip(tmp_path):
    docs = [doc_with("AB", "C D", gt={"NAME": "C D"}), doc_with("é")]
    path = tmp_path / "d.jsonl"
    write_jsonl(path, docs)
    assert load_jsonl(path) == docs


coords = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)
sizes = st.floats(0.5, 500, allow_nan=False, allow_infinity=False)
text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=8).filter(
    lambda s: any(not c.isspace() for c in s))


@st.composite
def documents(draw):
    n = draw(st.integers(0, 5))
    utts = []
    for _ in range(n):
        x, y, w, h = draw(coords), draw(coords), draw(sizes), draw(sizes)
        utts.append(Utterance(BoundingBox(x, y, x + w, y + h), draw(text)))
    gt = draw(st.dictionaries(st.sampled_from(["DATE", "TOTAL", "NAME"]), text, max_size=3))
    return Document(draw(st.text(max_size=6)), tuple(utts), gt)


@settings(max_examples=200, deadline=None)
@given(documents())
def test_parse_serialize_roundtrip(doc):
    assert parse_ocr_json(serialize_document(doc).encode()) == doc
