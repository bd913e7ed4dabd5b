import json
import math

import numpy as np
import pytest

from tcpn.autodiff import Graph, Tensor, ops
from tcpn.decoder import EPS
from tcpn.document import CategorySchema, build_vocab
from tcpn.encoder import EncoderConfig
from tcpn.model import Model
from tcpn.synth import GenConfig, generate_synthetic
from tcpn.trainer import (
    Adadelta, LossWeights, TrainConfig, TrainingError, classification_loss, document_loss, fit, loss_grad_check,
    make_example, sequence_loss, suppression_loss, toy_problem,
)


def scalar(v):
    return Tensor(np.array(v, dtype=np.float64))


def test_sequence_loss_examples():
    assert sequence_loss([scalar(1.0)] * 3).item() == pytest.approx(0.0, abs=1e-11)
    assert sequence_loss([scalar(0.5)]).item() == pytest.approx(math.log(2))
    floor = sequence_loss([scalar(0.0)]).item()
    assert math.isfinite(floor) and floor == pytest.approx(-math.log(EPS))


def test_classification_loss_examples():
    uniform = ops.log_softmax(Tensor(np.zeros((5, 4))), axis=-1)
    assert classification_loss(uniform, [], 1).item() == 0.0
    assert classification_loss(uniform, [2], 1).item() == pytest.approx(math.log(4))


def test_classification_loss_counts_repeated_rows():
    logits = Tensor(np.array([[0.0, 2.0, 0.0], [1.0, 0.0, 0.0]]), requires_grad=True)
    with Graph() as g:
        loss = classification_loss(ops.log_softmax(logits, axis=-1), [0, 0, 1], 1)
        g.backward(loss)
    lp = logits.data - np.log(np.exp(logits.data).sum(axis=1, keepdims=True))
    assert loss.item() == pytest.approx(-(2 * lp[0, 1] + lp[1, 1]) / 3)
    # row 0 was selected twice, so it carries twice the gradient of row 1's single term
    p = np.exp(lp)
    assert logits.grad[0, 1] == pytest.approx(-2 * (1 - p[0, 1]) / 3)


def test_suppression_loss_examples():
    background = ops.softmax(Tensor(np.tile([50.0, 0, 0, 0], (10, 1))), axis=-1)
    assert suppression_loss(background, 1, 1).item() == pytest.approx(0.0, abs=1e-12)
    uniform = ops.softmax(Tensor(np.zeros((10, 4))), axis=-1)
    assert suppression_loss(uniform, 2, 2).item() == pytest.approx(0.5)
    assert suppression_loss(uniform, 3, 0).item() == pytest.approx(2.5)


def test_loss_weights_select_terms():
    model, ex = toy_problem(d=8, seed=3)
    full = document_loss(model, ex, LossWeights())
    seq_only = document_loss(model, ex, LossWeights(1, 0, 0))
    assert seq_only.total.item() == pytest.approx(full.seq)
    assert document_loss(model, ex, LossWeights(0, 0, 0)).total.item() == 0.0
    assert full.total.item() == pytest.approx(full.seq + full.cls + full.sup)
    assert full.sup >= 0


def test_full_objective_gradient():
    assert loss_grad_check(d=8, seed=1) < 1e-4


def test_adadelta_first_step_matches_formula():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.5, -0.1])
    opt = Adadelta({"p": p}, lr=1.0, rho=0.9, eps=1e-6)
    opt.step()
    g = np.array([0.5, -0.1])
    expected = np.array([1.0, -2.0]) - np.sqrt(1e-6) / np.sqrt(0.1 * g * g + 1e-6) * g
    assert np.allclose(p.data, expected, rtol=0, atol=1e-15)


def test_adadelta_minimizes_a_quadratic():
    p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = Adadelta({"p": p})
    for _ in range(3000):
        p.grad = 2 * p.data
        opt.step()
    assert np.abs(p.data).max() < 0.5


def test_decay_epochs_validated():
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, decay_epochs=(10,))


def small_setup(n=2, d=8, seed=0):
    docs = generate_synthetic(GenConfig(num_docs=n, seed=seed, min_rows=5, max_rows=8))
    model = Model.init(build_vocab(docs), CategorySchema.from_documents(docs), EncoderConfig(d=d, depth=1), seed=0)
    return docs, model


def test_fit_writes_metrics_and_checkpoints(tmp_path):
    docs, model = small_setup()
    history = fit(model, docs, TrainConfig(epochs=3, decay_epochs=(2,), batch_size=2), tmp_path)
    lines = [json.loads(x) for x in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert lines == history and [r["epoch"] for r in lines] == [1, 2, 3]
    assert all({"L_S", "L_C", "L_N"} <= set(r) for r in lines)
    assert (tmp_path / "checkpoint-epoch0002.json").exists() and (tmp_path / "model.json").exists()
    reloaded = Model.load(tmp_path / "model.json")
    assert all(np.array_equal(reloaded.params[k].data, model.params[k].data) for k in model.params)


def test_fit_is_deterministic(tmp_path):
    for run in ("a", "b"):
        docs, model = small_setup()
        fit(model, docs, TrainConfig(epochs=2, seed=5), tmp_path / run)
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()
    assert (tmp_path / "a" / "metrics.jsonl").read_text() == (tmp_path / "b" / "metrics.jsonl").read_text()


def test_non_finite_loss_names_document():
    docs, model = small_setup()
    model.params["head.b"].data[:] = np.nan
    with pytest.raises(TrainingError, match=docs[0].doc_id[:-1]):
        fit(model, docs, TrainConfig(epochs=1))


def test_fit_rejects_empty_dataset():
    _, model = small_setup()
    with pytest.raises(ValueError):
        fit(model, [], TrainConfig(epochs=1))


def test_absent_category_targets_end_of_sequence():
    docs, model = small_setup(n=1)
    doc = docs[0].replace(ground_truth={k: v for k, v in docs[0].ground_truth.items() if k != "NAME"})
    ex = make_example(model, doc)
    k = model.categories.index("NAME")
    assert ex.lengths[k] == 1 and ex.budgets[k] == 0
