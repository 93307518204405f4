import numpy as np
import pytest

from gemlearn.exceptions import DomainError, FormatError, ShapeError
from gemlearn.metrics import RMatrix, acc, bwt, evaluate_all, fwt
from gemlearn.predictor import MLP, MlpConfig

R_EXAMPLE = np.array([[0.9, 0.1], [0.8, 0.7]])
B_EXAMPLE = np.array([0.1, 0.1])


def test_hand_computed_example():
    # ACC = (0.8 + 0.7) / 2, BWT = 0.8 - 0.9, FWT = 0.1 - 0.1
    assert acc(R_EXAMPLE) == 0.75
    assert bwt(R_EXAMPLE) == pytest.approx(-0.1, abs=1e-15)
    assert fwt(R_EXAMPLE, B_EXAMPLE) == 0.0


def test_degenerate_cases_are_exact(rng):
    rows = np.tile(rng.random(4), (4, 1))
    assert bwt(rows) == 0.0
    R = rng.random((4, 4))
    R[-1] = np.diag(R)
    assert bwt(R) == 0.0
    R = rng.random((4, 4))
    baseline = np.concatenate([[0.3], np.diag(R, k=1)])
    assert fwt(R, baseline) == 0.0


def test_first_task_metrics_are_undefined():
    assert acc([[0.5]]) == 0.5
    with pytest.raises(DomainError):
        bwt([[0.5]])
    with pytest.raises(DomainError):
        fwt([[0.5]], [0.1])
    with pytest.raises(ShapeError):
        acc(np.ones((2, 3)))


def test_bwt_is_order_sensitive():
    R = np.array([[0.9, 0.2, 0.1], [0.5, 0.8, 0.2], [0.4, 0.6, 0.9]])
    swapped = R[:, [1, 0, 2]]
    assert bwt(R) != bwt(swapped)


class _Lookup:
    """Predicts stored labels exactly for known rows."""

    def __init__(self, x, y):
        self.table = {r.tobytes(): l for r, l in zip(x, y)}

    def predict(self, x, t):
        return np.array([self.table[r.tobytes()] for r in x])


def test_evaluate_all_memorizer_and_order_invariance(rng):
    tests = [(rng.random((20, 3)), rng.integers(0, 4, 20)) for _ in range(3)]
    model = _Lookup(np.vstack([x for x, _ in tests]), np.concatenate([y for _, y in tests]))
    np.testing.assert_array_equal(evaluate_all(model, tests), [1.0, 1.0, 1.0])
    mlp = MLP(MlpConfig(3, 4, (5,), num_tasks=3), seed=0)
    perm = rng.permutation(20)
    shuffled = [(x[perm], y[perm]) for x, y in tests]
    np.testing.assert_array_equal(evaluate_all(mlp, tests), evaluate_all(mlp, shuffled))
    with pytest.raises(DomainError):
        evaluate_all(mlp, [(np.zeros((0, 3)), np.zeros(0))])


def test_random_init_is_at_chance(rng):
    x = rng.standard_normal((2000, 20))
    tests = [(x, rng.integers(0, 10, 2000)) for _ in range(3)]
    out = evaluate_all(MLP(MlpConfig(20, 10, num_tasks=3), seed=1), tests)
    assert np.all(np.abs(out - 0.1) <= 0.03)


def test_text_roundtrip_and_layout():
    rec = RMatrix(B_EXAMPLE, [R_EXAMPLE[0], R_EXAMPLE[1]])
    text = rec.to_text()
    lines = text.splitlines()
    assert lines[0] == "0.1000 0.1000"
    assert set(lines[1]) == {"-"}
    assert lines[2:] == ["0.9000 0.1000", "0.8000 0.7000"]
    back = RMatrix.from_text(text)
    np.testing.assert_array_equal(back.R, R_EXAMPLE)
    np.testing.assert_array_equal(back.baseline, B_EXAMPLE)
    assert rec.summary() == {"acc": 0.75, "bwt": pytest.approx(-0.1), "fwt": 0.0}
    with pytest.raises(FormatError):
        RMatrix.from_text("0.1 0.2\n0.3 0.4\n")
