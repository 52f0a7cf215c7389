import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from robustdistill.distill import (
    METHODS,
    ConfigurationError,
    DefenseConfig,
    ParameterError,
    bce_mart,
    ce_loss,
    kl_loss,
    make_soft_labels,
    one_hot,
    outer_loss,
)
from robustdistill.nn import ModelSpec, Dense, ReLU, build_model, mlp, predict_probs
from robustdistill.tensor import Tape, Tensor, default_dtype, finite_difference_gradient

from _helpers import rel_err


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def test_ce_examples():
    assert ce_loss(T([[1.0, 0.0, 0.0]]), [0]).item() <= 1e-11
    assert ce_loss(T(np.full((1, 10), 0.1)), [3]).item() == pytest.approx(math.log(10), abs=1e-9)
    p = np.array([[0.2, 0.8], [0.6, 0.4]])
    both = ce_loss(T(p), [1, 0]).item()
    assert both == pytest.approx((-math.log(0.8) - math.log(0.6)) / 2, abs=1e-12)


def test_kl_examples():
    p = np.array([[0.3, 0.7], [0.1, 0.9]])
    assert abs(kl_loss(T(p), p).item()) < 1e-9
    # 0.25 ln(0.25/0.5) + 0.75 ln(0.75/0.5)
    assert kl_loss(T([[0.5, 0.5]]), [[0.25, 0.75]]).item() == pytest.approx(0.13081, abs=1e-4)
    q = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])
    y = np.array([1, 2])
    assert kl_loss(T(q), one_hot(y, 3, np.float64)).item() == pytest.approx(ce_loss(T(q), y).item(), abs=1e-6)


def test_bce_mart_examples():
    assert bce_mart(T([[0.9, 0.05, 0.05]]), [0]).item() == pytest.approx(-math.log(0.9) - math.log(0.95), abs=1e-9)
    assert bce_mart(T([[0.0, 1.0, 0.0]]), [1]).item() < 1e-9


@settings(max_examples=100, deadline=None)
@given(
    logits=hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=st.floats(-8, 8)),
    other=hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=st.floats(-8, 8)),
)
def test_kl_nonnegative_zero_iff_equal(logits, other):
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    q = other[: p.shape[0], : p.shape[1]] if other.shape[0] >= p.shape[0] and other.shape[1] >= p.shape[1] else logits
    q = np.exp(q) / np.exp(q).sum(axis=1, keepdims=True)
    value = kl_loss(T(p), q).item()
    assert value >= -1e-12
    if np.allclose(p, q, atol=1e-6):
        assert value < 1e-9
    else:
        assert value > 0


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=st.floats(-8, 8)),
       st.data())
def test_bce_mart_dominates_ce(logits, data):
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    y = np.array([data.draw(st.integers(0, p.shape[1] - 1)) for _ in range(p.shape[0])])
    assert bce_mart(T(p), y).item() >= ce_loss(T(p), y).item() - 1e-12


def test_soft_labels():
    ssl = make_soft_labels("SSL", None, None, None, [2], 0.1, num_classes=10).rows
    assert ssl[0, 2] == pytest.approx(0.91) and ssl[0, 0] == pytest.approx(0.01)
    exact = make_soft_labels("SSL", None, None, None, [1, 0], 0.0, num_classes=3).rows
    np.testing.assert_array_equal(exact, [[0, 1, 0], [1, 0, 0]])
    with pytest.raises(ParameterError):
        make_soft_labels("SSL", None, None, None, [1], 1.0, num_classes=3)
    teacher = build_model(mlp((4,), [6], 3), 0, role="teacher")
    x = np.random.default_rng(0).random((5, 4)).astype(np.float32)
    rsl = make_soft_labels("RSL", teacher, x, x, None).rows
    np.testing.assert_allclose(rsl.sum(axis=1), 1.0, atol=1e-6)
    with pytest.raises(ConfigurationError):
        make_soft_labels("NSL", None, x, x, None)


def test_defense_config_validation():
    assert DefenseConfig("RSLAD").alpha == pytest.approx(5 / 6)
    assert DefenseConfig("ARD").alpha == 1.0
    with pytest.raises(ParameterError, match="RSLAD"):
        DefenseConfig("NOPE")
    with pytest.raises(ParameterError):
        DefenseConfig("RSLAD", alpha=1.5)
    with pytest.raises(ParameterError):
        DefenseConfig("ARD", tau=0)


# ---------------------------------------------------------------------------
# outer objectives on a tiny net (float64)

def _tiny(seed=0, classes=3):
    with default_dtype(np.float64):
        spec = ModelSpec((Dense(4, 5), ReLU(), Dense(5, classes)), classes, (4,))
        student = build_model(spec, seed)
        teacher = build_model(mlp((4,), [7], classes), seed + 100, role="teacher")
    r = np.random.default_rng(seed)
    x = r.random((6, 4))
    x_adv = np.clip(x + r.uniform(-0.1, 0.1, x.shape), 0, 1)
    y = r.integers(0, classes, 6)
    return student, teacher, x, x_adv, y


def _one_hot_teacher(classes=3):
    """A 'teacher' whose logits are 40 * one_hot(y) for the label encoded in the input."""
    with default_dtype(np.float64):
        spec = ModelSpec((Dense(classes, classes),), classes, (classes,))
        t = build_model(spec, 0, role="teacher")
    t["0.weight"].data[...] = 800 * np.eye(classes)
    t["0.bias"].data[...] = 0
    return t


def test_rslad_alpha_one_is_adversarial_kl():
    student, teacher, x, x_adv, y = _tiny()
    got = outer_loss(DefenseConfig("RSLAD", alpha=1.0), student, teacher, x, x_adv, y).item()
    t_nat = predict_probs(teacher, x).data
    assert got == kl_loss(predict_probs(student, x_adv), t_nat).item()


def test_rslad_linear_in_alpha():
    student, teacher, x, x_adv, y = _tiny(1)
    l0 = outer_loss(DefenseConfig("RSLAD", alpha=0.0), student, teacher, x, x_adv, y).item()
    l1 = outer_loss(DefenseConfig("RSLAD", alpha=1.0), student, teacher, x, x_adv, y).item()
    for a in np.linspace(0, 1, 7):
        la = outer_loss(DefenseConfig("RSLAD", alpha=a), student, teacher, x, x_adv, y).item()
        assert la == pytest.approx((1 - a) * l0 + a * l1, abs=1e-6)


def test_rslad_with_one_hot_teacher_is_hard_label_ce():
    classes = 3
    teacher = _one_hot_teacher(classes)
    with default_dtype(np.float64):
        student = build_model(ModelSpec((Dense(3, 4), ReLU(), Dense(4, 3)), 3, (3,)), 2)
    y = np.array([0, 2, 1, 1])
    x = one_hot(y, classes, np.float64) * 0.05 + 0.5
    x_adv = x + 0.01
    a = 5 / 6
    got = outer_loss(DefenseConfig("RSLAD", alpha=a), student, teacher, x, x_adv, y).item()
    want = (1 - a) * ce_loss(predict_probs(student, x), y).item() + a * ce_loss(predict_probs(student, x_adv), y).item()
    assert got == pytest.approx(want, abs=1e-6)


def test_trades_without_perturbation_is_ce():
    student, teacher, x, _, y = _tiny(2)
    got = outer_loss(DefenseConfig("TRADES"), student, None, x, x, y).item()
    assert got == pytest.approx(ce_loss(predict_probs(student, x), y).item(), abs=1e-12)


def test_iad_with_confident_teacher_is_teacher_kl():
    teacher = _one_hot_teacher()
    with default_dtype(np.float64):
        student = build_model(ModelSpec((Dense(3, 4), ReLU(), Dense(4, 3)), 3, (3,)), 3)
    y = np.array([0, 1, 2])
    x = one_hot(y, 3, np.float64) * 0.05 + 0.5
    cfg = DefenseConfig("IAD", beta=2.0)
    got = outer_loss(cfg, student, teacher, x, x, y).item()
    want = kl_loss(predict_probs(student, x), predict_probs(teacher, x).data).item()
    assert got == pytest.approx(want, abs=1e-9)


def test_ard_tau_squared_scales_only_kl():
    student, teacher, x, x_adv, y = _tiny(4)
    cfg = DefenseConfig("ARD", alpha=0.5, tau=3.0)
    got = outer_loss(cfg, student, teacher, x, x_adv, y).item()
    ce = ce_loss(predict_probs(student, x, 3.0), y).item()
    kl = kl_loss(predict_probs(student, x_adv, 3.0), predict_probs(teacher, x, 3.0).data).item()
    assert got == pytest.approx(0.5 * ce + 0.5 * 9 * kl, abs=1e-10)


def test_missing_teacher_is_configuration_error():
    student, _, x, x_adv, y = _tiny()
    for method in ("ARD", "IAD", "RSLAD"):
        with pytest.raises(ConfigurationError):
            outer_loss(DefenseConfig(method), student, None, x, x_adv, y)


CONFIGS = [
    DefenseConfig("NAT"),
    DefenseConfig("SAT"),
    DefenseConfig("TRADES", lam=6.0),
    DefenseConfig("MART", lam=6.0),
    DefenseConfig("ARD", alpha=0.7, tau=2.0),
    DefenseConfig("IAD", tau=2.0, beta=1.5),
    DefenseConfig("RSLAD"),
    DefenseConfig("RSLAD", rsl_source="adversarial"),
    DefenseConfig("RSLAD", soft_label="smooth", smoothing=0.2),
]


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: f"{c.method}-{c.rsl_source}-{c.soft_label}")
def test_outer_loss_gradients_match_finite_differences(cfg):
    student, teacher, x, x_adv, y = _tiny(5)
    names = list(student.tensors)
    with Tape() as tape:
        loss = outer_loss(cfg, student, teacher, x, x_adv, y)
    grads = tape.gradient(loss, [student[n] for n in names])
    for name, g in zip(names, grads):
        base = student[name].data

        def f(t, name=name):
            old = student[name].data
            student[name].data = t.data
            try:
                return outer_loss(cfg, student, teacher, x, x_adv, y)
            finally:
                student[name].data = old

        fd = finite_difference_gradient(f, base, 1e-6)
        assert rel_err(g, fd) < 1e-4, name


@pytest.mark.parametrize("method", ["ARD", "IAD", "RSLAD"])
def test_teacher_receives_no_gradient(method):
    student, teacher, x, x_adv, y = _tiny(6)
    teacher.trainable(True)
    with Tape() as tape:
        loss = outer_loss(DefenseConfig(method), student, teacher, x, x_adv, y)
    for g in tape.gradient(loss, list(teacher.tensors.values())):
        assert not g.any()


def test_all_methods_listed():
    assert set(METHODS) == {"NAT", "SAT", "TRADES", "MART", "ARD", "IAD", "RSLAD"}
