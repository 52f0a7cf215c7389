import numpy as np
import pytest

from robustdistill.attacks import AttackConfig, cw_inf, example_streams, fgsm, inner_max, pgd
from robustdistill.distill import ConfigurationError, ParameterError, ce_rows, one_hot
from robustdistill.nn import ModelSpec, Dense, build_model, forward, mlp, student_cnn
from robustdistill.tensor import ContractError, Tape, Tensor, default_dtype, softmax_t

KINDS = ("FGSM", "PGD_SAT", "PGD_TRADES", "CW", "SAT", "TRADES", "MART", "ARD", "IAD", "RSLAD")


def _case(r):
    classes = int(r.integers(2, 5))
    if r.random() < 0.15:
        spec = student_cnn((1, 4, 4), classes, width=2, hidden=8)
        x = r.random((int(r.integers(1, 4)), 1, 4, 4))
    else:
        d = int(r.integers(2, 6))
        spec = mlp((d,), [int(r.integers(2, 6))], classes)
        x = r.random((int(r.integers(1, 6)), d))
    # push a share of the pixels onto the box boundary so clamping is exercised
    x = np.where(r.random(x.shape) < 0.2, np.round(x), x).astype(np.float32)
    y = r.integers(0, classes, len(x))
    return spec, x, y


def test_attack_contract_randomized():
    r = np.random.default_rng(2024)
    cases = 0
    for i in range(1100):
        spec, x, y = _case(r)
        student = build_model(spec, i)
        teacher = build_model(spec, i + 1, role="teacher")
        eps = float(r.choice([0.0, r.uniform(0.001, 0.5)]))
        steps = int(r.integers(0, 5))
        kind = KINDS[i % len(KINDS)]
        streams = example_streams(i, range(len(x)), 3)
        if kind == "FGSM":
            x_adv = fgsm(student, x, y, eps)
        elif kind == "PGD_SAT":
            x_adv = pgd(student, x, y, AttackConfig.pgd_sat(eps, steps), streams)
        elif kind == "PGD_TRADES":
            x_adv = pgd(student, x, y, AttackConfig.pgd_trades(eps, steps), streams)
        elif kind == "CW":
            x_adv = cw_inf(student, x, y, AttackConfig.cw(eps, steps), streams)
        else:
            cfg = AttackConfig.train_inner(eps, steps).replace(step_size=float(r.uniform(0.001, 0.3)))
            x_adv = inner_max(kind, student, teacher, x, y, cfg, streams,
                              rsl_source="adversarial" if r.random() < 0.3 else "natural")
        x_adv = x_adv.data
        assert x_adv.shape == x.shape and x_adv.dtype == x.dtype
        assert np.abs(x_adv.astype(np.float64) - x).max() <= eps + 1e-6, kind
        assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0, kind
        if eps == 0.0:
            assert x_adv.tobytes() == x.tobytes(), kind
        cases += 1
    assert cases >= 1000


def _grad_wrt_input(params, x, y):
    xt = Tensor(x, requires_grad=True)
    with Tape() as tape:
        loss = ce_rows(softmax_t(forward(params, xt)), y).sum()
    return tape.gradient(loss, [xt])[0]


def test_fgsm_is_one_step_pgd(rng):
    params = build_model(student_cnn((1, 8, 8), 5), 0)
    x = rng.random((6, 1, 8, 8)).astype(np.float32)
    y = rng.integers(0, 5, 6)
    a = fgsm(params, x, y, 0.05).data
    b = pgd(params, x, y, AttackConfig(0.05, 1, 0.05, "none", 0.0, "CE")).data
    assert a.tobytes() == b.tobytes()
    eps = np.float32(0.05)
    manual = np.clip(x + eps * np.sign(_grad_wrt_input(params, x, y)), 0, 1)
    assert a.tobytes() == manual.astype(np.float32).tobytes()


def test_epsilon_zero_is_identity(rng):
    params = build_model(mlp((6,), [5], 3), 0)
    x = rng.random((4, 6)).astype(np.float32)
    y = rng.integers(0, 3, 4)
    for cfg in (AttackConfig.pgd_sat(0.0), AttackConfig.pgd_trades(0.0), AttackConfig.cw(0.0)):
        out = pgd(params, x, y, cfg, np.random.default_rng(0)).data
        assert out.tobytes() == x.tobytes()


def test_linear_model_fgsm_increases_ce():
    r = np.random.default_rng(5)
    with default_dtype(np.float64):
        for i in range(50):
            params = build_model(ModelSpec((Dense(5, 3),), 3, (5,)), i)
            x = r.uniform(0.3, 0.7, (8, 5))
            y = r.integers(0, 3, 8)
            before = ce_rows(softmax_t(forward(params, x)), y).data
            after = ce_rows(softmax_t(forward(params, fgsm(params, x, y, 0.1))), y).data
            assert np.all(after >= before - 1e-12)


def test_cw_matches_ce_for_two_classes(rng):
    params = build_model(mlp((6,), [8], 2), 3)
    x = rng.uniform(0.2, 0.8, (10, 6)).astype(np.float32)
    y = rng.integers(0, 2, 10)
    base = AttackConfig(0.1, 5, 0.02, "none", 0.0, "CE")
    a = pgd(params, x, y, base).data
    b = cw_inf(params, x, y, base).data
    np.testing.assert_array_equal(a, b)


def test_rslad_inner_with_one_hot_targets_equals_ce(rng):
    student = build_model(student_cnn((1, 8, 8), 5), 0)
    teacher = build_model(student_cnn((1, 8, 8), 5), 9, role="teacher")
    x = rng.random((6, 1, 8, 8)).astype(np.float32)
    y = rng.integers(0, 5, 6)
    cfg = AttackConfig.train_inner(0.1, 5)
    a = inner_max("RSLAD", student, teacher, x, y, cfg, example_streams(0, range(6), 1),
                  targets=one_hot(y, 5, np.float32)).data
    b = inner_max("SAT", student, teacher, x, y, cfg, example_streams(0, range(6), 1)).data
    assert a.tobytes() == b.tobytes()


def test_attacks_do_not_mutate_parameters(rng):
    student = build_model(student_cnn((1, 8, 8), 5), 0)
    teacher = build_model(student_cnn((1, 8, 8), 5), 1, role="teacher")
    before = student.digest(), teacher.digest()
    x = rng.random((4, 1, 8, 8)).astype(np.float32)
    y = rng.integers(0, 5, 4)
    for method in ("SAT", "TRADES", "MART", "ARD", "IAD", "RSLAD"):
        inner_max(method, student, teacher, x, y, AttackConfig.train_inner(0.1, 3), np.random.default_rng(0))
    assert (student.digest(), teacher.digest()) == before


def test_attack_determinism_and_threads(rng, monkeypatch):
    params = build_model(student_cnn((1, 8, 8), 5), 0)
    x = rng.random((7, 1, 8, 8)).astype(np.float32)
    y = rng.integers(0, 5, 7)
    cfg = AttackConfig.pgd_sat(0.1, 4)
    one = pgd(params, x, y, cfg, example_streams(4, range(7), 3)).data
    again = pgd(params, x, y, cfg, example_streams(4, range(7), 3)).data
    monkeypatch.setenv("ROBUSTDISTILL_THREADS", "3")
    threaded = pgd(params, x, y, cfg, example_streams(4, range(7), 3)).data
    assert one.tobytes() == again.tobytes() == threaded.tobytes()
    # per-example streams make a row's result independent of its batch mates
    single = pgd(params, x[2:3], y[2:3], cfg, example_streams(4, [2], 3)).data
    monkeypatch.setenv("ROBUSTDISTILL_THREADS", "1")
    assert single.tobytes() == one[2:3].tobytes()


def test_contract_errors(rng):
    params = build_model(mlp((4,), [4], 3), 0)
    x = rng.random((2, 4)).astype(np.float32)
    with pytest.raises(ContractError):
        pgd(params, x, np.array([0, 1]), AttackConfig.train_inner(0.1, 2, "KL_to_natural"), np.random.default_rng(0))
    with pytest.raises(ContractError):
        pgd(params, x, np.array([0, 1]), AttackConfig.pgd_sat(0.1))  # random start without an rng
    with pytest.raises(ParameterError):
        AttackConfig(epsilon=-0.1)
    with pytest.raises(ConfigurationError):
        inner_max("RSLAD", params, None, x, [0, 1], AttackConfig.train_inner(0.1), np.random.default_rng(0))
