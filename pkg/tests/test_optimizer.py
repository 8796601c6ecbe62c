import json
import math

import numpy as np
import pytest

from resvm.curvature import HessianApprox, UpdateResult
from resvm.dataset import STREAM_SAMPLING, TrainingSet, make_rng
from resvm.losses import LossKind, average_objective
from resvm.optimizer import (
    Constant,
    Decaying,
    Method,
    OptimizerState,
    ResConfig,
    check_rate_condition,
    estimate_diagnostics,
    rate_bound,
    res_step,
    run,
    sgd_step,
)


# -- schedules ---------------------------------------------------------------


def test_decaying_schedule_shape():
    sched = Decaying(3e-2, 100)
    assert sched(0) == 3e-2
    values = [sched(t) for t in range(1000)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_decaying_schedule_summability_probe():
    eps0, tau = 3e-2, 100.0
    t = np.arange(1_000_000, dtype=float)
    eps = eps0 * tau / (tau + t)
    partial = np.cumsum(eps)
    # non-summable: partial sums keep growing like eps0*tau*log(t)
    assert partial[-1] - partial[99_999] > 0.9 * eps0 * tau * math.log(10)
    # square-summable: bounded by eps0^2 (1 + tau)
    assert np.sum(eps**2) <= eps0**2 * (1 + tau)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Decaying(0.0, 100)
    with pytest.raises(ValueError):
        Constant(-1.0)


# -- config ------------------------------------------------------------------


def test_default_config_is_reference_setting():
    cfg = ResConfig()
    assert (cfg.lam, cfg.delta, cfg.gamma, cfg.batch_size) == (1e-3, 1e-3, 1e-4, 5)
    assert cfg.schedule == Decaying(3e-2, 100)
    assert cfg.loss is LossKind.SQUARED_HINGE


def test_config_json_round_trip():
    cfg = ResConfig(lam=0.01, delta=0.2, gamma=0.3, batch_size=7, schedule=Constant(0.1),
                    max_iters=9, seed=11, loss="log")
    d = json.loads(cfg.to_json())
    assert set(d) == {"lambda", "delta", "gamma", "batch_size", "schedule", "max_iters", "seed", "loss"}
    assert d["loss"] == "log"
    assert ResConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize(
    "kwargs",
    [dict(delta=-1.0), dict(delta=0.0), dict(gamma=-1.0), dict(lam=-1.0), dict(batch_size=0), dict(max_iters=-1)],
)
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        ResConfig(**kwargs)


def test_unregularized_mode_allowed():
    cfg = ResConfig(delta=0.0, gamma=0.0)
    assert cfg.unregularized


# -- steps -------------------------------------------------------------------


def _separable_set():
    X = np.array([[2.0, 0.0], [-2.0, 0.0], [3.0, 1.0], [-3.0, 1.0]])
    return TrainingSet(X, np.array([1.0, -1.0, 1.0, -1.0]))


def test_res_step_stationary_point():
    data = _separable_set()
    cfg = ResConfig(lam=0.0, batch_size=2)
    state = OptimizerState.initial(cfg, 2)
    state.w = np.array([1.0, 0.0])  # every margin >= 2
    res_step(state, cfg, data)
    np.testing.assert_array_equal(state.w, [1.0, 0.0])
    assert state.last_update is UpdateResult.SKIPPED and state.skip_count == 1
    assert state.t == 1


def test_sgd_step_stationary_point():
    data = _separable_set()
    cfg = ResConfig(lam=0.0, batch_size=1)
    state = OptimizerState.initial(cfg, 2, Method.SGD)
    state.w = np.array([1.0, 0.0])
    sgd_step(state, cfg, data)
    np.testing.assert_array_equal(state.w, [1.0, 0.0])


def test_sgd_first_step_from_origin(reference_set):
    cfg = ResConfig(batch_size=1)
    state = OptimizerState.initial(cfg, 4, Method.SGD)
    idx = make_rng(cfg.seed, STREAM_SAMPLING).integers(0, len(reference_set), size=1)
    x, y = reference_set.X[idx[0]], reference_set.y[idx[0]]
    sgd_step(state, cfg, reference_set)
    np.testing.assert_allclose(state.w, 3e-2 * 2 * y * x, rtol=1e-15)


def test_sgd_matches_res_with_identity_curvature(reference_set):
    cfg = ResConfig(gamma=0.0, batch_size=3)
    res_state = OptimizerState.initial(cfg, 4)
    res_state.H = HessianApprox(np.eye(4), cfg.delta)
    sgd_state = OptimizerState.initial(cfg, 4, Method.SGD)
    res_step(res_state, cfg, reference_set)
    sgd_step(sgd_state, cfg, reference_set)
    np.testing.assert_array_equal(res_state.w, sgd_state.w)


def test_same_minibatch_for_both_gradients(reference_set, monkeypatch):
    import resvm.optimizer as opt

    calls = []
    real = opt.instantaneous_gradient

    def spy(obj, X, y, w):
        calls.append((X.copy(), y.copy()))
        return real(obj, X, y, w)

    monkeypatch.setattr(opt, "instantaneous_gradient", spy)
    cfg = ResConfig()
    state = OptimizerState.initial(cfg, 4)
    res_step(state, cfg, reference_set)
    assert len(calls) == 2
    np.testing.assert_array_equal(calls[0][0], calls[1][0])
    np.testing.assert_array_equal(calls[0][1], calls[1][1])


def test_curvature_lower_bound_on_reference_instance(reference_set):
    cfg = ResConfig()
    state = OptimizerState.initial(cfg, 4)
    accepted = 0
    for _ in range(300):
        res_step(state, cfg, reference_set)
        if state.last_update is UpdateResult.UPDATED:
            accepted += 1
            p = state.last_pair
            assert p.curvature >= (cfg.lam - cfg.delta) * float(p.v @ p.v) - 1e-10
    assert accepted > 0


def test_full_batch_replay_is_bit_exact(reference_set):
    cfg = ResConfig(batch_size=len(reference_set), max_iters=20)
    batch = (reference_set.X, reference_set.y)
    a = OptimizerState.initial(cfg, 4)
    b = OptimizerState.initial(cfg, 4)
    for _ in range(20):
        res_step(a, cfg, reference_set, batch)
        res_step(b, cfg, reference_set, batch)
        assert a.w.tobytes() == b.w.tobytes()


def test_full_batch_objective_non_increasing_after_burn_in(reference_set):
    cfg = ResConfig(batch_size=len(reference_set))
    batch = (reference_set.X, reference_set.y)
    state = OptimizerState.initial(cfg, 4)
    values = []
    for _ in range(200):
        res_step(state, cfg, reference_set, batch)
        values.append(average_objective(cfg.objective, reference_set.X, reference_set.y, state.w))
    tail = np.array(values[50:])
    assert np.all(np.diff(tail) <= 1e-15)


def test_descent_on_average(reference_set):
    cfg = ResConfig()
    warm = run(cfg.replace(max_iters=40), reference_set)
    w = warm.final_w
    H = HessianApprox(warm.final_curvature, cfg.delta)
    f0 = average_objective(cfg.objective, reference_set.X, reference_set.y, w)
    rng = make_rng(99, STREAM_SAMPLING)
    decreases = []
    for _ in range(1000):
        state = OptimizerState(w=w.copy(), H=H.copy(), rng=rng, t=40)
        res_step(state, cfg, reference_set)
        decreases.append(f0 - average_objective(cfg.objective, reference_set.X, reference_set.y, state.w))
    assert np.mean(decreases) > 0


# -- runs --------------------------------------------------------------------


def test_run_zero_iterations(reference_set):
    lg = run(ResConfig(max_iters=0), reference_set)
    assert lg.entries == [(0, 0, 1.0)]
    assert lg.fault is None


@pytest.mark.parametrize("method", [Method.RES, Method.SGD])
def test_run_is_deterministic(reference_set, method):
    cfg = ResConfig(max_iters=60, seed=4)
    a, b = run(cfg, reference_set, method, 7), run(cfg, reference_set, method, 7)
    assert a.entries == b.entries
    assert a.final_w.tobytes() == b.final_w.tobytes()


def test_run_records(reference_set):
    cfg = ResConfig(max_iters=25, batch_size=5)
    lg = run(cfg, reference_set, Method.RES, record_every=10)
    assert [e[0] for e in lg.entries] == [0, 10, 20, 25]
    assert all(e[1] == 5 * e[0] for e in lg.entries)
    assert lg.method is Method.RES


def test_unregularized_label(reference_set):
    cfg = ResConfig(delta=0.0, gamma=0.0, max_iters=5)
    assert run(cfg, reference_set, "res").method is Method.RES_UNREGULARIZED
    with pytest.raises(ValueError):
        run(ResConfig(max_iters=5), reference_set, Method.RES_UNREGULARIZED)


def test_non_finite_iterate_is_recorded_fault(reference_set):
    cfg = ResConfig(schedule=Constant(1e300), batch_size=1, max_iters=50)
    lg = run(cfg, reference_set, Method.SGD, record_every=1)
    assert lg.fault is not None
    it, reason = lg.fault
    assert "non-finite" in reason
    assert lg.entries[-1][0] == it
    assert [e[0] for e in lg.entries] == list(range(it + 1))


# -- rate diagnostics --------------------------------------------------------


def test_rate_condition():
    assert check_rate_condition(3e-2, 100, 1e-4) is False
    assert check_rate_condition(1, 100, 0.1) is True
    assert check_rate_condition(0.5, 1, 1) is False  # exactly 1


def test_rate_bound_values():
    assert rate_bound(1, 1, 1, 1, 0, 0) == pytest.approx(1.0, abs=1e-15)
    assert rate_bound(1, 100, 0.1, 1e-300, 0.0, 50) < 1e-296
    t = np.arange(0, 10_000, 7)
    seq = rate_bound(1, 100, 0.1, 1, 1, t)
    assert np.all(np.diff(seq) <= 0)


def test_rate_bound_rejects_failing_condition():
    with pytest.raises(ValueError):
        rate_bound(3e-2, 100, 1e-4, 1, 1, 0)


def test_diagnostics_reference_instance(reference_set):
    diag = estimate_diagnostics(ResConfig(), reference_set, probe_points=50)
    assert diag.m_tilde == 1e-3
    assert diag.M_tilde >= diag.m_tilde
    assert diag.s_sq_estimate > 0
    assert diag.rate_condition_ok is False


def test_diagnostics_no_active_terms():
    data = _separable_set()
    cfg = ResConfig(lam=0.5, batch_size=2)
    diag = estimate_diagnostics(cfg, data, points=[np.array([1.0, 0.0]), np.array([2.0, -0.1])])
    assert diag.M_tilde == diag.m_tilde == 0.5


def test_diagnostics_active_curvature_bound():
    data = _separable_set()
    cfg = ResConfig(lam=0.5, batch_size=4)
    diag = estimate_diagnostics(cfg, data, points=[np.zeros(2)])
    # at w = 0 every sample is active; M~ = lam + 2 * max eig of the batch second moment
    assert diag.M_tilde > 0.5
    assert diag.M_tilde <= 0.5 + 2 * max(np.linalg.eigvalsh(data.X.T @ data.X)[-1], 0)
