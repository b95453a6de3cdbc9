import numpy as np
import pytest

from zsbias import network
from zsbias.config import CorrectionConfig
from zsbias.errors import OptimizationDivergedError
from zsbias.optimizer import AdamState, VolumeContext, adam_step, loss_and_grads, optimize


def one_param(value=0.0):
    p = network.init_params(0, network.Architecture(channels=1, blocks=1))
    return network.NetworkParams(p.arch, {"w": np.array([value])})


def test_first_step_closed_form():
    p = one_param()
    state = AdamState.for_params(p)
    new, state = adam_step(p, {"w": np.array([0.1])}, state, lr=0.005)
    # m_hat = g, v_hat = g^2 -> update = -lr * g / (|g| + eps)
    assert new.tensors["w"][0] == pytest.approx(-0.005 * 0.1 / (0.1 + 1e-8), rel=1e-12)
    assert new.tensors["w"][0] == pytest.approx(-0.005, abs=1e-9)
    assert state.step == 1


def test_zero_gradient_no_decay():
    p = one_param(0.7)
    new, state = adam_step(p, {"w": np.array([0.0])}, AdamState.for_params(p), lr=0.1)
    assert new.tensors["w"][0] == 0.7
    assert state.step == 1


def test_coupled_vs_decoupled_weight_decay():
    p = one_param(2.0)
    coupled, s = adam_step(p, {"w": np.array([0.0])}, AdamState.for_params(p), lr=0.01, weight_decay=0.5)
    # coupled: g = 0.5 * 2 -> normalized step of -lr
    assert coupled.tensors["w"][0] == pytest.approx(2.0 - 0.01, rel=1e-9)
    assert s.v["w"][0] > 0
    dec, s = adam_step(p, {"w": np.array([0.0])}, AdamState.for_params(p), lr=0.01, weight_decay=0.5, decoupled=True)
    assert dec.tensors["w"][0] == pytest.approx(2.0 * (1 - 0.005))
    assert s.v["w"][0] == 0


def test_inputs_untouched():
    p = one_param(1.0)
    st = AdamState.for_params(p)
    adam_step(p, {"w": np.array([0.3])}, st, lr=0.1)
    assert p.tensors["w"][0] == 1.0 and st.step == 0 and st.m["w"][0] == 0


def test_non_finite_gradient():
    p = one_param()
    with pytest.raises(OptimizationDivergedError) as info:
        adam_step(p, {"w": np.array([np.nan])}, AdamState.for_params(p), lr=0.1)
    assert info.value.step == 1


def test_update_bound(rng):
    p = network.init_params(0)
    state = AdamState.for_params(p)
    lr = 0.005
    for _ in range(20):
        grads = {k: rng.normal(0, 10 ** rng.uniform(-6, 2), t.shape) for k, t in p.tensors.items()}
        new, state = adam_step(p, grads, state, lr, weight_decay=1e-4)
        for k in p.tensors:
            assert np.all(np.abs(new.tensors[k] - p.tensors[k]) <= 2 * lr)
        assert all(np.all(v >= 0) for v in state.v.values())
        p = new


def small_ctx(rng):
    y = rng.uniform(0, 1, (16, 16, 16))
    return VolumeContext.from_unit_volume(y, (4, 4, 4))


def test_optimize_lr_zero_keeps_params(rng):
    cfg = CorrectionConfig(opt_steps=1, learning_rate=0.0)
    p0 = network.init_params(cfg.seed)
    p1, trace = optimize(p0, small_ctx(rng), cfg)
    assert len(trace) == 1
    np.testing.assert_array_equal(p1.to_flat(), p0.to_flat())


@pytest.mark.parametrize("steps", [1, 4, 7])
def test_trace_length(rng, steps):
    cfg = CorrectionConfig(opt_steps=steps)
    _, trace = optimize(network.init_params(0), small_ctx(rng), cfg)
    assert len(trace) == steps


def test_identical_trajectories(rng):
    ctx = small_ctx(rng)
    cfg = CorrectionConfig(opt_steps=5, seed=4)
    a, ta = optimize(network.init_params(4), ctx, cfg)
    b, tb = optimize(network.init_params(4), ctx, cfg)
    assert a.to_flat().tobytes() == b.to_flat().tobytes()
    assert [t.total for t in ta] == [t.total for t in tb]


def test_divergence_reported_with_trace(rng, monkeypatch):
    import zsbias.optimizer as opt

    real = opt.loss_and_grads
    calls = {"n": 0}

    def poisoned(params, ctx, cfg):
        breakdown, grads = real(params, ctx, cfg)
        calls["n"] += 1
        if calls["n"] == 3:
            grads["head.bias"] = grads["head.bias"] * np.inf
        return breakdown, grads

    monkeypatch.setattr(opt, "loss_and_grads", poisoned)
    with pytest.raises(OptimizationDivergedError) as info:
        optimize(network.init_params(0), small_ctx(rng), CorrectionConfig(opt_steps=5))
    assert info.value.step == 3
    assert len(info.value.trace) == 3


def test_zero_head_only_head_gets_gradient(rng):
    _, grads = loss_and_grads(network.init_params(0), small_ctx(rng), CorrectionConfig())
    assert np.abs(grads["head.weight"]).sum() > 0
    assert np.abs(grads["block1.dw.weight"]).sum() == 0


@pytest.mark.slow
def test_end_to_end_gradient():
    from zsbias import gradcheck

    result = gradcheck.check_end_to_end(np.random.default_rng(1))
    assert result.max_rel_error < 1e-4
    assert result.skipped < 0.1 * result.checked
