import math

import numpy as np
import pytest
from oracles import convergence_order

from wavefm.errors import ConfigError, NonFiniteState
from wavefm.flows import FlowSpec
from wavefm.neural import ModelConfig, VelocityModel, param_digest
from wavefm.sampler import SamplerConfig, initial_noise, integrate, integrate_field, sample_batch

X0 = np.random.default_rng(0).normal(size=(8, 2, 2, 2))


def exp_field(x, t):
    return x


def endpoint_error(steps, solver):
    x = integrate_field(exp_field, X0, steps, solver)
    return np.linalg.norm(x - math.e * X0) / np.linalg.norm(math.e * X0)


@pytest.mark.parametrize("solver", ["euler", "rk4"])
@pytest.mark.parametrize("steps", [1, 3, 10])
def test_constant_field_exact(solver, steps):
    c = np.linspace(-1, 1, X0.size).reshape(X0.shape)
    x = integrate_field(lambda x, t: c, X0, steps, solver)
    assert np.allclose(x, X0 + c, atol=1e-14)


def test_time_grid_is_left_endpoint():
    seen = []
    integrate_field(lambda x, t: seen.append(t) or np.zeros_like(x), X0, 4, "euler")
    assert seen == [0.0, 0.25, 0.5, 0.75]
    seen.clear()
    integrate_field(lambda x, t: seen.append(t) or np.zeros_like(x), X0, 2, "rk4")
    assert seen == [0.0, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 1.0]


def test_rk4_ten_steps():
    assert endpoint_error(10, "rk4") < 1e-5


def test_halving_step_ratios():
    e = [endpoint_error(n, "euler") for n in (20, 40)]
    r = [endpoint_error(n, "rk4") for n in (20, 40)]
    assert 1.8 < e[0] / e[1] < 2.2
    assert 14 < r[0] / r[1] < 18


def test_convergence_orders():
    steps = [5, 10, 20, 40]
    eo = convergence_order([endpoint_error(n, "euler") for n in steps], steps)
    ro = convergence_order([endpoint_error(n, "rk4") for n in steps], steps)
    assert 0.7 <= eo <= 1.3
    assert 3.7 <= ro <= 4.3


def test_non_finite_state():
    with pytest.raises(NonFiniteState):
        integrate_field(lambda x, t: np.full_like(x, np.inf), X0, 2, "euler")


def test_bad_config():
    with pytest.raises(ConfigError):
        SamplerConfig(steps=0)
    with pytest.raises(ConfigError):
        integrate_field(exp_field, X0, 3, "heun")


def test_initial_noise_streams():
    a = initial_noise((4, 4, 4), 0, 0)
    assert a.shape == (8, 2, 2, 2)
    assert np.array_equal(a, initial_noise((4, 4, 4), 0, 0))
    assert not np.array_equal(a, initial_noise((4, 4, 4), 0, 1))


def model_with_output():
    m = VelocityModel.init(ModelConfig(d_model=8, d_cond=8, d_hidden=8, n_freqs=4), seed=1)
    m.params["proj_out.w"] = np.random.default_rng(2).normal(0, 0.1, m.params["proj_out.w"].shape)
    return m


def test_integrate_deterministic_and_pure():
    m = model_with_output()
    digest = param_digest(m)
    cfg = SamplerConfig(steps=3, solver="rk4", seed=4, condition={"condition": 0.4})
    a = integrate(m, FlowSpec("rfm"), cfg, (8, 8, 8))
    b = integrate(m, FlowSpec("rfm"), cfg, (8, 8, 8))
    assert a.dims == (8, 8, 8)
    assert a.data.tobytes() == b.data.tobytes()
    assert param_digest(m) == digest


def test_batch_split_invariance():
    m = model_with_output()
    conds = [{"condition": c} for c in (0.1, 0.5, 0.9)]
    whole = sample_batch(m, conds, (4, 4, 4), 2, seed=3)
    tail = sample_batch(m, conds[1:], (4, 4, 4), 2, seed=3, first_index=1)
    assert np.allclose(whole[1].data, tail[0].data, atol=1e-6)
    assert np.allclose(whole[2].data, tail[1].data, atol=1e-6)


def test_zero_model_returns_idwt_of_noise():
    m = VelocityModel(ModelConfig())
    v = sample_batch(m, [{"condition": 0.5}], (4, 4, 4), 5, seed=9)[0]
    from wavefm.wavelet import idwt3_array
    assert np.allclose(v.data, idwt3_array(initial_noise((4, 4, 4), 9, 0)), atol=1e-6)
