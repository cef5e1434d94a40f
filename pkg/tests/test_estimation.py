import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from micselect.core import Dataset, gic
from micselect.estimation import (AdamConfig, BfgsConfig, ConstraintMap, FitConfig, InitializationError,
                                  bfgs_minimize, constraint_map, default_init, fit, mgice_adam, mgice_bfgs,
                                  pad_params)
from micselect.experiments import DEFAULT_TRUTH
from micselect.models import (ArBakerModel, BakerModel, GaussianLocationModel, PolyBakerModel, VonMisesModel,
                              build_family)
from micselect.simulation import RngStream, sample_baker, sample_vonmises2, simulate_ar_baker, simulate_poly_baker

DATA123 = Dataset.unconditional([1.0, 2.0, 3.0])


@settings(max_examples=30)
@given(v=st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=6))
def test_constraint_map_round_trip(v):
    cmap = ConstraintMap(("log",) * len(v))
    back = cmap.from_internal(cmap.to_internal(v))
    assert np.allclose(back, v, rtol=1e-12, atol=0)


def test_constraint_map_reports_wrapped_angles():
    cmap = ConstraintMap(("identity", "angle"))
    assert cmap.report([1.0, -0.5])[1] == pytest.approx(2 * np.pi - 0.5)


def test_constraint_map_rejects_unknown_tag():
    with pytest.raises(ValueError):
        ConstraintMap(("sqrt",))


def test_adam_gaussian_mean():
    res = mgice_adam(DATA123, GaussianLocationModel(), [0.0])
    assert res.params_hat[0] == pytest.approx(2.0, abs=1e-4)
    assert res.converged and res.optimizer == "adam"


def test_adam_zero_budget_returns_init():
    res = mgice_adam(DATA123, GaussianLocationModel(), [0.5], AdamConfig(max_iter=0))
    assert res.params_hat[0] == 0.5 and not res.converged


def test_adam_never_worse_than_init():
    y = sample_baker(400, DEFAULT_TRUTH["baker_fit"], RngStream(3, 0))
    data = Dataset.unconditional(y)
    init = default_init(data, BakerModel())
    res = mgice_adam(data, BakerModel(), init, AdamConfig(max_iter=50))
    assert res.gic_at_opt.value >= gic(data, BakerModel(), init).value


def test_bfgs_gaussian_mean():
    res = mgice_bfgs(DATA123, GaussianLocationModel(), [0.0])
    assert res.params_hat[0] == pytest.approx(2.0, abs=1e-8)
    assert res.converged and res.optimizer == "bfgs"


def test_bfgs_quadratic_iterations():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])

    def fun(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b

    x, _, it, conv, _ = bfgs_minimize(fun, np.zeros(2), grad_tol=1e-10)
    assert conv and it <= 2 + 2
    assert np.allclose(x, np.linalg.solve(A, b))


def test_init_error_on_nonfinite_objective():
    class Bad(GaussianLocationModel):
        def scores(self, batch, params):
            g, lap = super().scores(batch, params)
            return g, lap * np.inf

    with pytest.raises(InitializationError):
        mgice_bfgs(DATA123, Bad(), [0.0])
    with pytest.raises(InitializationError):
        mgice_adam(DATA123, Bad(), [0.0])


def test_reparameterization_neutrality():
    data = Dataset.unconditional(np.random.default_rng(2).normal(5.0, 1.0, 200))
    a = mgice_bfgs(data, GaussianLocationModel(constraint="identity"), [1.0])
    b = mgice_bfgs(data, GaussianLocationModel(constraint="log"), [1.0])
    assert a.params_hat[0] == pytest.approx(b.params_hat[0], abs=1e-6)
    assert a.params_hat[0] == pytest.approx(data.observations.mean(), abs=1e-6)


def test_fit_is_deterministic():
    truth = DEFAULT_TRUTH["ar_select"]
    data = simulate_ar_baker(800, truth, RngStream(9, 0))
    m = ArBakerModel(3)
    r1, r2 = fit(data, m, truncation_l=3), fit(data, m, truncation_l=3)
    assert np.array_equal(r1.params_hat, r2.params_hat)
    assert r1.gic_at_opt == r2.gic_at_opt and r1.iterations == r2.iterations


def test_gic_at_opt_evaluated_at_params_hat():
    data = Dataset.unconditional(sample_baker(1000, DEFAULT_TRUTH["baker_fit"], RngStream(4, 0)))
    res = fit(data, BakerModel())
    assert res.gic_at_opt.value == pytest.approx(gic(data, BakerModel(), res.params_hat).value, rel=1e-10)


def test_reported_params_satisfy_invariants():
    data = sample_vonmises2(300, DEFAULT_TRUTH["vonmises_select"], RngStream(0, 3))
    res = fit(data, VonMisesModel("m2"))
    k1, k2, m1, m2, _ = res.params_hat
    assert k1 >= 0 and k2 >= 0
    assert 0 <= m1 < 2 * np.pi and 0 <= m2 < 2 * np.pi


def test_default_init_baker():
    y = np.array([0.3 - 0.5, 0.3, 0.3 + 0.5])
    init = default_init(Dataset.unconditional(y), BakerModel())
    assert np.allclose(init, [0.3, 0.5, 0.25, 1.0])


def test_default_init_vonmises():
    data = Dataset.unconditional(np.zeros((3, 2)))
    init = default_init(data, VonMisesModel("m2"))
    assert np.array_equal(init, [1e-3, 1e-3, 0.0, 0.0, 0.0])


def test_default_init_ar_white_noise():
    x = np.random.default_rng(8).normal(size=2000)
    init = default_init(Dataset.timeseries(x), ArBakerModel(1))
    assert abs(init[0]) < 0.1
    assert init[-2:].tolist() == [0.25, 1.0]


def test_default_init_poly_recovers_coefficients():
    truth = DEFAULT_TRUTH["poly_select"]
    data = simulate_poly_baker(2000, truth, RngStream(1, 0))
    init = default_init(data, PolyBakerModel(3))
    assert np.allclose(init[:4], [-1.5, 2.0, 5.0, 3.0], atol=0.1)


def test_default_init_zero_variance():
    with pytest.raises(InitializationError):
        default_init(Dataset.unconditional(np.ones(10)), BakerModel())


def test_pad_params_inserts_zero_coefficients():
    data = simulate_ar_baker(500, DEFAULT_TRUTH["ar_select"], RngStream(2, 0))
    r1 = fit(data, ArBakerModel(1), truncation_l=2)
    padded = pad_params(r1, ArBakerModel(2))
    assert padded[1] == 0.0 and padded[0] == r1.params_hat[0]
    assert np.array_equal(padded[2:], r1.params_hat[1:])


def test_poly_preconditioning_leaves_optimum():
    data = simulate_poly_baker(600, DEFAULT_TRUTH["poly_select"], RngStream(5, 0))
    m = PolyBakerModel(3)
    a = fit(data, m, config=FitConfig(precondition=True))
    b = fit(data, m, config=FitConfig(precondition=False, bfgs=BfgsConfig(max_iter=5000)))
    if a.converged and b.converged:
        assert a.gic_at_opt.value == pytest.approx(b.gic_at_opt.value, rel=1e-6)
    assert constraint_map(m, data).linear is not None


def test_fit_config_round_trip():
    cfg = FitConfig(optimizer="adam", adam=AdamConfig(lr=0.05), init_k=2.0)
    assert FitConfig.from_dict(cfg.as_dict()) == cfg
    with pytest.raises(ValueError):
        fit(DATA123, GaussianLocationModel(), [0.0], FitConfig(optimizer="newton"))


def test_boundary_collapse_is_not_converged():
    # a three-point sample lets a Baker fit drive the scale to zero
    data = Dataset.unconditional([0.0, 0.0, 0.0, 1.0])
    res = fit(data, build_family("baker"), [0.0, 0.5, 0.25, 1.0])
    assert not res.converged
