"""Noise models: densities, log-derivatives and the virtual-bid map."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from ctxbid.errors import ConvergenceError, SupportError
from ctxbid.noise import NoiseModel, cdf, noise_constants, pdf, virtual_phi, virtual_phi_inverse

W = 0.5
MODELS = {
    "gaussian": NoiseModel.gaussian(0.5, window=W),
    "logistic": NoiseModel.logistic(0.3, window=W),
    "laplace": NoiseModel.laplace(0.4, window=W),
    "uniform": NoiseModel.uniform(2.0, window=W),
}


def _normal_cdf(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


class TestExamples:
    def test_pdf_values(self):
        assert pdf(NoiseModel.gaussian(1.0), 0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), abs=1e-10)
        assert pdf(NoiseModel.uniform(2.0), 0.0) == pytest.approx(0.25)
        assert pdf(NoiseModel.laplace(1.0), 0.0) == pytest.approx(0.5)
        assert pdf(NoiseModel.uniform(2.0), 2.5) == 0.0

    def test_cdf_values(self):
        assert cdf(NoiseModel.gaussian(1.0), 0.0) == pytest.approx(0.5)
        assert cdf(NoiseModel.uniform(2.0), 2.0) == pytest.approx(1.0)
        assert cdf(NoiseModel.gaussian(2.0), 2.0) == pytest.approx(_normal_cdf(1.0), abs=1e-12)
        assert cdf(NoiseModel.gaussian(2.0), 2.0) == pytest.approx(0.8413447, abs=1e-7)

    def test_phi_values(self):
        assert virtual_phi(NoiseModel.gaussian(1.0), 0.0) == pytest.approx(0.5 * math.sqrt(2 * math.pi))
        assert virtual_phi(NoiseModel.uniform(0.5), 0.0) == pytest.approx(0.5)
        assert virtual_phi(NoiseModel.uniform(0.5), 0.25) == pytest.approx(1.0)

    def test_phi_inverse_values(self):
        tol = 1e-10
        assert virtual_phi_inverse(NoiseModel.uniform(0.5), 1.0, tol) == pytest.approx(0.25)
        g = NoiseModel.gaussian(1.0)
        y = float(g.phi(0.7))
        assert abs(virtual_phi_inverse(g, y, tol) - 0.7) <= 10 * tol
        assert abs(virtual_phi_inverse(g, 0.5 * math.sqrt(2 * math.pi), tol)) <= 10 * tol

    def test_uniform_phi_inverse_clamps(self):
        u = NoiseModel.uniform(0.5)
        np.testing.assert_allclose(u.phi_inverse(np.array([-5.0, 5.0])), [-0.5, 0.5])


class TestErrors:
    def test_phi_outside_uniform_support(self):
        with pytest.raises(SupportError):
            NoiseModel.uniform(0.5).phi(0.75)

    @pytest.mark.parametrize("halfwidth", [0.9, 1.5, 2.0])
    def test_uniform_must_contain_window(self, halfwidth):
        with pytest.raises(SupportError):
            NoiseModel.uniform(halfwidth, window=1.0)

    def test_bracket_failure(self):
        g = NoiseModel.gaussian(1.0)
        object.__setattr__(g, "phi", lambda x: np.full(np.shape(x), np.inf))
        with pytest.raises(ConvergenceError):
            g.phi_inverse(0.0)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            NoiseModel("cauchy", 1.0)


@pytest.mark.parametrize("name", list(MODELS))
class TestInvariants:
    def test_mean_zero(self, name):
        m = MODELS[name]
        lo, hi = m.support
        lo, hi = max(lo, -60 * m.scale), min(hi, 60 * m.scale)
        mean, _ = integrate.quad(lambda z: z * float(m.pdf(z)), lo, hi, points=[0.0], limit=200)
        assert abs(mean) <= 1e-6

    def test_log_concave(self, name):
        m = MODELS[name]
        z = np.linspace(-W, 1 + W, 2001)
        for fn in (m.logpdf, m.logcdf, m.logsf):
            v = fn(z)
            assert np.max(v[2:] - 2 * v[1:-1] + v[:-2]) <= 1e-9

    def test_log_derivatives_match_finite_differences(self, name):
        m = MODELS[name]
        z = np.linspace(-W, 1 + W, 37) + 1e-3
        h = 1e-6
        np.testing.assert_allclose(m.dlogcdf(z), (m.logcdf(z + h) - m.logcdf(z - h)) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(m.dlogsf(z), (m.logsf(z + h) - m.logsf(z - h)) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(m.d2logcdf(z), (m.dlogcdf(z + h) - m.dlogcdf(z - h)) / (2 * h), atol=1e-5)
        np.testing.assert_allclose(m.pdf_derivative(z), (m.pdf(z + h) - m.pdf(z - h)) / (2 * h), atol=1e-6)

    def test_phi_roundtrip(self, name):
        m = MODELS[name]
        x = np.random.default_rng(1).uniform(-W, 1 + W, 200)
        assert np.abs(m.phi_inverse(m.phi(x)) - x).max() <= 1e-9

    def test_phi_increasing(self, name):
        m = MODELS[name]
        x = np.linspace(-W, 1 + W, 500)
        assert np.all(np.diff(m.phi(x)) > 0)

    def test_inverse_derivative_in_unit_interval(self, name):
        """Weakly in (0, 1]; equality holds where log f is linear (Laplace left tail)."""
        m = MODELS[name]
        y = m.phi(np.linspace(-W + 0.01, 1 + W - 0.01, 200))
        h = 1e-5
        deriv = (m.phi_inverse(y + h) - m.phi_inverse(y - h)) / (2 * h)
        assert np.all(deriv > 0)
        assert np.all(deriv <= 1 + 1e-4)
        if name != "laplace":
            assert np.all(deriv < 1)

    def test_constants_bound_grid(self, name):
        m = MODELS[name]
        c = noise_constants(m)
        z = np.linspace(-W, 1 + W, int(round((1 + 2 * W) / 1e-3)) + 1)
        assert np.all(np.abs(m.dlogcdf(z)) <= c.h_W) and np.all(np.abs(m.dlogsf(z)) <= c.h_W)
        assert np.all(-m.d2logcdf(z) >= c.ell_W) and np.all(-m.d2logsf(z) >= c.ell_W)
        f = m.pdf(z)
        assert 0 < c.B1 <= f.min() and f.max() <= c.B2
        assert c.curvature == pytest.approx(2 * c.B2 + c.B3)


def test_laplace_has_zero_curvature_floor():
    """log F is linear left of zero, so the lower curvature constant vanishes."""
    assert noise_constants(MODELS["laplace"]).ell_W == 0.0
    assert noise_constants(MODELS["gaussian"]).ell_W > 0.0


def test_laplace_inverse_slope_is_one_left_of_mode():
    m = NoiseModel.laplace(0.4)
    x = np.linspace(-1.0, -0.1, 10)
    np.testing.assert_allclose(m.phi(x), x + 0.4)


@settings(max_examples=100, deadline=None)
@given(
    kind=st.sampled_from(["gaussian", "logistic", "laplace"]),
    scale=st.floats(0.05, 3.0),
    x=st.floats(-1.5, 2.5),
)
def test_phi_roundtrip_property(kind, scale, x):
    m = NoiseModel(kind, scale)
    assert abs(m.phi_inverse(m.phi(x)) - x) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(kind=st.sampled_from(["gaussian", "logistic", "laplace", "uniform"]), scale=st.floats(0.1, 3.0))
def test_dict_roundtrip(kind, scale):
    m = NoiseModel(kind, scale)
    assert NoiseModel.from_dict(m.to_dict()) == m


def test_sampling_matches_cdf():
    rng = np.random.default_rng(0)
    for m in MODELS.values():
        z = np.sort(m.sample(rng, 20000))
        emp = np.arange(1, z.size + 1) / z.size
        assert np.abs(emp - m.cdf(z)).max() < 0.015
