import math

import numpy as np
import pytest
from scipy import integrate

from fkpp_particles import kernels as K


def quadrature_mass(func, support_radius, dim, nodes=256):
    """Tensor-grid quadrature oracle for the mass of a compact kernel."""
    pts, wts = np.polynomial.legendre.leggauss(nodes)
    half = support_radius
    pts, wts = half * pts, half * wts
    if dim == 1:
        return float(np.dot(wts, func(pts)))
    grids = np.meshgrid(*([pts] * dim), indexing="ij")
    x = np.stack([g.ravel() for g in grids], axis=-1)
    wg = np.meshgrid(*([wts] * dim), indexing="ij")
    w = np.prod(np.stack([g.ravel() for g in wg], axis=-1), axis=-1)
    return float(np.dot(w, func(x)))


class TestMollifiers:
    def test_default_bump_normalization_d1(self):
        # oracle: integral of (1-x^2)^2 over [-1,1] is 16/15
        val, _ = integrate.quad(lambda x: (1 - x * x) ** 2, -1, 1)
        assert val == pytest.approx(16.0 / 15.0, rel=1e-12)
        spec = K.MollifierSpec(1)
        assert spec.norm_const == pytest.approx(15.0 / 16.0, rel=1e-10)
        assert spec(0.0) == pytest.approx(0.9375, abs=1e-12)

    @pytest.mark.parametrize("eps", [1.0, 0.5, 0.1, 0.01])
    def test_rescaled_peak(self, eps):
        rk = K.RescaledKernel(K.MollifierSpec(1), eps)
        assert rk(0.0) == pytest.approx(0.9375 / eps, rel=1e-12)
        assert rk.peak == pytest.approx(0.9375 / eps, rel=1e-12)

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_outside_support_is_zero(self, dim):
        rk = K.RescaledKernel(K.MollifierSpec(dim), 0.25)
        x = np.zeros(dim)
        x[0] = 2.0 * rk.support_radius
        assert rk(x[None, :]) == 0.0

    @pytest.mark.parametrize("dim", [1, 2])
    @pytest.mark.parametrize("eps", [1.0, 0.3, 0.1])
    def test_rescaled_mass_one(self, dim, eps):
        rk = K.RescaledKernel(K.MollifierSpec(dim), eps)
        mass = quadrature_mass(rk, rk.support_radius, dim)
        assert mass == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("dim", [1, 2])
    @pytest.mark.parametrize("delta", [0.5, 0.1, 0.02])
    def test_smoothing_bump_mass_one(self, dim, delta):
        bump = K.SmoothingBump(dim, delta)
        mass = quadrature_mass(bump, bump.support_radius, dim)
        assert mass == pytest.approx(1.0, abs=1e-6)

    def test_smoothing_bump_sup_norm_d1(self):
        # (1-x^2)^3 normalizer: Gamma(4.5) / (sqrt(pi) 3!) = 35/32
        bump = K.SmoothingBump(1, 0.1)
        assert bump.base_sup_norm == pytest.approx(35.0 / 32.0, rel=1e-10)
        assert bump.sup_norm == pytest.approx(10.0 * 35.0 / 32.0, rel=1e-10)

    def test_bad_scale_rejected(self):
        with pytest.raises(ValueError):
            K.RescaledKernel(K.MollifierSpec(1), 0.0)
        with pytest.raises(ValueError):
            K.RescaledKernel(K.MollifierSpec(1), -0.2)
        with pytest.raises(ValueError):
            K.SmoothingBump(1, 0.0)


class TestHeatKernel:
    def test_point_value(self):
        assert K.heat_kernel(1.0, 0.0, 1) == pytest.approx((4 * math.pi) ** -0.5, rel=1e-12)

    def test_symmetry(self):
        x = np.array([[0.3, -0.7], [-0.3, 0.7]])
        vals = K.heat_kernel(0.8, x, 2)
        assert vals[0] == pytest.approx(vals[1], rel=1e-14)

    def test_unit_mass(self):
        t = 0.5
        val, _ = integrate.quad(lambda x: K.heat_kernel(t, x, 1), -np.inf, np.inf)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_nonpositive_time_rejected(self):
        with pytest.raises(ValueError):
            K.heat_kernel(0.0, 0.0, 1)
        with pytest.raises(ValueError):
            K.heat_kernel(-1.0, 0.0, 1)


class TestIntegratedKernel:
    def test_closed_form_d1_origin(self):
        # closed form sqrt(t/pi) against the adaptive quadrature oracle
        assert K.integrated_heat_kernel(1.0, 0.0, 1) == pytest.approx(1 / math.sqrt(math.pi), abs=1e-12)
        assert K.integrated_heat_kernel_quad(1.0, 0.0, 1) == pytest.approx(1 / math.sqrt(math.pi), abs=1e-8)

    def test_large_time_newtonian_limit_d3(self):
        x = np.array([1.0, 0.0, 0.0])
        val = K.integrated_heat_kernel(1e6, x[None, :], 3).item()
        oracle = K.integrated_heat_kernel_quad(1e6, x, 3)
        assert val == pytest.approx(oracle, rel=1e-9)
        assert val == pytest.approx(1.0 / (4 * math.pi), rel=1e-3)

    @pytest.mark.parametrize("dim,point", [(1, 0.7), (2, [0.4, 0.1]), (3, [0.2, 0.2, 0.1])])
    def test_matches_quadrature_oracle(self, dim, point):
        x = np.atleast_1d(np.asarray(point, dtype=float))
        val = K.integrated_heat_kernel(0.8, x[None, :] if dim > 1 else x, dim).item()
        assert val == pytest.approx(K.integrated_heat_kernel_quad(0.8, x, dim), rel=1e-9)

    def test_zero_time(self):
        assert K.integrated_heat_kernel(0.0, 0.3, 1) == 0.0
        assert K.integrated_heat_kernel_quad(0.0, np.array([0.3, 0.1]), 2) == 0.0

    def test_monotone_in_time(self):
        ts = [0.1, 0.5, 1.0, 2.0]
        vals = [K.integrated_heat_kernel(t, np.array([[0.3, 0.0]]), 2).item() for t in ts]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_origin_rejected_above_d1(self):
        with pytest.raises(ValueError):
            K.integrated_heat_kernel(1.0, np.array([[0.0, 0.0]]), 2)

    def test_gradient_matches_finite_difference(self):
        h = 1e-6
        for dim, point in ((1, [0.4]), (3, [0.3, -0.2, 0.5])):
            x = np.asarray(point, dtype=float)
            g = K.grad_integrated_heat_kernel(0.7, x[None, :], dim)[0]
            for axis in range(dim):
                e = np.zeros(dim)
                e[axis] = h
                fd = (K.integrated_heat_kernel(0.7, (x + e)[None, :], dim)
                      - K.integrated_heat_kernel(0.7, (x - e)[None, :], dim)) / (2 * h)
                assert g[axis] == pytest.approx(fd.item(), rel=1e-5, abs=1e-8)


@pytest.fixture(scope="module")
def aux_d1():
    return K.AuxiliaryKernel(1.0, K.RescaledKernel(K.MollifierSpec(1), 0.1))


class TestAuxiliaryKernel:

    def test_terminal_condition(self, aux_d1):
        vals = aux_d1.value(1.0, np.array([0.0, 0.05, 0.4, 2.0]))
        assert np.all(vals == 0.0)
        assert np.all(aux_d1.gradient(1.0, np.array([0.0, 0.4])) == 0.0)

    def test_nonnegative_and_nonincreasing_in_time(self, aux_d1):
        for x in (0.0, 0.08, 0.5, 1.5):
            vals = [float(aux_d1.value(t, x)) for t in (0.0, 0.25, 0.5, 0.75, 1.0)]
            assert all(v >= 0.0 for v in vals)
            assert all(a >= b - 1e-14 for a, b in zip(vals, vals[1:]))

    def test_pde_residual_small(self, aux_d1):
        # independent oracle: central finite differences on the backward
        # heat equation with mollifier source
        ht = hx = 1e-4
        scale = aux_d1.kernel.peak
        for t in (0.2, 0.5, 0.8):
            for x in (0.0, 0.05, 0.15, 0.5, 1.0):
                rt = (aux_d1.value(t + ht, x) - aux_d1.value(t - ht, x)) / (2 * ht)
                rxx = (aux_d1.value(t, x + hx) - 2 * aux_d1.value(t, x)
                       + aux_d1.value(t, x - hx)) / hx ** 2
                resid = rt + rxx + aux_d1.kernel(x).item()
                assert abs(resid) / scale < 1e-3

    def test_gradient_matches_finite_difference(self, aux_d1):
        h = 1e-6
        for x in (0.05, 0.3, 0.8):
            g = aux_d1.gradient(0.4, np.array([x]))[0, 0]
            fd = (aux_d1.value(0.4, x + h) - aux_d1.value(0.4, x - h)) / (2 * h)
            assert g == pytest.approx(float(fd), rel=1e-4, abs=1e-9)

    def test_radial_symmetry_d2(self):
        aux = K.AuxiliaryKernel(1.0, K.RescaledKernel(K.MollifierSpec(2), 0.1),
                                nodes_per_axis=24)
        r = 0.25
        pts = np.array([[r, 0.0], [0.0, r], [r / math.sqrt(2), r / math.sqrt(2)]])
        vals = aux.value(0.3, pts)
        assert vals[0] == pytest.approx(vals[1], rel=1e-10)
        assert vals[0] == pytest.approx(vals[2], rel=1e-6)

    def test_d3_near_field_scales_like_inverse_eps(self):
        # fitted constant for r^eps <= C / eps at |x| ~ 0 stays put when
        # eps is halved
        fitted = {}
        for eps in (0.01, 0.005):
            aux = K.AuxiliaryKernel(1.0, K.RescaledKernel(K.MollifierSpec(3), eps),
                                    nodes_per_axis=16)
            vals = [aux.value(t, np.array([[0.001, 0.0, 0.0]])).item()
                    for t in (0.0, 0.45, 0.9)]
            fitted[eps] = max(vals) * eps
        assert 0.5 < fitted[0.005] / fitted[0.01] < 2.0

    def test_envelope_constants_stable_under_halving(self):
        # value branch for d in {2,3}; gradient branch for d in {1,3}.
        # The d=1 value branch is excluded: the kernel stays O(1) near
        # the origin, so a (|x| v eps)^{2-d} shape admits no eps-uniform
        # constant there.
        cases = ((2, "value", (0.02, 0.01), 24), (3, "value", (0.01, 0.005), 16),
                 (1, "gradient", (0.02, 0.01), 32), (3, "gradient", (0.01, 0.005), 16))
        for dim, which, epss, npa in cases:
            fitted = []
            for eps in epss:
                aux = K.AuxiliaryKernel(1.0, K.RescaledKernel(K.MollifierSpec(dim), eps),
                                        nodes_per_axis=npa)
                pts = []
                for rr in (1e-3, eps / 2, eps, 2 * eps, 0.1, 0.5):
                    x = np.zeros(dim)
                    x[0] = rr
                    pts.append(x)
                pts = np.asarray(pts)
                ratios = []
                for t in (0.0, 0.5, 0.9):
                    if which == "value":
                        v = aux.value(t, pts)
                    else:
                        v = np.linalg.norm(aux.gradient(t, pts), axis=-1)
                    ratios.append(float(np.max(v / K.bound_envelope(dim, eps, pts, which))))
                fitted.append(max(ratios))
            assert 0.5 < fitted[1] / fitted[0] < 2.0, (dim, which, fitted)

    def test_time_outside_horizon_rejected(self, aux_d1):
        with pytest.raises(ValueError):
            aux_d1.value(1.2, 0.0)
        with pytest.raises(ValueError):
            aux_d1.value(-0.1, 0.0)


class TestBoundEnvelope:
    def test_d2_log_branch(self):
        val = K.bound_envelope(2, 0.1, np.array([[0.0, 0.0]]), "value").item()
        assert val == pytest.approx(abs(math.log(0.1)), rel=1e-12)

    def test_d1_value_formula(self):
        val = K.bound_envelope(1, 0.1, 0.5, "value").item()
        assert val == pytest.approx(0.5, rel=1e-12)

    def test_d3_gradient_formula(self):
        val = K.bound_envelope(3, 0.1, np.array([[0.01, 0.0, 0.0]]), "gradient").item()
        assert val == pytest.approx(100.0, rel=1e-12)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            K.bound_envelope(1, 0.0, 0.5)
        with pytest.raises(ValueError):
            K.bound_envelope(1, 0.1, 0.5, which="other")
