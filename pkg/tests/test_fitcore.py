import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from captune.errors import DidNotConverge, EmptyPointSet, NotConverged
from captune.fitcore import (
    CurveCoefficients,
    CurveFit,
    SimplexOptions,
    curve_value,
    curve_values,
    fit_cost_curve,
    locate_minimum,
    mean_squared_error,
    nelder_mead_minimize,
    sigmoid,
)


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_extreme_positive_no_overflow(self):
        assert sigmoid(1000.0) == 1.0

    def test_extreme_negative_no_overflow(self):
        value = sigmoid(-1000.0)
        assert math.isfinite(value)
        assert value == pytest.approx(0.0, abs=1e-300)

    @given(x=st.floats(min_value=-50, max_value=50, allow_nan=False))
    def test_symmetry_identity(self, x):
        assert sigmoid(-x) == pytest.approx(1.0 - sigmoid(x), abs=1e-12)

    @given(x=st.floats(min_value=-700, max_value=700, allow_nan=False))
    def test_bounded(self, x):
        assert 0.0 <= sigmoid(x) <= 1.0


class TestCurveValue:
    def test_constant_offset_only(self):
        coeffs = CurveCoefficients(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 5.0)
        for x in np.linspace(0, 1, 11):
            assert curve_value(coeffs, float(x)) == pytest.approx(5.0)

    def test_unit_exponential_flat(self):
        coeffs = CurveCoefficients(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
        for x in np.linspace(0, 1, 11):
            assert curve_value(coeffs, float(x)) == pytest.approx(1.0)

    def test_matches_direct_arithmetic(self):
        coeffs = CurveCoefficients(1.3, -2.1, 0.4, 2.7, 6.0, 3.1, 0.9)
        x = 0.5
        expected = (
            1.3 * math.exp(-2.1 * x - 0.4)
            + 2.7 * (1.0 / (1.0 + math.exp(-(6.0 * x - 3.1))))
            + 0.9
        )
        assert curve_value(coeffs, x) == pytest.approx(expected, abs=1e-12)

    def test_overflow_guarded(self):
        coeffs = CurveCoefficients(1.0, 2000.0, 0.0, 0.0, 1.0, 0.0, 0.0)
        assert math.isfinite(curve_value(coeffs, 1.0))

    def test_reduces_to_shifted_exponential_when_d_zero(self):
        coeffs = CurveCoefficients(2.0, -1.5, 0.3, 0.0, 7.0, 2.0, 1.1)
        for x in np.linspace(0, 1, 7):
            assert curve_value(coeffs, float(x)) == pytest.approx(
                2.0 * math.exp(-1.5 * x - 0.3) + 1.1, rel=1e-12
            )

    def test_reduces_to_shifted_sigmoid_when_a_zero(self):
        coeffs = CurveCoefficients(0.0, 3.0, 1.0, 4.0, 8.0, 4.0, -0.5)
        for x in np.linspace(0, 1, 7):
            assert curve_value(coeffs, float(x)) == pytest.approx(
                4.0 * sigmoid(8.0 * x - 4.0) - 0.5, rel=1e-12
            )

    def test_vectorised_matches_scalar(self):
        coeffs = CurveCoefficients(0.8, -3.0, 0.2, 1.5, 9.0, 5.0, 2.0)
        xs = np.linspace(0, 1, 23)
        vec = curve_values(coeffs, xs)
        for x, v in zip(xs, vec):
            assert v == pytest.approx(curve_value(coeffs, float(x)), rel=1e-12)


class TestMse:
    def test_exact_points_give_zero(self):
        coeffs = CurveCoefficients(1.0, -2.0, 0.0, 2.0, 5.0, 2.5, 0.5)
        pts = [(x, curve_value(coeffs, x)) for x in np.linspace(0, 1, 8)]
        assert mean_squared_error(coeffs, pts) == pytest.approx(0.0, abs=1e-20)

    def test_constant_fit_equals_population_variance(self):
        rng = np.random.default_rng(1)
        ys = rng.uniform(0, 10, 40)
        coeffs = CurveCoefficients(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, float(np.mean(ys)))
        pts = [(float(x), float(y)) for x, y in zip(np.linspace(0, 1, 40), ys)]
        assert mean_squared_error(coeffs, pts) == pytest.approx(float(np.var(ys)), rel=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        coeffs = CurveCoefficients(1.1, -1.0, 0.1, 0.7, 6.0, 3.0, 0.2)
        pts = [(float(x), float(y)) for x, y in zip(rng.uniform(0, 1, 25), rng.uniform(0, 5, 25))]
        brute = sum((y - curve_value(coeffs, x)) ** 2 for x, y in pts) / len(pts)
        assert mean_squared_error(coeffs, pts) == pytest.approx(brute, rel=1e-12)

    def test_empty_point_set(self):
        coeffs = CurveCoefficients(0, 0, 0, 0, 1, 0, 0)
        with pytest.raises(EmptyPointSet):
            mean_squared_error(coeffs, [])

    @given(seed=st.integers(min_value=0, max_value=1000))
    @settings(max_examples=25)
    def test_never_negative(self, seed):
        rng = np.random.default_rng(seed)
        coeffs = CurveCoefficients(*rng.uniform(-3, 3, 7))
        pts = [(float(x), float(y)) for x, y in zip(rng.uniform(0, 1, 9), rng.uniform(-5, 5, 9))]
        assert mean_squared_error(coeffs, pts) >= 0.0


class TestNelderMead:
    def test_quadratic(self):
        x, fx = nelder_mead_minimize(lambda v: (v[0] - 2.0) ** 2, [0.0])
        assert abs(x[0] - 2.0) < 1e-6
        assert fx < 1e-10

    def test_rosenbrock(self):
        def rosen(v):
            return 100.0 * (v[1] - v[0] ** 2) ** 2 + (1.0 - v[0]) ** 2

        opts = SimplexOptions(max_iter=20000)
        x, fx = nelder_mead_minimize(rosen, [-1.2, 1.0], opts)
        assert np.allclose(x, [1.0, 1.0], atol=1e-3)

    def test_budget_exhaustion_carries_best(self):
        opts = SimplexOptions(max_iter=1)
        with pytest.raises(DidNotConverge) as excinfo:
            nelder_mead_minimize(lambda v: (v[0] - 3.0) ** 2 + 1.0, [0.0], opts)
        assert excinfo.value.best_x is not None
        assert excinfo.value.best_fx >= 1.0

    def test_never_worse_than_start(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            x0 = rng.uniform(-5, 5, 3)
            f = lambda v: float(np.sum(np.abs(v)) + np.sum(v**2))
            try:
                _, fx = nelder_mead_minimize(f, x0, SimplexOptions(max_iter=50))
            except DidNotConverge as exc:
                fx = exc.best_fx
            assert fx <= f(x0) + 1e-12


def u_shape_coeffs(rng) -> CurveCoefficients:
    """Random curve from the family the fit targets: falling exp + rising logistic."""
    return CurveCoefficients(
        a=float(rng.uniform(0.3, 2.0)),
        b=float(rng.uniform(-4.0, -0.8)),
        c=float(rng.uniform(-0.5, 0.5)),
        d=float(rng.uniform(0.5, 3.0)),
        e=float(rng.uniform(4.0, 9.0)),
        f=float(rng.uniform(2.0, 6.0)),
        g=float(rng.uniform(0.5, 3.0)),
    )


class TestFitCostCurve:
    def test_flat_points_short_circuit(self):
        pts = [(x, 7.5) for x in np.linspace(0.3, 1.0, 8)]
        fit = fit_cost_curve(pts)
        assert fit.converged
        assert fit.rel_error == 0.0
        for x in np.linspace(0.3, 1.0, 5):
            assert curve_value(fit.coeffs, float(x)) == pytest.approx(7.5)

    def test_empty_points(self):
        with pytest.raises(EmptyPointSet):
            fit_cost_curve([])

    def test_noiseless_recovery_single_case(self):
        rng = np.random.default_rng(123)
        true = u_shape_coeffs(rng)
        xs = [round(0.3 + 0.1 * i, 10) for i in range(8)]
        pts = [(x, curve_value(true, x)) for x in xs]
        fit = fit_cost_curve(pts)
        assert fit.converged
        assert fit.rel_error < 1e-4

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        true = u_shape_coeffs(rng)
        xs = [round(0.3 + 0.1 * i, 10) for i in range(8)]
        pts = [(x, curve_value(true, x) * (1 + 0.02 * math.sin(9 * x))) for x in xs]
        fit1 = fit_cost_curve(pts)
        fit2 = fit_cost_curve(pts)
        assert fit1.coeffs == fit2.coeffs
        assert fit1.rel_error == fit2.rel_error

    def test_exp_shift_bounded(self):
        rng = np.random.default_rng(17)
        true = u_shape_coeffs(rng)
        xs = [round(0.3 + 0.1 * i, 10) for i in range(8)]
        pts = [(x, curve_value(true, x)) for x in xs]
        fit = fit_cost_curve(pts)
        assert abs(fit.coeffs.c) <= 10.0


class TestLocateMinimum:
    def _fit_of(self, coeffs: CurveCoefficients) -> CurveFit:
        return CurveFit(coeffs=coeffs, rel_error=0.0, converged=True, n_points=8)

    def test_interior_minimum_matches_dense_grid(self):
        # Convex-ish curve with an interior dip.
        coeffs = CurveCoefficients(1.0, -6.0, 0.0, 2.0, 12.0, 8.4, 1.0)
        fit = self._fit_of(coeffs)
        got = locate_minimum(fit, 0.3, 1.0)
        grid = np.arange(0.3, 1.0 + 1e-12, 1e-4)
        oracle = float(grid[np.argmin(curve_values(coeffs, grid))])
        assert abs(got - oracle) < 1e-3

    def test_monotone_increasing_picks_lo(self):
        coeffs = CurveCoefficients(1.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0)
        assert locate_minimum(self._fit_of(coeffs), 0.3, 1.0) == pytest.approx(0.3)

    def test_monotone_decreasing_picks_hi(self):
        coeffs = CurveCoefficients(1.0, -2.0, 0.0, 0.0, 1.0, 0.0, 0.0)
        assert locate_minimum(self._fit_of(coeffs), 0.3, 1.0) == pytest.approx(1.0)

    def test_rejects_poor_fit(self):
        bad = CurveFit(
            coeffs=CurveCoefficients(0, 0, 0, 0, 1, 0, 0),
            rel_error=0.5,
            converged=False,
            n_points=8,
        )
        with pytest.raises(NotConverged):
            locate_minimum(bad, 0.3, 1.0)

    def test_result_clamped_to_range(self):
        coeffs = CurveCoefficients(1.0, -2.0, 0.0, 0.0, 1.0, 0.0, 0.0)
        got = locate_minimum(self._fit_of(coeffs), 0.4, 0.8)
        assert 0.4 <= got <= 0.8
