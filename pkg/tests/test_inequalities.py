import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from neumann_spectra.discrete_operator import assemble
from neumann_spectra.geometry import CuspDomain, cell_distances, rasterize, unit_interval, unit_square
from neumann_spectra.inequalities import (
    OpenInterval,
    classify_growth,
    estimate_hardy_constant,
    estimate_sobolev_constant,
    example6_membership,
    example6_norm_growth,
    hardy_probe,
    hardy_to_sobolev_exponent,
    interpolation_exponents,
    refinement_study,
    sharp_cusp_exponent,
    sobolev_to_hardy_exponent,
    verify_corollary2,
)


class TestExponentMaps:
    def test_hardy_to_sobolev_n3(self):
        assert hardy_to_sobolev_exponent(1.0, 3, 2) == pytest.approx(3.0)

    def test_hardy_to_sobolev_interval_case(self):
        iv = hardy_to_sobolev_exponent(0.5, 2, 2)
        assert iv == OpenInterval(2.0, 3.0)
        assert 2.5 in iv and 3.0 not in iv

    def test_small_alpha_limit(self):
        assert hardy_to_sobolev_exponent(1e-12, 3, 2) == pytest.approx(6.0)

    def test_sobolev_to_hardy(self):
        assert sobolev_to_hardy_exponent(1, 2, 6) == pytest.approx(1 / 3)
        assert sobolev_to_hardy_exponent(0.5, 2, 4) == pytest.approx(0.125)
        assert sobolev_to_hardy_exponent(1, 2, 2 + 1e-12) == pytest.approx(0, abs=1e-11)

    @given(st.floats(0.01, 5), st.integers(1, 6), st.floats(1, 4), st.floats(1.01, 5))
    def test_interpolation_identity(self, alpha, N, p, ratio):
        out = interpolation_exponents(alpha, N, p, r=p * ratio)
        assert out["identity_residual"] <= 1e-12 * max(1.0, 1 / out["q"])
        assert 0 < out["lambda"] < 1

    def test_sharp_exponent(self):
        assert sharp_cusp_exponent(0.5, 2) == pytest.approx(6.0)

    def test_membership_thresholds(self):
        assert example6_membership(0.5, 2, 0.0, 9.0) == (True, True)
        assert example6_membership(0.5, 2, 0.45, 6) == (True, True)
        assert example6_membership(0.5, 2, 0.45, 7) == (True, False)
        # exact thresholds delta < 1/2 and delta < 3/q
        assert example6_membership(0.5, 2, 0.5, 4) == (False, True)
        assert example6_membership(0.5, 2, 0.75, 4)[1] is False
        assert example6_membership(0.5, 2, 0.7499, 4)[1] is True

    @pytest.mark.parametrize("delta,q", [(0.4, 6), (0.45, 7), (0.3, 12)])
    def test_membership_against_quadrature(self, delta, q):
        # |x^-delta|^q over the cusp: int_a^1 2 x^(2 - delta q) dx with x = e^-u,
        # bounded as a -> 0 exactly when the truncated integrals stop growing
        vals = [
            integrate.quad(lambda u: 2 * math.exp(-(3 - delta * q) * u), 0, U, limit=400)[0]
            for U in (20.0, 40.0)
        ]
        finite = vals[1] < 1.01 * vals[0]
        assert example6_membership(0.5, 2, delta, q)[1] == finite

    def test_norm_growth_table(self):
        out = example6_norm_growth(0.5, 2, 0.45, 7, [1 / 32, 1 / 64])
        lq = [r["Lq"] for r in out["rows"]]
        assert lq[1] > lq[0]


class TestSobolev:
    def test_constant_start_value(self):
        op = assemble(rasterize(unit_square(), 1 / 16))
        est = estimate_sobolev_constant(op, 4, restarts=0)
        assert est.restarts[0]["initial"] == pytest.approx(op.measure ** (1 / 4 - 1 / 2))
        assert est.value >= est.restarts[0]["initial"]

    def test_ascent_monotone_each_restart(self):
        op = assemble(rasterize(unit_square(), 1 / 16))
        est = estimate_sobolev_constant(op, 4, restarts=2)
        assert all(r["value"] >= r["initial"] for r in est.restarts)

    @given(st.integers(0, 10_000))
    def test_restart_stability(self, seed):
        op = assemble(rasterize(unit_square(), 1 / 16))
        a = estimate_sobolev_constant(op, 4, restarts=3, seed=0).value
        b = estimate_sobolev_constant(op, 4, restarts=3, seed=seed).value
        assert b == pytest.approx(a, rel=0.01)

    def test_square_q4_stable(self):
        st_ = refinement_study(
            unit_square(), [1 / 16, 1 / 32, 1 / 64],
            lambda op: estimate_sobolev_constant(op, 4).value,
        )
        assert st_.verdict == "stable"

    def test_q_limits(self):
        op = assemble(rasterize(unit_square(), 1 / 8))
        with pytest.raises(ValueError):
            estimate_sobolev_constant(op, 2.0)
        with pytest.raises(ValueError):
            estimate_sobolev_constant(op, 11.0)

    def test_classify(self):
        assert classify_growth([1, 1.01, 1.02])[0] == "stable"
        assert classify_growth([1, 2, 4])[0] == "divergent"
        assert classify_growth([1, 1.2, 1.3])[0] == "inconclusive"
        assert classify_growth([1, 1.0])[0] == "inconclusive"


class TestHardy:
    def test_interval_integral_oracle(self):
        for h in (1 / 100, 1 / 400):
            op = assemble(rasterize(unit_interval(), h))
            _, integral = hardy_probe(op, cell_distances(op.raster), 0.25)
            assert integral == pytest.approx(2 * math.sqrt(2), rel=0.05)

    def test_probe_identity(self):
        op = assemble(rasterize(unit_square(), 1 / 32))
        d = cell_distances(op.raster)
        probe, integral = hardy_probe(op, d, 0.3)
        assert probe == pytest.approx(math.sqrt(np.sum(op.mass * d**-0.6)) / math.sqrt(op.measure), rel=1e-14)
        assert integral == pytest.approx(np.sum(op.mass * d**-0.6), rel=1e-14)

    def test_interval_stable(self):
        st_ = refinement_study(
            unit_interval(), [1 / 100, 1 / 200, 1 / 400],
            lambda op: estimate_hardy_constant(op, alpha=0.25).value,
        )
        assert st_.verdict == "stable"

    def test_small_alpha(self):
        op = assemble(rasterize(unit_square(), 1 / 16))
        est = estimate_hardy_constant(op, alpha=1e-9)
        assert est.value <= 1 + 1e-6

    def test_square_alpha_04_stable(self):
        st_ = refinement_study(
            unit_square(), [1 / 16, 1 / 32, 1 / 64],
            lambda op: estimate_hardy_constant(op, alpha=0.4).value,
        )
        assert st_.verdict in ("stable", "inconclusive")
        assert st_.verdict != "divergent"

    def test_square_alpha_06_probe_grows(self):
        vals = []
        for h in (1 / 16, 1 / 32, 1 / 64):
            op = assemble(rasterize(unit_square(), h))
            vals.append(hardy_probe(op, cell_distances(op.raster), 0.6)[1])
        assert vals[2] > vals[1] > vals[0]

    def test_bad_alpha(self):
        op = assemble(rasterize(unit_square(), 1 / 8))
        with pytest.raises(ValueError):
            estimate_hardy_constant(op, alpha=0.0)


class TestCorollary2:
    def test_square_legs_positive(self):
        rep = verify_corollary2(unit_square(), 4)
        assert rep["legs"] == {"a": "pass", "b": "pass", "c": "pass"}
        assert rep["verdict"] == "pass"
        assert rep["minkowski"] < 2

    @pytest.mark.slow
    def test_cusp_q4(self):
        rep = verify_corollary2(CuspDomain(2, 0.5), 4, hs=(1 / 32, 1 / 64, 1 / 128))
        assert rep["legs"] == {"a": "pass", "b": "pass", "c": "pass"}
