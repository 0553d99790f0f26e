import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neumann_spectra.discrete_operator import assemble
from neumann_spectra.eigensolver import lowest_eigenpairs
from neumann_spectra.geometry import (
    BoxDomain,
    CuspDomain,
    GraphDomain,
    RasterDomain,
    rasterize,
    sawtooth_domain,
    single_chart_atlas,
    square_atlas,
    unit_disc,
    unit_square,
)
from neumann_spectra.perturbation import (
    DeformationError,
    PerturbationError,
    box_neumann_eigenvalues,
    build_deformation,
    collar_removal,
    graph_shrink,
    jacobian_check,
    rasterize_on,
    restriction_map,
    stability_sweep,
    verify_corollary16,
    verify_deformation_inclusions,
    verify_theorem13,
)


def dumbbell(h=1 / 40):
    n = int(round(1 / h))
    mask = np.zeros((2 * n, n), bool)
    mask[: n // 2 + 2, :] = True
    mask[-(n // 2 + 2):, :] = True
    mask[:, n // 2 - 2: n // 2 + 2] = True  # corridor of width 4h
    return RasterDomain(mask, (0.0, 0.0), h)


class TestFamilies:
    def test_box_shrink(self):
        out = graph_shrink(unit_square(), 0.1)
        assert isinstance(out, BoxDomain)
        assert tuple(map(float, out.lo)) == (0.0, 0.0)
        assert tuple(map(float, out.hi)) == pytest.approx((1.0, 0.9))

    @given(st.floats(0.01, 0.4))
    def test_graph_shrink_inside(self, eps):
        d = sawtooth_domain()
        r1 = rasterize(d, 1 / 64)
        r2 = rasterize_on(graph_shrink(d, eps), r1)
        assert np.all(r1.mask[r2.mask])
        assert r2.ncells < r1.ncells

    def test_collar_square(self):
        r = collar_removal(rasterize(unit_square(), 1 / 100), 0.05)
        assert r.ncells == 90 * 90
        assert r.measure() == pytest.approx(0.81)

    def test_collar_disc(self):
        r = collar_removal(rasterize(unit_disc(), 1 / 100), 0.1)
        assert r.measure() == pytest.approx(math.pi * 0.81, rel=0.01)

    def test_collar_cusp_connected(self):
        r1 = rasterize(CuspDomain(2, 0.5), 1 / 128)
        r2 = collar_removal(r1, 0.02)
        assert 0 < r2.measure() < r1.measure()

    def test_collar_disconnects(self):
        with pytest.raises(PerturbationError, match="eps=0.06"):
            collar_removal(dumbbell(), 0.06)

    def test_collar_empties(self):
        with pytest.raises(PerturbationError):
            collar_removal(rasterize(unit_square(), 1 / 20), 0.6)

    @given(st.floats(0.01, 0.3))
    def test_shared_grid_containment(self, eps):
        r1 = rasterize(unit_disc(), 1 / 32)
        r2 = collar_removal(r1, eps)
        idx = restriction_map(assemble(r1), r2)
        assert len(np.unique(idx)) == r2.ncells
        assert np.all(r1.mask[r2.mask])

    def test_restriction_rejects_other_lattice(self):
        op = assemble(rasterize(unit_square(), 1 / 16))
        with pytest.raises(PerturbationError):
            restriction_map(op, rasterize(unit_square(), 1 / 8))


class TestDeformation:
    def test_identity_at_zero(self):
        d = build_deformation(square_atlas(), 0.0, unit_square())
        pts = rasterize(unit_square(), 1 / 50).cell_centers()
        assert np.array_equal(d(pts), pts)

    def test_single_chart_translation(self):
        g = GraphDomain((0.0,), (1.0,), "0.5", k_lo=0.5, k_hi=0.5)
        d = build_deformation(single_chart_atlas(g, 0.1), 0.02, g)
        pts = rasterize(g, 1 / 100).cell_centers()
        assert np.allclose(d(pts), pts - np.array([0.0, 0.02]), atol=1e-15)
        inc = verify_deformation_inclusions(d, g, h=0.0025)
        # strip of width eps under the graph: |G| eps
        assert inc["lost_measure"] == pytest.approx(0.02, abs=1e-12)

    def test_partition_of_unity(self):
        d = build_deformation(square_atlas(), 0.02, unit_square())
        assert d.checks["pou_residual"] <= 1e-9
        assert d.checks["injective"]
        assert d.checks["psi_range"][0] >= 0 and d.checks["psi_range"][1] <= 1 + 1e-12

    def test_eps_limit(self):
        with pytest.raises(DeformationError):
            build_deformation(square_atlas(), 0.05, unit_square())

    def test_jacobian_constants_stable(self):
        pts = np.random.default_rng(0).uniform(0, 1, (10_000, 2))
        rows = [
            jacobian_check(build_deformation(square_atlas(), e, unit_square()), pts)
            for e in (0.01, 0.02, 0.04)
        ]
        A1 = [r["A1"] for r in rows]
        assert max(A1) / min(A1) <= 1.3
        assert all(r["analytic_mismatch"] <= 1e-6 for r in rows)
        assert all(r["det_range"][0] > 0 for r in rows)

    @given(st.floats(0.0, 0.04))
    def test_inverse_roundtrip(self, eps):
        d = build_deformation(square_atlas(), eps, unit_square(), check=False)
        x = np.random.default_rng(1).uniform(0.01, 0.99, (200, 2))
        back, ok = d.inverse(d(x))
        assert ok.all()
        assert np.allclose(back, x, atol=1e-11)

    @pytest.mark.slow
    def test_inclusions_and_a5(self):
        a5 = []
        for e in (0.01, 0.02, 0.04):
            d = build_deformation(square_atlas(), e, unit_square())
            inc = verify_deformation_inclusions(d, unit_square())
            assert inc["inclusion_holds"]
            assert inc["A"] > 0
            a5.append(inc["A5"])
        assert max(a5) / min(a5) <= 1.3


class TestTheorem13:
    def test_identity_restriction(self):
        op = assemble(rasterize(unit_square(), 1 / 32))
        spec = lowest_eigenpairs(op, 9)
        rep = verify_theorem13(spec, op, np.arange(op.n))
        for r in rep.rows:
            assert r["mu2"] == pytest.approx(r["lambda1"], abs=1e-9)
        assert rep.verdict == "pass"

    def test_inner_square_chain(self):
        r1 = rasterize(unit_square(), 1 / 64)
        op1 = assemble(r1)
        spec = lowest_eigenpairs(op1, 9)
        r2 = collar_removal(r1, 0.02)
        rep = verify_theorem13(spec, assemble(r2), restriction_map(op1, r2), 8, 2.2)
        assert rep.chain_holds
        assert all(r["lower_holds"] and r["upper_holds"] for r in rep.rows)
        assert rep.verdict in ("pass", "inconclusive")
        assert rep.to_dict()["rows"][0]["threshold"] > 0

    def test_cusp_rows(self):
        r1 = rasterize(CuspDomain(2, 0.5), 1 / 64)
        op1 = assemble(r1)
        spec = lowest_eigenpairs(op1, 5)
        r2 = collar_removal(r1, 0.02)
        rep = verify_theorem13(spec, assemble(r2), restriction_map(op1, r2), 4, 3.0)
        assert len(rep.rows) == 4
        assert all(r["lower_holds"] for r in rep.rows)


class TestSweeps:
    def test_box_eigenvalues(self):
        lam = box_neumann_eigenvalues((0, 0), (1, 1), 10)
        assert np.allclose(lam / math.pi**2, [0, 1, 1, 2, 4, 4, 5, 5, 8, 9])

    def test_rectangle_shrink_small(self):
        rep = stability_sweep(unit_square(), "graph_shrink", (0.02, 0.04, 0.08), n_max=4, h=1 / 100)
        assert rep.monotone.all()
        assert rep.analytic_rel_err()[:, 1:].max() <= 0.01
        assert rep.all_pass
        dev = rep.deviation[:, 1:]
        assert np.all(np.diff(dev, axis=0) >= -0.02 * np.abs(dev[:-1]) - 1e-12)

    def test_deviation_vanishes_as_eps_shrinks(self):
        rep = stability_sweep(unit_disc(), "collar_removal", (0.02, 0.04, 0.08), n_max=3, h=1 / 100)
        assert np.all(rep.deviation[0, 1:] <= rep.deviation[-1, 1:] + 0.02)
        assert np.all(rep.lambda2[:, 1:] >= rep.lambda1[None, 1:] * (1 - 1e-9))

    def test_report_exports(self):
        rep = stability_sweep(unit_square(), "graph_shrink", (0.05, 0.1), n_max=2, h=1 / 40)
        csv = rep.to_csv().splitlines()
        assert len(csv) == 1 + 2 * 2
        assert "plot" in rep.to_gnuplot()
        d = rep.to_dict()
        assert all("reference" in r for r in d["rows"])

    def test_unknown_family(self):
        with pytest.raises(PerturbationError):
            stability_sweep(unit_square(), "nope")

    def test_deformation_needs_atlas(self):
        with pytest.raises(PerturbationError):
            stability_sweep(unit_square(), "deformation", (0.02,), n_max=2, h=1 / 40)

    def test_corollary16_square_small(self):
        rep = verify_corollary16(unit_square(), (0.04, 0.08, 0.16), n_max=4, h=1 / 100)
        assert rep["chain_holds"]
        assert rep["a2"] > 0
        assert len(rep["b4"]) == 4
        assert rep["verdict"] in ("pass", "inconclusive")
