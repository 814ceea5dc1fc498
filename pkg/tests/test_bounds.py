from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcert.bounds import (
    bound_report_json,
    bound_value,
    bucket,
    bucket_index,
    dumps_report,
    family_lower_bounds,
    instance_optimal_bound,
    tune_perturbations,
)
from qcert.errors import AllMassRemoved, NonBracketing, ParameterError
from qcert.states import DensityMatrix, DiagonalSpectrum, fidelity, fidelity_mm_quasinorm, schatten_quasinorm


def random_spectrum(rng, d):
    return rng.dirichlet(np.full(d, rng.uniform(0.2, 3.0)))


class TestBucketing:
    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=1e-300, max_value=1.0, allow_subnormal=False))
    def test_membership(self, x):
        j = bucket_index(x)
        assert 2.0 ** (-j - 1) < x <= 2.0**-j

    @pytest.mark.parametrize("x,j", [(1.0, 0), (0.5, 1), (0.25, 2), (0.3, 1), (0.75, 0)])
    def test_dyadic_edges(self, x, j):
        assert bucket_index(x) == j

    def test_nonpositive(self):
        with pytest.raises(ValueError):
            bucket_index(0.0)

    @pytest.mark.parametrize("scheme", ["simple", "refined"])
    def test_partition(self, rng, scheme):
        s = random_spectrum(rng, 20)
        dec = bucket(s, 0.05, scheme)
        idx = np.sort(np.concatenate(list(dec.buckets.values())))
        assert np.array_equal(idx, np.arange(20))
        for j, members in dec.buckets.items():
            assert np.all(2.0 ** (-j - 1) < s[members]) and np.all(s[members] <= 2.0**-j)
        assert dec.sigma_star.values.sum() == pytest.approx(1.0, abs=1e-12)
        assert dec.d_eff == np.count_nonzero(dec.sigma_prime.values)

    @pytest.mark.parametrize("d", [4, 5, 8, 12])
    def test_flat(self, d):
        dec = bucket(np.full(d, 1 / d), 0.1)
        assert list(dec.buckets) == [bucket_index(1 / d)]
        assert bucket_index(1 / d) == math.floor(math.log2(d))
        assert dec.removed.size == 0 and dec.d_eff == d

    def test_tail_removed(self):
        d, delta = 10, 0.02
        s = np.array([1 - delta] + [delta / (d - 1)] * (d - 1))
        dec = bucket(s, 0.05)
        assert dec.d_eff == 1
        assert dec.removed_mass == pytest.approx(delta)

    def test_zero_entries_are_not_bucketed(self):
        dec = bucket([0.5, 0.5, 0.0], 0.1)
        assert dec.d_eff == 2 and sum(dec.sizes.values()) == 2

    def test_simple_mass_and_count(self, rng):
        for _ in range(50):
            d = int(rng.integers(2, 40))
            eps = float(rng.uniform(0.01, 0.2))
            dec = bucket(random_spectrum(rng, d), eps, "simple")
            assert dec.removed_mass <= eps * len(dec.removed_buckets) + 1e-15
            assert len(dec.surviving) <= math.ceil(math.log2(d / eps)) + 1

    def test_refined_mass(self, rng):
        for _ in range(50):
            d = int(rng.integers(2, 40))
            eps = float(rng.uniform(0.01, 0.2))
            dec = bucket(random_spectrum(rng, d), eps, "refined")
            assert dec.removed_mass <= dec.mass_bound() + 1e-15
            assert set(dec.light.tolist()) | set(dec.tail.tolist()) <= set(dec.removed.tolist())

    def test_refined_tie_break_deterministic(self):
        s = np.full(8, 1 / 8)
        a, b = bucket(s, 0.3, "refined"), bucket(s.copy(), 0.3, "refined")
        assert np.array_equal(a.removed, b.removed)

    def test_accepts_density_matrix(self, rng):
        s = random_spectrum(rng, 5)
        U, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        dm = DensityMatrix(U @ np.diag(s) @ U.T)
        assert bucket(dm, 0.05).d_eff == bucket(s, 0.05).d_eff

    def test_all_mass_removed(self):
        with pytest.raises(AllMassRemoved):
            bucket(np.full(16, 1 / 16), 0.5, "refined")

    @pytest.mark.parametrize("args", [([], 0.1), ([0.5, 0.5], 0.0), ([0.5, 0.5], 1.0), ([1.5], 0.1), ([-0.1, 1.1], 0.1)])
    def test_invalid(self, args):
        with pytest.raises(ParameterError):
            bucket(*args)

    def test_unknown_scheme(self):
        with pytest.raises(ParameterError):
            bucket([1.0], 0.1, "fancy")

    def test_to_dict(self):
        data = bucket([0.5, 0.25, 0.25], 0.1).to_dict()
        assert data["buckets"] == {"1": [0], "2": [1, 2]} and data["d_eff"] == 3


class TestInstanceOptimal:
    def test_flat_anchor(self):
        rep = instance_optimal_bound(np.full(4, 0.25), 0.1)
        assert rep.lower == pytest.approx(800, rel=1e-12) and rep.upper == pytest.approx(800, rel=1e-12)

    @pytest.mark.parametrize("d", [2, 3, 7, 16, 33])
    @pytest.mark.parametrize("eps", [0.05, 0.1, 1 / 12])
    def test_flat_all(self, d, eps):
        rep = instance_optimal_bound(np.full(d, 1 / d), eps)
        assert rep.lower == pytest.approx(d**1.5 / eps**2, rel=1e-12)
        assert rep.fidelity_term == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("d", [1, 2, 9])
    def test_pure(self, d):
        s = np.zeros(d)
        s[0] = 1.0
        rep = instance_optimal_bound(s, 0.1)
        assert rep.lower == pytest.approx(100, rel=1e-12) and rep.upper == pytest.approx(100, rel=1e-12)

    def test_geometric_two_formulas(self):
        s = np.concatenate([np.full(2, 0.3), np.full(4, 0.07), np.full(8, 0.015)])
        s /= s.sum()
        eps = 0.01
        dec = bucket(s, eps)
        assert len(dec.surviving) == 3
        sp = dec.sigma_prime.values
        via_quasinorm = math.sqrt(dec.d_eff) / eps**2 * schatten_quasinorm(np.diag(sp), 0.5) / sp.sum()
        via_fidelity = dec.d * math.sqrt(dec.d_eff) / eps**2 * fidelity(np.diag(sp / sp.sum()), np.eye(s.size) / s.size)
        assert bound_value(dec, eps) == pytest.approx(via_quasinorm, rel=1e-12)
        assert bound_value(dec, eps) == pytest.approx(via_fidelity, rel=1e-9)

    def test_sandwich_order(self, rng):
        for _ in range(20):
            rep = instance_optimal_bound(random_spectrum(rng, 12), 0.05)
            assert rep.upper_decomp.d_eff >= rep.d_eff

    def test_custom_scales(self, rng):
        s = random_spectrum(rng, 10)
        rep = instance_optimal_bound(s, 0.1, lower_scale=0.1, upper_scale=0.1)
        assert rep.lower == rep.upper


class TestTuning:
    def test_single_bucket_closed_form(self):
        d, eps = 8, 0.01
        dec = bucket(np.full(d, 1 / d), eps)
        (j,) = dec.surviving
        plan = tune_perturbations(dec, eps)
        assert plan.zeta == pytest.approx(eps * 2 ** (2 * (j + 1) / 3) / d ** (5 / 3), rel=1e-12)

    def test_monotone(self, rng):
        s = random_spectrum(rng, 16)
        dec = bucket(s, 0.005)
        zs = [tune_perturbations(dec, e).zeta for e in (0.001, 0.002, 0.004, 0.008, 0.016)]
        assert all(b >= a for a, b in zip(zs, zs[1:]))

    def test_random_plans(self, rng):
        for _ in range(40):
            d = int(rng.integers(2, 33))
            eps = float(rng.uniform(0.005, 0.03))
            for scheme in ("simple", "refined"):
                plan = tune_perturbations(bucket(random_spectrum(rng, d), eps, scheme), eps)
                assert plan.residual <= 1e-9 * eps
                assert plan.sanity_holds(10.0)
                for j, v in plan.eps_j.items():
                    assert v <= plan.caps[j] * (1 + 1e-12)
                    assert plan.alpha[j] >= 12

    def test_caps_engage_near_feasible_max(self):
        dec = bucket(np.full(8, 1 / 8), 0.01)
        feasible = 8 * 2.0**-4 / 12
        plan = tune_perturbations(dec, feasible)
        (j,) = dec.surviving
        assert plan.eps_j[j] == pytest.approx(plan.caps[j])

    def test_non_bracketing(self):
        dec = bucket(np.full(8, 1 / 8), 0.01)
        with pytest.raises(NonBracketing) as info:
            tune_perturbations(dec, 0.5)
        assert info.value.feasible_max == pytest.approx(8 * 2.0**-4 / 12)


class TestFamilies:
    def test_mixedness(self):
        assert family_lower_bounds("mixedness", d=64, eps=1 / 12) == pytest.approx(73728, rel=1e-12)

    @pytest.mark.parametrize("d", [4, 16, 64])
    def test_offdiag_matches_mixedness_exponent(self, d):
        eps = 0.1
        assert family_lower_bounds("offdiag", d1=d, d2=d, eps=eps) == pytest.approx(
            family_lower_bounds("mixedness", d=d, eps=eps), rel=1e-12
        )

    def test_classical(self):
        assert family_lower_bounds("classical", d=16, eps=0.5) == pytest.approx(16.0)

    @pytest.mark.parametrize("d", [4, 8, 32])
    def test_multiblock_single_block(self, d):
        eps = 0.1
        val = family_lower_bounds("multiblock", blocks=[(d, eps, int(math.log2(d)))], d=d)
        assert val == pytest.approx(d**1.5 / eps**2, rel=1e-12)

    def test_multiblock_min_over_blocks(self):
        blocks = [(4, 0.1, 2), (4, 0.2, 2)]
        assert family_lower_bounds("multiblock", blocks=blocks) == pytest.approx(2 * 64 / (0.04 * 4) / 2)

    @pytest.mark.parametrize(
        "family,params",
        [
            ("mixedness", {"d": 0, "eps": 0.1}),
            ("mixedness", {"d": 4}),
            ("offdiag", {"d1": 2, "d2": 4, "eps": 0.1}),
            ("multiblock", {"blocks": []}),
            ("multiblock", {"blocks": [(0, 0.1, 0)]}),
            ("unknown", {}),
        ],
    )
    def test_invalid(self, family, params):
        with pytest.raises(ParameterError):
            family_lower_bounds(family, **params)


class TestReport:
    def test_keys(self):
        rep = bound_report_json(np.full(4, 0.25), 0.1)
        for key in ("scheme", "buckets", "removed_mass", "d_eff", "fidelity_term", "lower", "upper", "zeta", "eps_j"):
            assert key in rep
        assert json.loads(dumps_report(rep)) == json.loads(json.dumps(rep))

    def test_plan_error_recorded(self):
        rep = bound_report_json(np.full(4, 0.25), 0.5)
        assert rep["zeta"] is None and "plan_error" in rep

    def test_accepts_spectrum_type(self):
        rep = bound_report_json(DiagonalSpectrum(np.full(4, 0.25)), 0.1)
        assert rep["lower"] == pytest.approx(800)
        assert fidelity_mm_quasinorm(np.eye(4) / 4) == pytest.approx(1.0)
