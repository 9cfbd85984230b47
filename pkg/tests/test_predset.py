import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from moepred.debias import DebiasResult
from moepred.errors import ContractViolationError, DiscretizationTooCoarseError
from moepred.predset import (
    PredictionSet,
    build_prediction_set,
    contains,
    contains_many,
    default_delta,
    mixture_density,
    raw_scale_length,
)

from conftest import quad_mass


def make_db(centers, scales, weights):
    centers = np.asarray(centers, dtype=float)
    K = centers.size
    return DebiasResult(
        u=np.zeros((K, 1)),
        gamma_d=centers,
        V=np.zeros(K),
        b=np.asarray(scales, dtype=float),
        lambda_used=np.zeros(K),
        pi_new=np.asarray(weights, dtype=float),
    )


def random_db(rng, K):
    centers = np.sort(rng.uniform(-5, 5, K))
    scales = rng.uniform(0.2, 2.0, K)
    weights = rng.dirichlet(np.ones(K))
    return make_db(centers, scales, weights)


class TestMixtureDensity:
    def test_k1_is_gaussian(self):
        db = make_db([1.5], [0.7], [1.0])
        for y in (-1.0, 0.0, 1.5, 3.0):
            assert mixture_density(db, y) == pytest.approx(
                norm.pdf(y, 1.5, 0.7), rel=1e-12
            )

    def test_vanishes_in_tails(self):
        db = make_db([0.0, 2.0], [1.0, 0.5], [0.6, 0.4])
        assert mixture_density(db, 1e3) == pytest.approx(0.0, abs=1e-300)
        assert mixture_density(db, -1e3) == pytest.approx(0.0, abs=1e-300)

    def test_integrates_to_one(self, rng):
        db = random_db(rng, 3)
        lo = db.gamma_d.min() - 10 * db.b.max()
        hi = db.gamma_d.max() + 10 * db.b.max()
        total, _ = quad(lambda y: float(mixture_density(db, y)), lo, hi, limit=300)
        assert total == pytest.approx(1.0, abs=1e-6)


class TestDefaultDelta:
    def test_k1_formula_value(self):
        # Len(Q) = 2 z_{0.975}; curvature bound 11 sqrt(0.01/LenQ); cap LenQ/2000
        db = make_db([0.0], [1.0], [1.0])
        zq = norm.ppf(0.975)
        length = 2 * zq
        bound = 11 * math.sqrt(0.01 * 1.0 / length)
        cap = length / 2000
        assert bound == pytest.approx(0.5556, abs=2e-4)
        got = default_delta(db, 0.05, gamma=0.01)
        assert got == pytest.approx(min(bound, cap), rel=1e-12)
        assert got == pytest.approx(0.00196, abs=1e-5)

    def test_monotone_in_gamma(self):
        db = make_db([0.0, 3.0], [1.0, 0.5], [0.5, 0.5])
        deltas = [default_delta(db, 0.05, g) for g in (0.3, 0.1, 0.01, 0.001)]
        assert all(a >= b for a, b in zip(deltas, deltas[1:]))

    def test_curvature_term_scales_with_length(self):
        db1 = make_db([0.0], [1.0], [1.0])
        db2 = make_db([0.0], [2.0], [1.0])  # doubles Len(Q), same min b after scaling?
        zq = norm.ppf(0.975)
        t1 = 11 * math.sqrt(0.01 * 1.0 / (2 * zq))
        t2 = 11 * math.sqrt(0.01 * 2.0 / (4 * zq))
        assert t2 == pytest.approx(t1, rel=1e-12)  # b and Len both doubled
        # doubling Len at fixed b shrinks the term by sqrt(2)
        t3 = 11 * math.sqrt(0.01 * 1.0 / (4 * zq))
        assert t1 / t3 == pytest.approx(math.sqrt(2.0), rel=1e-12)

    def test_invalid_gamma(self):
        db = make_db([0.0], [1.0], [1.0])
        with pytest.raises(ContractViolationError):
            default_delta(db, 0.05, gamma=0.0)


class TestBuildPredictionSet:
    def test_k1_gaussian_hdr(self):
        db = make_db([0.0], [1.0], [1.0])
        ps = build_prediction_set(db, 0.05, default_delta(db, 0.05))
        assert len(ps.intervals) == 1
        (a, b), = ps.intervals
        z = norm.ppf(0.975)
        assert abs(a + z) <= ps.delta
        assert abs(b - z) <= ps.delta

    def test_two_far_components(self):
        db = make_db([0.0, 100.0], [1.0, 1.0], [0.5, 0.5])
        ps = build_prediction_set(db, 0.05, default_delta(db, 0.05))
        assert len(ps.intervals) == 2
        (a1, b1), (a2, b2) = ps.intervals
        z = norm.ppf(0.975)  # each interval holds 0.95 of its own component
        for lo, hi, c in [(a1, b1, 0.0), (a2, b2, 100.0)]:
            assert abs(lo - (c - z)) <= 2 * ps.delta
            assert abs(hi - (c + z)) <= 2 * ps.delta
        assert quad_mass(db, ps.intervals) >= 0.95 - 1e-6

    def test_identical_components_collapse(self):
        db2 = make_db([1.0, 1.0], [0.5, 0.5], [0.3, 0.7])
        db1 = make_db([1.0], [0.5], [1.0])
        delta = default_delta(db1, 0.05)
        ps1 = build_prediction_set(db1, 0.05, delta)
        ps2 = build_prediction_set(db2, 0.05, delta)
        assert len(ps1.intervals) == len(ps2.intervals) == 1
        for (a1, b1), (a2, b2) in zip(ps1.intervals, ps2.intervals):
            assert abs(a1 - a2) <= delta and abs(b1 - b2) <= delta

    def test_mass_and_length_fields(self, rng):
        db = random_db(rng, 3)
        ps = build_prediction_set(db, 0.1, default_delta(db, 0.1))
        assert ps.mass_estimate >= 0.9
        total = sum(b - a for a, b in ps.intervals)
        assert ps.total_length == pytest.approx(total, abs=1e-12)
        starts = [a for a, _ in ps.intervals]
        assert starts == sorted(starts)
        for (a1, b1), (a2, b2) in zip(ps.intervals, ps.intervals[1:]):
            assert b1 < a2  # disjoint with a real gap

    def test_selected_density_dominates_unselected(self, rng):
        db = random_db(rng, 2)
        q = 0.2
        ps = build_prediction_set(db, q, default_delta(db, q, 0.05))
        lo, hi, w = ps.grid_lo, ps.grid_hi, ps.delta
        n_seg = int(round((hi - lo) / w))
        mids = lo + (np.arange(n_seg) + 0.5) * w
        h = mixture_density(db, mids)
        inside = contains_many(ps, mids)
        if inside.any() and (~inside).any():
            assert h[inside].min() >= h[~inside].max() - 1e-12

    def test_component_permutation_invariance(self, rng):
        centers = np.array([0.0, 2.5, -1.0])
        scales = np.array([1.0, 0.4, 0.7])
        weights = np.array([0.5, 0.2, 0.3])
        db = make_db(centers, scales, weights)
        perm = [2, 0, 1]
        dbp = make_db(centers[perm], scales[perm], weights[perm])
        delta = default_delta(db, 0.05)
        ps1 = build_prediction_set(db, 0.05, delta)
        ps2 = build_prediction_set(dbp, 0.05, delta)
        assert ps1.intervals == ps2.intervals

    def test_halving_delta_keeps_mass_within_err(self, rng):
        db = random_db(rng, 2)
        q = 0.05
        delta = default_delta(db, q, 0.05)
        for d in (delta, delta / 2):
            ps = build_prediction_set(db, q, d)
            err = 0.0075 * (ps.grid_hi - ps.grid_lo) * ps.delta**2 / float(db.b.min())
            assert quad_mass(db, ps.intervals) >= 1 - q - err - 1e-6

    def test_too_coarse_raises(self):
        # segments so wide their midpoints all land between the two narrow modes
        db = make_db([0.0, 100.0], [0.2, 0.2], [0.5, 0.5])
        with pytest.raises(DiscretizationTooCoarseError):
            build_prediction_set(db, 0.05, 40.0)

    def test_invalid_q(self):
        db = make_db([0.0], [1.0], [1.0])
        with pytest.raises(ContractViolationError):
            build_prediction_set(db, 1.5, 0.01)


class TestContains:
    def test_endpoints_closed(self):
        ps = PredictionSet(
            intervals=[(0.0, 1.0), (2.0, 3.0)], q=0.05, delta=0.01,
            mass_estimate=0.96, total_length=2.0,
        )
        assert contains(ps, 0.0) and contains(ps, 1.0)
        assert contains(ps, 2.0) and contains(ps, 3.0)

    def test_gap_excluded(self):
        ps = PredictionSet(
            intervals=[(0.0, 1.0), (2.0, 3.0)], q=0.05, delta=0.01,
            mass_estimate=0.96, total_length=2.0,
        )
        assert not contains(ps, 1.5)
        assert not contains(ps, -0.2)
        assert not contains(ps, 4.0)

    def test_vectorized_agrees(self, rng):
        ps = PredictionSet(
            intervals=[(-1.0, 0.5), (1.5, 2.0)], q=0.05, delta=0.01,
            mass_estimate=0.95, total_length=2.0,
        )
        ys = rng.uniform(-2, 3, 100)
        many = contains_many(ps, ys)
        each = np.array([contains(ps, y) for y in ys])
        assert np.array_equal(many, each)


class TestSerialization:
    def test_round_trip(self, rng):
        db = random_db(rng, 2)
        ps = build_prediction_set(db, 0.05, default_delta(db, 0.05))
        d = ps.to_dict()
        assert set(d) == {"q", "delta", "intervals", "mass_estimate", "total_length"}
        ps2 = PredictionSet.from_dict(d)
        assert ps2.intervals == [tuple(iv) for iv in d["intervals"]]
        assert ps2.mass_estimate == ps.mass_estimate

    def test_raw_scale_length_order_preserving(self):
        short = PredictionSet([(1.0, 1.5)], 0.05, 0.01, 0.95, 0.5)
        long = PredictionSet([(1.0, 1.8)], 0.05, 0.01, 0.95, 0.8)
        assert raw_scale_length(long) > raw_scale_length(short)
        assert raw_scale_length(short) == pytest.approx(
            math.exp(1.5) - math.exp(1.0), rel=1e-12
        )
