"""Prediction sets for the fitted mixture at a query point.

The target density is the gating-weighted mixture of Gaussians centered at
the debiased predictions with scales b_k.  The set is a discretized
highest-density region: an interval Q known to hold mass at least 1-q is cut
into equal segments, segments are ranked by midpoint density, and the
shortest prefix whose Riemann mass reaches 1-q is returned (adjacent
segments merged; endpoints are segment boundaries, closed).

The default segment size combines the second-derivative bound
delta <= 11 sqrt(gamma min_k(b_k) / Len(Q)) with a hard cap of Len(Q)/2000,
so the Riemann error 0.0075 Len(Q) delta^2 / min_k(b_k) stays negligible.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ContractViolationError, DiscretizationTooCoarseError
from .debias import DebiasResult

SQRT_2PI = float(np.sqrt(2.0 * np.pi))
MIN_SEGMENTS = 2000


@dataclass
class PredictionSet:
    intervals: list  # sorted disjoint closed [lo, hi] pairs
    q: float
    delta: float  # segment width actually used
    mass_estimate: float  # Riemann mass of the selected segments
    total_length: float
    grid_lo: float = 0.0  # the interval Q that was discretized
    grid_hi: float = 0.0

    def to_dict(self):
        return {
            "q": self.q,
            "delta": self.delta,
            "intervals": [[float(a), float(b)] for a, b in self.intervals],
            "mass_estimate": self.mass_estimate,
            "total_length": self.total_length,
        }

    @classmethod
    def from_dict(cls, d):
        ivs = [(float(a), float(b)) for a, b in d["intervals"]]
        lo = min(a for a, _ in ivs) if ivs else 0.0
        hi = max(b for _, b in ivs) if ivs else 0.0
        return cls(
            intervals=ivs,
            q=float(d["q"]),
            delta=float(d["delta"]),
            mass_estimate=float(d["mass_estimate"]),
            total_length=float(d["total_length"]),
            grid_lo=lo,
            grid_hi=hi,
        )


def mixture_density(db: DebiasResult, y):
    """f(y) = sum_k pi_k / b_k * phi((y - center_k) / b_k); y scalar or array."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    z = (y_arr[:, None] - db.gamma_d[None, :]) / db.b[None, :]
    dens = np.exp(-0.5 * z * z) / (SQRT_2PI * db.b[None, :])
    out = dens @ db.pi_new
    return float(out[0]) if np.isscalar(y) or np.asarray(y).ndim == 0 else out


def _base_interval(db: DebiasResult, q):
    """Interval Q bracketing at least 1-q of the mixture mass: from the lowest
    center minus its z_{1-q/2} spread to the highest center plus its spread."""
    zq = float(norm.ppf(1.0 - q / 2.0))
    order = np.argsort(db.gamma_d, kind="stable")
    lo = db.gamma_d[order[0]] - db.b[order[0]] * zq
    hi = db.gamma_d[order[-1]] + db.b[order[-1]] * zq
    return float(lo), float(hi)


def default_delta(db: DebiasResult, q, gamma=0.01):
    """Segment size from the curvature bound, capped to give >= 2000 segments."""
    if not 0.0 < gamma < 1.0:
        raise ContractViolationError("gamma must be in (0, 1)")
    lo, hi = _base_interval(db, q)
    length = hi - lo
    bound = 11.0 * np.sqrt(gamma * float(db.b.min()) / length)
    return float(min(bound, length / MIN_SEGMENTS))


def build_prediction_set(db: DebiasResult, q, delta) -> PredictionSet:
    """Greedy highest-density selection of segments until mass 1-q is reached.

    If even the full grid cannot reach 1-q (very coarse delta), Q is widened
    once by the largest b on each side before failing.
    """
    if not 0.0 < q < 1.0:
        raise ContractViolationError("q must be in (0, 1)")
    if delta <= 0.0:
        raise ContractViolationError("delta must be > 0")
    lo, hi = _base_interval(db, q)
    b_max = float(db.b.max())
    for attempt in range(2):
        length = hi - lo
        n_seg = max(int(np.ceil(length / delta)), 1)
        w = length / n_seg
        mids = lo + (np.arange(n_seg) + 0.5) * w
        h = mixture_density(db, mids)
        order = np.argsort(-h, kind="stable")
        csum = np.cumsum(h[order]) * w
        pos = int(np.searchsorted(csum, 1.0 - q, side="left"))
        if pos >= n_seg:
            lo -= b_max
            hi += b_max
            continue
        chosen = np.sort(order[: pos + 1])
        intervals = []
        run_start = chosen[0]
        prev = chosen[0]
        for i in chosen[1:]:
            if i != prev + 1:
                intervals.append((lo + run_start * w, lo + (prev + 1) * w))
                run_start = i
            prev = i
        intervals.append((lo + run_start * w, lo + (prev + 1) * w))
        return PredictionSet(
            intervals=intervals,
            q=float(q),
            delta=float(w),
            mass_estimate=float(csum[pos]),
            total_length=float((pos + 1) * w),
            grid_lo=lo,
            grid_hi=hi,
        )
    raise DiscretizationTooCoarseError(
        f"grid with delta={delta:.3g} cannot reach mass {1 - q:.3g}"
    )


def contains(pset: PredictionSet, y) -> bool:
    """Closed-interval membership."""
    y = float(y)
    return any(a <= y <= b for a, b in pset.intervals)


def contains_many(pset: PredictionSet, ys):
    """Vectorized membership for an array of responses."""
    ys = np.asarray(ys, dtype=float)
    out = np.zeros(ys.shape, dtype=bool)
    for a, b in pset.intervals:
        out |= (ys >= a) & (ys <= b)
    return out


def raw_scale_length(pset: PredictionSet):
    """Total length after the log1p back-transform y -> exp(y) - 1."""
    return float(sum(np.exp(b) - np.exp(a) for a, b in pset.intervals))
