"""Small statistical helpers shared by the experiments."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import ParameterError


class EmpiricalCdf:
    def __init__(self, sample):
        values = np.sort(np.asarray(sample, dtype=float).ravel())
        if values.size == 0:
            raise ParameterError("empirical CDF needs a nonempty sample")
        self.values = values

    def __len__(self):
        return self.values.size

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.values.size


def ks_distance(sample, cdf: Callable) -> float:
    """Sup distance between the empirical CDF and ``cdf``.

    Both one-sided limits are compared at every atom, so step CDFs
    (including the sample's own) are handled correctly.
    """
    ecdf = sample if isinstance(sample, EmpiricalCdf) else EmpiricalCdf(sample)
    x = ecdf.values
    n = x.size
    atoms, first = np.unique(x, return_index=True)
    below = first / n
    upto = np.searchsorted(x, atoms, side="right") / n
    f_at = np.asarray(cdf(atoms), dtype=float)
    f_left = np.asarray(cdf(np.nextafter(atoms, -np.inf)), dtype=float)
    return float(max(np.max(np.abs(upto - f_at)), np.max(np.abs(below - f_left))))


def normal_cdf(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + _erf(x / math.sqrt(2.0)))


_erf = np.vectorize(math.erf, otypes=[float])


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()) if v.size else math.nan, 0.0
    if v.min() == v.max():
        # constant samples: avoid a rounding-noise stderr
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def proportion_stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of log y against log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        raise ParameterError("need at least two positive points for a log-log fit")
    slope, intercept = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope), float(intercept)


def survival_tail_slope(sample, lower: float, upper: float, points: int = 20) -> float:
    """Log-log slope of the empirical survival function on a log grid in [lower, upper]."""
    values = np.sort(np.asarray(sample, dtype=float))
    if not 0 < lower < upper:
        raise ParameterError("need 0 < lower < upper")
    grid = np.geomspace(lower, upper, points)
    surv = 1.0 - np.searchsorted(values, grid, side="right") / values.size
    return loglog_slope(grid, surv)[0]


def quantile_tail_slope(sample, lo_q: float = 0.9, hi_q: float = 0.99, points: int = 20) -> float:
    values = np.asarray(sample, dtype=float)
    lo, hi = np.quantile(values, [lo_q, hi_q])
    return survival_tail_slope(values, lo, hi, points)


def log_binned_density(values, lower: float, upper: float, bins_per_decade: int = 8,
                       integer: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Density estimate on logarithmic bins covering [lower, upper].

    With ``integer`` the bins are snapped to integer edges and the density is
    normalized by the number of integers each bin holds.
    """
    values = np.asarray(values, dtype=float)
    decades = math.log10(upper / lower)
    edges = np.geomspace(lower, upper, max(int(round(decades * bins_per_decade)), 1) + 1)
    if integer:
        edges = np.unique(np.ceil(edges - 1e-9))
        if edges.size < 2:
            raise ParameterError("range too narrow for integer log bins")
        widths = np.diff(edges)
        counts = np.histogram(values, bins=edges - 0.5)[0]
        centers = np.sqrt(edges[:-1] * (edges[1:] - 1).clip(min=edges[:-1]))
    else:
        widths = np.diff(edges)
        counts = np.histogram(values, bins=edges)[0]
        centers = np.sqrt(edges[:-1] * edges[1:])
    density = counts / (values.size * widths)
    return centers, density
