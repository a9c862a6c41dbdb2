"""Data-driven selection of the number of dynamic factors.

The criterion penalizes the grid-averaged eigenvalue mass left in the
tail after removing k components:

    IC(k) = log[ (1/n) sum_{j>k} mean_theta max(lambda_j(theta), 0) ]
            + k * c * p(n, S1, S2, T),

minimized over k = 0..q_max.  Negative estimated eigenvalues (possible
under non-positive lag windows) are clamped to zero inside the tail
sums.  The penalty scale c is calibrated by a stability scan: the
estimate is repeated over nested cross-sectional subsamples (after one
seeded random permutation of the series) and, for every c on a grid,
the across-subsample variance

    S_c = (1/J) sum_j ( qhat_c^(n_j) - mean_j qhat_c^(n_j) )^2

is recorded.  S_c vanishes on "stability intervals" of c; the first
such interval (c near 0) always reports q_max by underpenalization, and
the selected factor count is the common full-sample estimate on the
second stability interval.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, NumericError
from .field import LatticeField
from .dynpca import DynamicEigenSystem, eigensystem_from_field
from .spectral import (
    default_bandwidths,
    resolve_kernels,
    sample_autocovariance,
    spectral_from_autocovariance,
    validate_bandwidths,
    AutocovarianceSet,
)

__all__ = [
    "PenaltySpec",
    "penalty_value",
    "information_criterion",
    "ICResult",
    "select_q_fixed_c",
    "StabilityScan",
    "stability_scan",
    "NoSecondIntervalError",
    "scan_to_csv",
    "scan_summary_json",
]


@dataclass(frozen=True)
class PenaltySpec:
    """Inputs of the factor-count penalty p(n, S1, S2, T), times a scale c."""

    n: int
    dims: tuple[int, int, int]
    bw: tuple[int, int, int]
    smoothness: tuple[float, float, float] = (2.0, 2.0, 2.0)
    c: float = 1.0

    def value(self) -> float:
        return self.c * penalty_value(self.n, self.dims, self.bw, self.smoothness)


def penalty_value(n, dims, bw, smoothness=(2.0, 2.0, 2.0)) -> float:
    """Unscaled penalty.

    p = (1/n + B1^-t1 + B2^-t2 + B3^-t3 + 1/V)
          * log(min(n, B1^t1, B2^t2, B3^t3, V)),
    V = sqrt(S1*S2*T) / (sqrt(B1*B2*B3) * log B1 * log B2 * log B3).

    Requires every bandwidth >= 2 so the logarithms are positive.
    """
    s1, s2, t = (int(d) for d in dims)
    b1, b2, b3 = (int(b) for b in bw)
    if min(s1, s2, t) < 1:
        raise ConfigError("extents must be positive")
    if min(b1, b2, b3) < 2:
        raise ConfigError(f"penalty requires all bandwidths >= 2, got {(b1, b2, b3)}")
    t1, t2, t3 = (float(v) for v in smoothness)
    v = math.sqrt(s1 * s2 * t) / (
        math.sqrt(b1 * b2 * b3) * math.log(b1) * math.log(b2) * math.log(b3)
    )
    rate = 1.0 / n + b1 ** -t1 + b2 ** -t2 + b3 ** -t3 + 1.0 / v
    level = min(n, b1 ** t1, b2 ** t2, b3 ** t3, v)
    if level <= 1.0:
        raise NumericError(f"penalty log factor is non-positive (min argument {level})")
    return rate * math.log(level)


def _tail_means(clamped_grid_means: np.ndarray, q_max: int) -> np.ndarray:
    """Bracketed IC averages (1/n) sum_{j>k} lambda_bar_j for k = 0..q_max."""
    n = clamped_grid_means.shape[0]
    rev = np.concatenate([[0.0], np.cumsum(clamped_grid_means[::-1])])[::-1]
    return rev[: q_max + 1] / n


def _ic_from_tails(tails: np.ndarray, pen: float) -> np.ndarray:
    if np.any(tails <= 0.0):
        raise NumericError("degenerate spectrum: eigenvalue tail sum is not positive")
    ks = np.arange(tails.shape[0])
    return np.log(tails) + ks * pen


@dataclass(frozen=True)
class ICResult:
    """Information criterion values over k and the arg-min estimate."""

    values: np.ndarray
    q_hat: int
    eigen_tail_sums: np.ndarray


def information_criterion(system: DynamicEigenSystem, k: int, pen: PenaltySpec) -> float:
    """IC(k) from a decomposed eigensystem (all n eigenvalues needed)."""
    if not 0 <= k <= system.n:
        raise ConfigError(f"k={k} out of range 0..{system.n}")
    means = system.eigenvalue_means(clamp=True)
    tails = _tail_means(means, k)
    return float(_ic_from_tails(tails, pen.value())[k])


def select_q_fixed_c(
    field: LatticeField, q_max: int, pen: PenaltySpec | None = None,
    kernels="epanechnikov", bw=None, c: float = 1.0,
) -> ICResult:
    """Estimate the factor count at one penalty scale.

    Full pipeline: spectral estimate, per-frequency eigenvalues, IC over
    k = 0..q_max, arg-min (first index on ties).
    """
    if not 0 <= q_max < field.n:
        raise ConfigError(f"q_max={q_max} must satisfy 0 <= q_max < n={field.n}")
    kernels = resolve_kernels(kernels)
    if bw is None:
        bw = default_bandwidths(field.dims)
    bw = validate_bandwidths(bw, field.dims)
    if pen is None:
        pen = PenaltySpec(field.n, field.dims, bw, tuple(k.smoothness for k in kernels), c)
    system = eigensystem_from_field(field, kernels, bw, q_keep=0)
    means = system.eigenvalue_means(clamp=True)
    tails = _tail_means(means, q_max)
    values = _ic_from_tails(tails, pen.value())
    return ICResult(values, int(np.argmin(values)), tails)


# ---------------------------------------------------------------------------
# Stability scan over the penalty scale
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityScan:
    """Result of the penalty-scale calibration scan.

    ``qhat_table[c_idx, j]`` is the estimate at penalty scale
    ``c_grid[c_idx]`` on the leading ``subsample_sizes[j]`` series of the
    permuted panel.  ``intervals`` lists every maximal run of the grid
    where the estimate is stable (S_c = 0 and the full-sample estimate
    constant) as (start_idx, end_idx_inclusive, q).
    """

    c_grid: np.ndarray
    subsample_sizes: tuple[int, ...]
    qhat_table: np.ndarray
    s_curve: np.ndarray
    q_by_c: np.ndarray
    intervals: tuple[tuple[int, int, int], ...]
    selected_c: float | None
    selected_q: int | None
    permutation: np.ndarray
    seed: int
    settings: dict = dc_field(default_factory=dict)


class NoSecondIntervalError(NumericError):
    """Raised when the scan finds fewer than two stability intervals.

    The full scan (with ``selected_q`` / ``selected_c`` set to None) is
    attached as ``.scan`` so the S_c curve can still be emitted for
    manual inspection.
    """

    def __init__(self, message: str, scan: StabilityScan):
        super().__init__(message)
        self.scan = scan


def _stable_runs(qhat_table: np.ndarray, q_full: np.ndarray):
    """Maximal index runs where all subsamples agree on one estimate.

    A run ends when agreement breaks or when the agreed value changes
    (adjacent plateaus with different q are distinct intervals).
    """
    stable = qhat_table.max(axis=1) == qhat_table.min(axis=1)
    runs = []
    i, total = 0, len(stable)
    while i < total:
        if not stable[i]:
            i += 1
            continue
        j = i
        while j + 1 < total and stable[j + 1] and q_full[j + 1] == q_full[i]:
            j += 1
        runs.append((i, j, int(q_full[i])))
        i = j + 1
    return runs


def stability_scan(
    field: LatticeField,
    q_max: int,
    c_grid,
    subsample_sizes=None,
    kernels="epanechnikov",
    bw=None,
    seed: int = 0,
    c_manual: float | None = None,
    min_run_fraction: float = 0.005,
) -> StabilityScan:
    """Calibrate the penalty scale and select the factor count.

    One seeded random permutation of the series is drawn; for every
    penalty scale in ``c_grid`` and every leading subsample of the
    permuted panel the factor count is estimated, and the selected
    answer is the common full-sample estimate on the second stability
    interval of c -> S_c.  The spectral estimate is assembled once at
    full n; subsample estimates use its leading principal submatrices,
    which is what re-estimation on the subsample would produce anyway.

    ``subsample_sizes`` defaults to n - 5j, j = 1..16 (clipped to stay
    above q_max + 2); the full size n is always included.  ``c_manual``
    bypasses interval detection and reads the estimate at the nearest
    grid scale.  Runs shorter than ``min_run_fraction`` of the grid are
    ignored when choosing the second interval (the reported interval
    list is unfiltered).
    """
    n = field.n
    if not 0 <= q_max < n:
        raise ConfigError(f"q_max={q_max} must satisfy 0 <= q_max < n={n}")
    c_grid = np.asarray(list(c_grid), dtype=np.float64)
    if c_grid.ndim != 1 or len(c_grid) < 2:
        raise ConfigError("c_grid must contain at least two scales")
    if np.any(np.diff(c_grid) <= 0) or c_grid[0] < 0:
        raise ConfigError("c_grid must be non-negative and strictly increasing")
    kernels = resolve_kernels(kernels)
    if bw is None:
        bw = default_bandwidths(field.dims)
    bw = validate_bandwidths(bw, field.dims)
    if subsample_sizes is None:
        sizes = [n - 5 * j for j in range(1, 17) if n - 5 * j > max(q_max + 2, 2)]
    else:
        sizes = [int(s) for s in subsample_sizes]
    sizes = sorted(set(sizes) | {n})
    if sizes[0] <= q_max:
        raise ConfigError(f"smallest subsample {sizes[0]} must exceed q_max={q_max}")
    if sizes[0] < 1 or sizes[-1] > n:
        raise ConfigError("subsample sizes must lie in 1..n")

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    perm = rng.permutation(n)

    autocov = sample_autocovariance(field, bw)
    permuted = AutocovarianceSet(autocov.window, autocov.gammas[:, perm][:, :, perm])
    estimate = spectral_from_autocovariance(permuted, kernels)
    half = estimate.grid.half_count
    weights = estimate.grid.pair_weights
    gsize = estimate.grid.size
    smoothness = tuple(k.smoothness for k in kernels)

    n_c, n_j = len(c_grid), len(sizes)
    qhat = np.empty((n_c, n_j), dtype=np.int64)
    for j, m in enumerate(sizes):
        vals = np.linalg.eigvalsh(estimate.matrices[:half, :m, :m])[:, ::-1]
        means = (weights @ np.maximum(vals, 0.0)) / gsize
        tails = _tail_means(means, q_max)
        if np.any(tails <= 0.0):
            raise NumericError(f"degenerate spectrum on subsample of size {m}")
        base = np.log(tails)
        pen = penalty_value(m, field.dims, bw, smoothness)
        ks = np.arange(q_max + 1)
        scores = base[None, :] + np.outer(c_grid * pen, ks)
        qhat[:, j] = np.argmin(scores, axis=1)

    q_full = qhat[:, -1]
    mean_q = qhat.mean(axis=1)
    s_curve = np.mean((qhat - mean_q[:, None]) ** 2, axis=1)
    intervals = tuple(_stable_runs(qhat, q_full))

    settings = {
        "q_max": int(q_max),
        "bw": list(bw),
        "kernels": [k.kind for k in kernels],
        "subsample_sizes": [int(s) for s in sizes],
        "seed": int(seed),
        "c_grid": [float(c_grid[0]), float(c_grid[-1]), len(c_grid)],
    }

    def build(selected_c, selected_q):
        return StabilityScan(
            c_grid, tuple(sizes), qhat, s_curve, q_full, intervals,
            selected_c, selected_q, perm, seed, settings,
        )

    if c_manual is not None:
        idx = int(np.argmin(np.abs(c_grid - c_manual)))
        return build(float(c_grid[idx]), int(q_full[idx]))

    min_len = max(2, round(min_run_fraction * n_c))
    candidates = [iv for iv in intervals if iv[1] - iv[0] + 1 >= min_len]
    if len(candidates) < 2:
        raise NoSecondIntervalError(
            "no second stability interval; widen c_grid", build(None, None)
        )
    lo, hi, q_sel = candidates[1]
    mid = (lo + hi) // 2
    return build(float(c_grid[mid]), int(q_sel))


def scan_to_csv(scan: StabilityScan, path) -> None:
    """Write the scan curve: columns c, S_c, qhat_full."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["c", "S_c", "qhat_full"])
        for c, s, q in zip(scan.c_grid, scan.s_curve, scan.q_by_c):
            writer.writerow([f"{c:.17g}", f"{s:.17g}", int(q)])


def scan_summary_json(scan: StabilityScan, path) -> None:
    payload = {
        "selected_c": scan.selected_c,
        "selected_q": scan.selected_q,
        "intervals": [
            {
                "c_start": float(scan.c_grid[lo]),
                "c_end": float(scan.c_grid[hi]),
                "q": q,
                "points": hi - lo + 1,
            }
            for lo, hi, q in scan.intervals
        ],
        "settings": scan.settings,
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2)
