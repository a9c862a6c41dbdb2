"""Sample autocovariances and the smoothed spectral density matrix.

The spectral density of the n-dimensional field is estimated on a
discrete frequency grid by Fourier-transforming kernel-weighted sample
autocovariances over a bandwidth-limited lag window:

    Sigma_hat(theta) = sum_{|h_d| <= B_d} Gamma_hat(h)
                       * K1(h1/B1) K2(h2/B2) K3(h3/B3) * exp(-i<h, theta>)

with the biased sample autocovariance

    Gamma_hat(h) = (1 / (S1 S2 T)) * sum_varsigma x_varsigma x_{varsigma-h}^T

summed over all lattice points where both indices are in range (the
divisor is the full sample size, not the overlap count).  Because the
kernels vanish outside [-1, 1], this lag-window form is algebraically
identical to the direct double sum over all pairs of lattice points,
at a small fraction of the cost.

Frequencies live on a symmetric grid of (2*B_d + 1) points per axis,
theta_d = 2*pi*h_d / (2*B_d + 1) for integer h_d in [-B_d, B_d], i.e.
equispaced modulo 2*pi.  Integrals over frequency become grid averages
(the continuous normalization 8 pi^3 becomes the grid size G), and the
spacing makes those quadratures exact for the lag window at hand: any
lag polynomial of degree up to 2*B_d is integrated exactly, so the
grid mean of the estimate recovers Gamma_hat(0) identically.

All estimates are Hermitian-symmetrized and mirror-filled so that
Sigma_hat(theta)^dagger == Sigma_hat(theta) and
Sigma_hat(-theta) == conj(Sigma_hat(theta)) hold exactly as stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .field import LatticeField

__all__ = [
    "Kernel",
    "make_kernel",
    "kernel_eval",
    "default_bandwidths",
    "validate_bandwidths",
    "FrequencyGrid",
    "AutocovarianceSet",
    "sample_autocovariance",
    "SpectralDensityEstimate",
    "estimate_spectral_density",
    "export_spectral_json",
]

# Smoothness exponents: |K(u) - 1| = O(|u|^theta) near zero.  The
# truncated kernel is exactly 1 on its support, so any finite exponent
# is valid; a large constant keeps penalty formulas finite.
_KERNEL_SMOOTHNESS = {"epanechnikov": 2.0, "bartlett": 1.0, "truncated": 50.0}

_KERNEL_ALIASES = {
    "ep": "epanechnikov",
    "epanechnikov": "epanechnikov",
    "bartlett": "bartlett",
    "trunc": "truncated",
    "truncated": "truncated",
}


@dataclass(frozen=True)
class Kernel:
    """Symmetric lag-window kernel with K(0) = 1 and support [-1, 1]."""

    kind: str
    smoothness: float

    def __call__(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "epanechnikov":
            return np.maximum(0.0, 1.0 - u * u)
        if self.kind == "bartlett":
            return np.maximum(0.0, 1.0 - np.abs(u))
        if self.kind == "truncated":
            return (np.abs(u) <= 1.0).astype(np.float64)
        raise ConfigError(f"unknown kernel kind {self.kind!r}")


def make_kernel(kind: str) -> Kernel:
    """Kernel by name; accepts the aliases ep / bartlett / trunc."""
    canonical = _KERNEL_ALIASES.get(kind.lower())
    if canonical is None:
        raise ConfigError(f"unknown kernel {kind!r}; expected one of {sorted(set(_KERNEL_ALIASES))}")
    return Kernel(canonical, _KERNEL_SMOOTHNESS[canonical])


def kernel_eval(kernel: Kernel, u) -> np.ndarray:
    """Evaluate a kernel at scaled lag u (scalar or array)."""
    return kernel(u)


def resolve_kernels(kernels) -> tuple[Kernel, Kernel, Kernel]:
    """Normalize a kernel spec (name, Kernel, or a triple) to a triple."""
    if isinstance(kernels, (str, Kernel)):
        kernels = (kernels, kernels, kernels)
    kernels = tuple(k if isinstance(k, Kernel) else make_kernel(k) for k in kernels)
    if len(kernels) != 3:
        raise ConfigError("expected one kernel per axis (three total)")
    return kernels


def default_bandwidths(dims) -> tuple[int, int, int]:
    """Bandwidths B_d = max(2, round(dim^(3/7))), capped at dim - 1.

    The 3/7 exponent is the optimal-rate choice for a kernel with
    quadratic smoothness (epanechnikov).  Degenerate axes (extent 1)
    get bandwidth 0, which collapses the axis to the single zero
    frequency.
    """
    out = []
    for d in dims:
        if d <= 1:
            out.append(0)
        else:
            out.append(int(min(d - 1, max(2, round(d ** (3.0 / 7.0))))))
    return tuple(out)


def validate_bandwidths(bw, dims) -> tuple[int, int, int]:
    bw = tuple(int(b) for b in bw)
    if len(bw) != 3:
        raise ConfigError("bandwidths must be a triple (B_S1, B_S2, B_T)")
    for b, d, name in zip(bw, dims, ("S1", "S2", "T")):
        if b >= d:
            raise ConfigError(f"bandwidth B_{name}={b} must be < extent {name}={d}")
        if b < 1 and d > 1:
            raise ConfigError(f"bandwidth B_{name}={b} must be >= 1 for extent {name}={d}")
        if b < 0:
            raise ConfigError(f"bandwidth B_{name}={b} must be >= 0")
    return bw


@dataclass(frozen=True)
class FrequencyGrid:
    """Symmetric discrete frequency grid, 2*B_d + 1 points per axis.

    Axis frequencies are theta = 2*pi*h / (2*B_d + 1) for h in
    [-B_d, B_d] (equispaced modulo 2*pi, zero included exactly once,
    the endpoint pi excluded so no frequency is double-counted).  Grid
    points are stored in C order over (h1 + B1, h2 + B2, h3 + B3),
    which makes negation an index reversal: the negated frequency of
    grid index g is G - 1 - g, and the zero frequency sits exactly once
    at the central index (G - 1) // 2.
    """

    bandwidths: tuple[int, int, int]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(2 * b + 1 for b in self.bandwidths)

    @property
    def size(self) -> int:
        f1, f2, f3 = self.shape
        return f1 * f2 * f3

    @property
    def zero_index(self) -> int:
        return (self.size - 1) // 2

    @property
    def half_count(self) -> int:
        """Number of grid points in the non-redundant half (zero included)."""
        return self.zero_index + 1

    def negation(self, g: int) -> int:
        return self.size - 1 - g

    def axis_offsets(self, axis: int) -> np.ndarray:
        b = self.bandwidths[axis]
        return np.arange(-b, b + 1)

    def axis_frequencies(self, axis: int) -> np.ndarray:
        b = self.bandwidths[axis]
        if b == 0:
            return np.zeros(1)
        return 2.0 * np.pi * self.axis_offsets(axis) / (2 * b + 1)

    @property
    def offsets(self) -> np.ndarray:
        """(G, 3) integer offsets h for every grid point."""
        grids = np.meshgrid(*(self.axis_offsets(d) for d in range(3)), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @property
    def points(self) -> np.ndarray:
        """(G, 3) frequency vectors theta_h for every grid point."""
        grids = np.meshgrid(*(self.axis_frequencies(d) for d in range(3)), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @property
    def pair_weights(self) -> np.ndarray:
        """Multiplicities that turn half-grid sums into full-grid sums."""
        w = np.full(self.half_count, 2.0)
        w[-1] = 1.0
        return w


# ---------------------------------------------------------------------------
# Sample autocovariances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AutocovarianceSet:
    """Sample autocovariance matrices on the lag window |h_d| <= B_d.

    ``gammas`` is (L, n, n) in C order over (h1 + B1, h2 + B2, h3 + B3);
    the reversal Gamma(-h) = Gamma(h)^T holds exactly by construction
    (negative-half lags are mirror-filled transposes).
    """

    window: tuple[int, int, int]
    gammas: np.ndarray

    @property
    def lags(self) -> np.ndarray:
        return FrequencyGrid(self.window).offsets

    def lag_index(self, h) -> int:
        b1, b2, b3 = self.window
        h1, h2, h3 = h
        if abs(h1) > b1 or abs(h2) > b2 or abs(h3) > b3:
            raise ConfigError(f"lag {tuple(h)} outside window {self.window}")
        return ((h1 + b1) * (2 * b2 + 1) + (h2 + b2)) * (2 * b3 + 1) + (h3 + b3)

    def gamma(self, h) -> np.ndarray:
        """Gamma_hat(h) for one lag triple."""
        return self.gammas[self.lag_index(h)]


def _lag_slices(h: int, extent: int) -> tuple[slice, slice]:
    # Index ranges such that both varsigma and varsigma - h stay in the
    # lattice: the leading slice indexes x at varsigma, the trailing one
    # at varsigma - h (0-based).
    if h >= 0:
        return slice(h, extent), slice(0, extent - h)
    return slice(0, extent + h), slice(-h, extent)


def _autocov_direct(values: np.ndarray, window) -> np.ndarray:
    n = values.shape[0]
    dims = values.shape[1:]
    volume = dims[0] * dims[1] * dims[2]
    grid = FrequencyGrid(tuple(window))
    lags = grid.offsets
    ncanon = grid.half_count
    out = np.empty((grid.size, n, n))
    for i in range(ncanon):
        h = lags[i]
        sl = [_lag_slices(int(h[d]), dims[d]) for d in range(3)]
        lead = values[:, sl[0][0], sl[1][0], sl[2][0]].reshape(n, -1)
        trail = values[:, sl[0][1], sl[1][1], sl[2][1]].reshape(n, -1)
        out[i] = lead @ trail.T / volume
        out[grid.size - 1 - i] = out[i].T
    center = grid.zero_index
    out[center] = 0.5 * (out[center] + out[center].T)
    return out


def _next_fast_len(target: int) -> int:
    # smallest 5-smooth integer >= target
    n = target
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def _autocov_fft(values: np.ndarray, window) -> np.ndarray:
    n = values.shape[0]
    dims = values.shape[1:]
    volume = dims[0] * dims[1] * dims[2]
    grid = FrequencyGrid(tuple(window))
    pad = tuple(_next_fast_len(d + b + 1) for d, b in zip(dims, window))
    spec = np.fft.rfftn(values, s=pad, axes=(1, 2, 3))
    # positions of lags -B..B on the circular axes
    sel = [np.arange(-b, b + 1) % p for b, p in zip(window, pad)]
    out = np.empty((grid.size, n, n))
    for i in range(n):
        cross = spec[i][None, ...] * np.conj(spec)
        corr = np.fft.irfftn(cross, s=pad, axes=(1, 2, 3))
        box = corr[:, sel[0]][:, :, sel[1]][:, :, :, sel[2]] / volume
        out[:, i, :] = box.reshape(n, -1).T
    # enforce the exact reversal symmetry by mirror-filling transposes
    half = grid.half_count
    center = grid.zero_index
    out[center] = 0.5 * (out[center] + out[center].T)
    out[grid.size - half:] = out[:half][::-1].transpose(0, 2, 1)
    return out


def sample_autocovariance(field: LatticeField, window, method: str = "auto") -> AutocovarianceSet:
    """Sample autocovariances over the symmetric lag window.

    Gamma_hat(h) = (1/(S1 S2 T)) sum x_varsigma x_{varsigma-h}^T over
    all lattice points where both varsigma and varsigma - h are in
    range; the divisor is always the full lattice size (triangular /
    biased normalization).  Lags with empty overlap are exactly zero.

    ``method`` selects the computation: "direct" (one matrix product
    per lag), "fft" (cross-correlation via padded FFTs), or "auto".
    Both produce the same values up to machine rounding; the reversal
    invariant is exact for either.
    """
    if not field.demeaned:
        raise ConfigError("sample_autocovariance requires a demeaned field")
    window = validate_bandwidths(window, field.dims)
    if method == "auto":
        grid = FrequencyGrid(window)
        direct_cost = grid.half_count * field.n * field.n * field.lattice_size
        method = "fft" if direct_cost > 2e8 else "direct"
    if method == "direct":
        gammas = _autocov_direct(field.values, window)
    elif method == "fft":
        gammas = _autocov_fft(field.values, window)
    else:
        raise ConfigError(f"unknown autocovariance method {method!r}")
    return AutocovarianceSet(window, gammas)


# ---------------------------------------------------------------------------
# Spectral density estimate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralDensityEstimate:
    """Kernel-smoothed spectral density matrices on the frequency grid.

    ``matrices`` is (G, n, n) complex in grid order.  Stored matrices
    are exactly Hermitian and exactly conjugate-symmetric across
    negated frequencies (the negative half is mirror-filled).
    """

    grid: FrequencyGrid
    matrices: np.ndarray
    source_autocov: AutocovarianceSet
    kernels: tuple[Kernel, Kernel, Kernel]

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    def at(self, g: int) -> np.ndarray:
        return self.matrices[g]


def kernel_lag_weights(kernels, window) -> np.ndarray:
    """Product kernel weights K1(h1/B1) K2(h2/B2) K3(h3/B3) per lag."""
    kernels = resolve_kernels(kernels)
    per_axis = []
    for k, b in zip(kernels, window):
        h = np.arange(-b, b + 1)
        u = h / b if b > 0 else np.zeros(1)
        per_axis.append(k(u))
    w = per_axis[0][:, None, None] * per_axis[1][None, :, None] * per_axis[2][None, None, :]
    return w.ravel()


def _dft_matrix(grid: FrequencyGrid, axis: int, sign: float) -> np.ndarray:
    h = grid.axis_offsets(axis)
    theta = grid.axis_frequencies(axis)
    return np.exp(sign * 1j * np.outer(theta, h))


def spectral_from_autocovariance(autocov: AutocovarianceSet, kernels) -> SpectralDensityEstimate:
    """Assemble the spectral estimate from stored autocovariances."""
    kernels = resolve_kernels(kernels)
    grid = FrequencyGrid(autocov.window)
    n = autocov.gammas.shape[1]
    w = kernel_lag_weights(kernels, autocov.window)
    shape = grid.shape
    gw = (autocov.gammas * w[:, None, None]).reshape(*shape, n, n)
    # separable DFT, one small matrix product per axis
    e1 = _dft_matrix(grid, 0, -1.0)
    e2 = _dft_matrix(grid, 1, -1.0)
    e3 = _dft_matrix(grid, 2, -1.0)
    out = np.einsum("fa,abcij->fbcij", e1, gw, optimize=True)
    out = np.einsum("gb,fbcij->fgcij", e2, out, optimize=True)
    out = np.einsum("hc,fgcij->fghij", e3, out, optimize=True)
    mats = out.reshape(grid.size, n, n)
    # make Hermitianity and conjugate frequency symmetry exact
    half = grid.half_count
    top = 0.5 * (mats[:half] + np.conj(mats[:half].transpose(0, 2, 1)))
    top[-1] = top[-1].real  # zero frequency is a real matrix
    mats[:half] = top
    mats[grid.size - half:] = np.conj(top[::-1])
    return SpectralDensityEstimate(grid, mats, autocov, kernels)


def estimate_spectral_density(
    field: LatticeField, kernels="epanechnikov", bw=None, method: str = "auto"
) -> SpectralDensityEstimate:
    """Lag-window spectral density estimate of a demeaned field.

    Parameters
    ----------
    field : LatticeField
        Demeaned observations.
    kernels : kernel name, Kernel, or triple thereof
        Smoothing kernel per axis (a single value is used for all three).
    bw : (B_S1, B_S2, B_T) or None
        Bandwidths; ``None`` selects :func:`default_bandwidths`.
    """
    if not field.demeaned:
        raise ConfigError("estimate_spectral_density requires a demeaned field")
    if bw is None:
        bw = default_bandwidths(field.dims)
    bw = validate_bandwidths(bw, field.dims)
    autocov = sample_autocovariance(field, bw, method=method)
    return spectral_from_autocovariance(autocov, kernels)


def export_spectral_json(estimate: SpectralDensityEstimate, target) -> None:
    """Dump grid metadata and flattened re/im parts for inspection.

    Not a stability-guaranteed archive format.
    """
    payload = {
        "n": estimate.n,
        "bandwidths": list(estimate.grid.bandwidths),
        "grid_shape": list(estimate.grid.shape),
        "grid_size": estimate.grid.size,
        "kernels": [k.kind for k in estimate.kernels],
        "theta": estimate.grid.points.tolist(),
        "re": estimate.matrices.real.ravel().tolist(),
        "im": estimate.matrices.imag.ravel().tolist(),
    }
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        with open(target, "w", encoding="ascii") as fh:
            json.dump(payload, fh)
    else:
        json.dump(payload, target)
