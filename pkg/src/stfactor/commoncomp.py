"""Common-component recovery via truncated two-sided projection filters.

The estimated common component of series ell at lattice point
varsigma = (s1, s2, t) is the rank-q frequency-domain projection of the
data, brought back to the lag domain and truncated to the window that
is actually available around varsigma:

    chi_hat_{ell,varsigma} = sum_kappa [ C(kappa) x_{varsigma-kappa} ]_ell,

where the real coefficient matrices are inverse grid transforms of the
projector built from the leading dynamic eigenvector rows P(theta),

    C(kappa) = (1/G) sum_theta P(theta)^dagger P(theta) e^{i<kappa,theta>},

and kappa runs over per-axis ranges clipped near the lattice boundary:

    kappa_low_d  = max(coord_d - dim_d, -M_d),
    kappa_high_d = min(coord_d - 1,      M_d).

Note the clipped window is exactly "all lattice points within M_d of
coord_d", so the boundary truncation is equivalent to running the full
symmetric window over zero-padded data.  The production path exploits
this together with the separability of e^{i<kappa,theta>} to apply the
filter in the frequency domain with sliding-window sums, without ever
materializing the coefficient tensor; the two forms are algebraically
identical.  Truncation lags are capped at the bandwidths (M_d <= B_d)
so that extracting lag-domain coefficients from the (2B_d+1)-point
frequency grid is alias-free.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .field import LatticeField
from .dynpca import DynamicEigenSystem, eigensystem_from_field
from .spectral import FrequencyGrid, default_bandwidths, resolve_kernels, validate_bandwidths

__all__ = [
    "ProjectionFilter",
    "projection_filter",
    "FilterCoefficients",
    "filter_coefficients",
    "apply_filter_coefficients",
    "inverse_grid_transform",
    "truncation_ranges",
    "default_truncation",
    "validate_truncation",
    "interior_mask",
    "CommonComponentEstimate",
    "estimate_common_component",
]

# Imaginary parts of the inverse-transformed coefficients must be pure
# rounding noise; anything above this ratio signals broken conjugate
# symmetry upstream.
COEFF_IMAG_RTOL = 1e-9


def default_truncation(bw) -> tuple[int, int, int]:
    """Default truncation M_d = B_d (maximal alias-free window)."""
    return tuple(int(b) for b in bw)


def validate_truncation(trunc, bw, dims) -> tuple[int, int, int]:
    trunc = tuple(int(m) for m in trunc)
    if len(trunc) != 3:
        raise ConfigError("truncation must be a triple (M_S1, M_S2, M_T)")
    for m, b, d, name in zip(trunc, bw, dims, ("S1", "S2", "T")):
        if m < 0:
            raise ConfigError(f"truncation M_{name}={m} must be >= 0")
        if m > b:
            raise ConfigError(f"truncation M_{name}={m} exceeds bandwidth {b} (lag aliasing)")
        if m >= d:
            raise ConfigError(f"truncation M_{name}={m} must be < extent {name}={d}")
    return trunc


def truncation_ranges(point, dims, trunc) -> tuple[int, int, int, int, int, int]:
    """Per-axis truncated lag ranges at a lattice point (1-based coords).

    Returns (lo1, hi1, lo2, hi2, lo3, hi3) with
    lo_d = max(coord_d - dim_d, -M_d) and hi_d = min(coord_d - 1, M_d).
    """
    out = []
    for coord, dim, m in zip(point, dims, trunc):
        if not 1 <= coord <= dim:
            raise ConfigError(f"lattice point {tuple(point)} outside extents {tuple(dims)}")
        out.append(max(coord - dim, -m))
        out.append(min(coord - 1, m))
    return tuple(out)


def interior_mask(dims, trunc) -> np.ndarray:
    """Boolean (S1, S2, T) mask of points with the full symmetric window.

    A point has the complete window iff M_d + 1 <= coord_d <= dim_d - M_d
    on every axis.
    """
    masks = []
    for dim, m in zip(dims, trunc):
        coords = np.arange(1, dim + 1)
        masks.append((coords >= m + 1) & (coords <= dim - m))
    return masks[0][:, None, None] & masks[1][None, :, None] & masks[2][None, None, :]


@dataclass(frozen=True)
class ProjectionFilter:
    """Rank-q frequency-domain projector K(theta) = P(theta)^dag P(theta).

    Stored in factored form (the eigenvector rows); ``khat`` materializes
    the n x n projector at one grid index, ``khat_stack`` at all of them
    (mind the G*n^2 memory at large n).
    """

    grid: FrequencyGrid
    eigenvector_rows: np.ndarray  # (G, q, n) complex
    q: int

    @property
    def n(self) -> int:
        return self.eigenvector_rows.shape[2]

    def khat(self, g: int) -> np.ndarray:
        rows = self.eigenvector_rows[g]
        return np.conj(rows.T) @ rows

    def khat_stack(self) -> np.ndarray:
        rows = self.eigenvector_rows
        return np.einsum("gqi,gqj->gij", np.conj(rows), rows, optimize=True)


def projection_filter(system: DynamicEigenSystem, q: int) -> ProjectionFilter:
    """Projector onto the span of the top-q eigenvector rows, per frequency."""
    if q > system.q_keep:
        raise ConfigError(f"q={q} exceeds the {system.q_keep} eigenvector rows kept")
    if q < 0:
        raise ConfigError("q must be >= 0")
    return ProjectionFilter(system.grid, system.eigenvectors[:, :q, :].copy(), q)


@dataclass(frozen=True)
class FilterCoefficients:
    """Real lag-domain coefficients of the truncated projection filter.

    ``coeffs`` is (L, n, n) over lags |kappa_d| <= M_d in C order
    (kappa_d + M_d per axis); imaginary parts are discarded only after
    verifying they are rounding noise.
    """

    trunc: tuple[int, int, int]
    coeffs: np.ndarray

    @property
    def lags(self) -> np.ndarray:
        return FrequencyGrid(self.trunc).offsets

    def coeff(self, kappa) -> np.ndarray:
        m1, m2, m3 = self.trunc
        k1, k2, k3 = kappa
        if abs(k1) > m1 or abs(k2) > m2 or abs(k3) > m3:
            raise ConfigError(f"lag {tuple(kappa)} outside truncation window {self.trunc}")
        idx = ((k1 + m1) * (2 * m2 + 1) + (k2 + m2)) * (2 * m3 + 1) + (k3 + m3)
        return self.coeffs[idx]


def inverse_grid_transform(matrices: np.ndarray, grid: FrequencyGrid, trunc) -> np.ndarray:
    """Lag coefficients (1/G) sum_theta A(theta) e^{i<kappa,theta>}.

    ``matrices`` is a (G, n, n) frequency stack; the result is complex
    of shape (2M1+1, 2M2+1, 2M3+1, n, n) over lags |kappa_d| <= M_d,
    computed with one small separable transform per axis.
    """
    trunc = tuple(int(m) for m in trunc)
    for m, b in zip(trunc, grid.bandwidths):
        if m < 0 or m > b:
            raise ConfigError(f"truncation {trunc} must satisfy 0 <= M_d <= B_d={grid.bandwidths}")
    n = matrices.shape[-1]
    out = matrices.reshape(*grid.shape, n, n)

    def phase(axis: int) -> np.ndarray:
        kappas = np.arange(-trunc[axis], trunc[axis] + 1)
        return np.exp(1j * np.outer(kappas, grid.axis_frequencies(axis)))

    out = np.einsum("kf,fbcij->kbcij", phase(0), out, optimize=True)
    out = np.einsum("kf,afcij->akcij", phase(1), out, optimize=True)
    out = np.einsum("kf,abfij->abkij", phase(2), out, optimize=True)
    return out / grid.size


def filter_coefficients(pf: ProjectionFilter, trunc=None) -> FilterCoefficients:
    """Inverse grid transform of the projector onto the truncation window.

    C(kappa) = (1/G) sum_theta K(theta) e^{i<kappa,theta>}.  Conjugate
    symmetry of K across negated frequencies forces the result to be
    real; the imaginary residue is checked against
    :data:`COEFF_IMAG_RTOL` before being dropped.
    """
    grid = pf.grid
    if trunc is None:
        trunc = default_truncation(grid.bandwidths)
    out = inverse_grid_transform(pf.khat_stack(), grid, trunc)
    trunc = tuple(int(m) for m in trunc)
    re, im = out.real, out.imag
    scale = np.abs(re).max()
    if scale > 0 and np.abs(im).max() > COEFF_IMAG_RTOL * scale:
        raise NumericError(
            "filter coefficients have non-negligible imaginary part; "
            "conjugate frequency symmetry broken upstream"
        )
    coeffs = re.reshape(-1, pf.n, pf.n).copy()
    return FilterCoefficients(trunc, coeffs)


def apply_filter_coefficients(fc: FilterCoefficients, values: np.ndarray) -> np.ndarray:
    """Convolve fixed lag coefficients over the lattice, clipped at edges.

    chi[ell, s] = sum_{kappa in ranges(s)} [C(kappa) x_{s-kappa}]_ell;
    the boundary clipping is realized by zero-padding, which drops
    exactly the out-of-lattice terms.  Linear in ``values`` by
    construction.
    """
    n = values.shape[0]
    dims = values.shape[1:]
    m1, m2, m3 = fc.trunc
    padded = np.zeros((n, dims[0] + 2 * m1, dims[1] + 2 * m2, dims[2] + 2 * m3))
    padded[:, m1:m1 + dims[0], m2:m2 + dims[1], m3:m3 + dims[2]] = values
    out = np.zeros_like(values)
    lags = fc.lags
    for idx in range(fc.coeffs.shape[0]):
        k1, k2, k3 = (int(k) for k in lags[idx])
        shifted = padded[
            :,
            m1 - k1:m1 - k1 + dims[0],
            m2 - k2:m2 - k2 + dims[1],
            m3 - k3:m3 - k3 + dims[2],
        ]
        out += np.tensordot(fc.coeffs[idx], shifted, axes=(1, 0))
    return out


def _windowed_axis_transform(arr: np.ndarray, axis: int, m: int, theta: float) -> np.ndarray:
    """Sliding sum w[s] = sum_{u in [s-m, s+m] cap lattice} e^{i(s-u)theta} x[u]."""
    if m == 0:
        return arr.astype(np.complex128, copy=False)
    x = np.moveaxis(arr, axis, -1)
    extent = x.shape[-1]
    pos = np.arange(extent)
    rotated = x * np.exp(-1j * theta * pos)
    csum = np.zeros(x.shape[:-1] + (extent + 1,), dtype=np.complex128)
    np.cumsum(rotated, axis=-1, out=csum[..., 1:])
    lo = np.maximum(0, pos - m)
    hi = np.minimum(extent - 1, pos + m)
    win = csum[..., hi + 1] - csum[..., lo]
    win *= np.exp(1j * theta * pos)
    return np.moveaxis(win, -1, axis)


def _apply_projection_frequency(
    values: np.ndarray, system: DynamicEigenSystem, q: int, trunc
) -> np.ndarray:
    """chi = (1/G) sum_theta P^dag P [windowed transform of x](theta).

    Equals the truncated lag-domain convolution exactly (finite sums
    exchanged).  Only the non-negative half of the grid is visited;
    negated frequencies contribute the complex conjugate, so each pair
    adds twice the real part.
    """
    grid = system.grid
    n = values.shape[0]
    dims = values.shape[1:]
    volume = dims[0] * dims[1] * dims[2]
    shape = grid.shape
    axis_thetas = [grid.axis_frequencies(d) for d in range(3)]
    half = grid.half_count
    chi = np.zeros((n, volume))
    if q == 0:
        return chi.reshape(values.shape)
    # The per-axis transforms depend on one frequency component each, so
    # stage them hierarchically; the time-axis transform acts on the
    # lattice axes only and therefore commutes with the series-space
    # projection, which lets it run on the q-dimensional factor scores
    # instead of all n series.
    for i1 in range(shape[0]):
        if i1 * shape[1] * shape[2] >= half:
            break
        z1 = _windowed_axis_transform(values, 1, trunc[0], axis_thetas[0][i1])
        for i2 in range(shape[1]):
            base = (i1 * shape[1] + i2) * shape[2]
            if base >= half:
                break
            z2 = _windowed_axis_transform(z1, 2, trunc[1], axis_thetas[1][i2]).reshape(n, volume)
            count = min(shape[2], half - base)
            rows = system.eigenvectors[base:base + count, :q, :]  # (count, q, n)
            scores = np.einsum("fqn,nv->fqv", rows, z2, optimize=True)
            scores = scores.reshape(count, q, dims[0], dims[1], dims[2])
            for i3 in range(count):
                scores[i3] = _windowed_axis_transform(
                    scores[i3], 3, trunc[2], axis_thetas[2][i3]
                )
            weights = np.full(count, 2.0)
            if base + count == half:
                weights[-1] = 1.0
            back = np.einsum(
                "f,fqn,fqv->nv", weights, np.conj(rows), scores.reshape(count, q, volume),
                optimize=True,
            )
            chi += back.real / grid.size
    return chi.reshape(values.shape)


@dataclass(frozen=True)
class CommonComponentEstimate:
    """Estimated common component plus the region of full filter support."""

    chi: np.ndarray
    mask: np.ndarray
    settings: dict

    @property
    def interior(self) -> np.ndarray:
        """chi restricted to interior points, shape (n, #interior)."""
        return self.chi[:, self.mask]

    def energy_split(self, values: np.ndarray) -> dict:
        """Decomposition diagnostics of x = chi + residual.

        In finite samples chi and the residual are not exactly
        orthogonal, so the split is reported with its cross term rather
        than asserted to be exact.
        """
        resid = values - self.chi
        return {
            "total_energy": float(np.sum(values**2)),
            "common_energy": float(np.sum(self.chi**2)),
            "residual_energy": float(np.sum(resid**2)),
            "cross_term": float(np.sum(self.chi * resid)),
        }

    def to_json_sidecar(self, target) -> None:
        payload = dict(self.settings)
        payload["interior_lower"] = [int(m) + 1 for m in self.settings["trunc"]]
        payload["interior_upper"] = [
            int(d) - int(m) for d, m in zip(self.settings["dims"], self.settings["trunc"])
        ]
        with open(target, "w", encoding="ascii") as fh:
            json.dump(payload, fh, indent=2)


def estimate_common_component(
    field: LatticeField, q: int, kernels="epanechnikov", bw=None, trunc=None
) -> CommonComponentEstimate:
    """Rank-q common component of a demeaned field (full estimation run).

    Pipeline: spectral density on the frequency grid, leading dynamic
    eigenvectors, projection filter, truncated two-sided filtering of
    the data.  ``q = n`` reproduces the data (complete projector);
    ``q = 0`` returns zeros.
    """
    if not field.demeaned:
        raise ConfigError("estimate_common_component requires a demeaned field")
    if not 0 <= q <= field.n:
        raise ConfigError(f"q={q} out of range 0..{field.n}")
    kernels = resolve_kernels(kernels)
    if bw is None:
        bw = default_bandwidths(field.dims)
    bw = validate_bandwidths(bw, field.dims)
    if trunc is None:
        trunc = default_truncation(bw)
    trunc = validate_truncation(trunc, bw, field.dims)
    system = eigensystem_from_field(field, kernels, bw, q_keep=q)
    top = system.eigenvalues[:, : max(q, 1)]
    if q > 0 and np.all(top <= 0):
        warnings.warn("degenerate spectrum: all leading eigenvalues are <= 0", RuntimeWarning)
    chi = _apply_projection_frequency(field.values, system, q, trunc)
    settings = {
        "n": field.n,
        "dims": list(field.dims),
        "q": int(q),
        "kernels": [k.kind for k in kernels],
        "bw": list(bw),
        "trunc": list(trunc),
    }
    return CommonComponentEstimate(chi, interior_mask(field.dims, trunc), settings)
