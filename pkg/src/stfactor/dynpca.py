"""Frequency-wise eigenstructure of the spectral density estimate.

At every grid frequency the Hermitian spectral density matrix is
decomposed into descending eigenvalues and orthonormal row
eigenvectors.  The leading eigenvalues, averaged over the grid, carry
the factor-detection signature: under a q-factor structure the top q
averaged eigenvalues grow with the cross-sectional dimension while the
(q+1)-th stays bounded (the eigen-gap).

Eigenvector phases are not identifiable; each row is rotated so its
largest-modulus entry is real-positive, which makes output
deterministic without affecting any projector built from the rows.
Conjugate pairing p_j(-theta) = conj(p_j(theta)) is imposed exactly by
computing the non-negative half of the grid and mirror-filling.

For stacked panels with more series than lattice points (n > S1*S2*T)
the same eigenstructure is obtained from the small Gram matrix of the
data instead of the huge n x n spectral matrix; see
:func:`eigensystem_from_field`, which routes automatically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .field import LatticeField
from .spectral import (
    FrequencyGrid,
    SpectralDensityEstimate,
    default_bandwidths,
    estimate_spectral_density,
    resolve_kernels,
    validate_bandwidths,
)

__all__ = [
    "DynamicEigenSystem",
    "eigendecompose_all",
    "eigensystem_from_field",
    "averaged_eigenvalues",
    "eigenvalue_curve_by_size",
    "eigengap_curve",
    "write_eigengap_csv",
]


@dataclass(frozen=True)
class DynamicEigenSystem:
    """Per-frequency eigenvalues and leading eigenvector rows.

    ``eigenvalues`` is (G, n) with descending order at every grid point;
    ``eigenvectors`` is (G, q_keep, n) whose rows p_j(theta) are unit
    norm and satisfy p_j(theta) Sigma(theta) = lambda_j(theta)
    p_j(theta).  Rows at negated frequencies are exact conjugates.
    """

    grid: FrequencyGrid
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    q_keep: int

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[1]

    def eigenvalue_means(self, clamp: bool = False) -> np.ndarray:
        """Grid-averaged eigenvalues (1/G) sum_theta lambda_j(theta)."""
        vals = self.eigenvalues
        if clamp:
            vals = np.maximum(vals, 0.0)
        return vals.mean(axis=0)


def _fix_phases(rows: np.ndarray) -> np.ndarray:
    """Rotate each row so its largest-modulus entry is real positive."""
    if rows.shape[-2] == 0:
        return rows
    idx = np.argmax(np.abs(rows), axis=-1)
    pivot = np.take_along_axis(rows, idx[..., None], axis=-1)[..., 0]
    mod = np.abs(pivot)
    if np.any(mod == 0):
        raise NumericError("zero eigenvector row encountered during phase normalization")
    return rows * (np.conj(pivot) / mod)[..., None]


def _mirror_system(
    grid: FrequencyGrid, half_vals: np.ndarray, half_rows: np.ndarray, q_keep: int
) -> DynamicEigenSystem:
    size, half = grid.size, grid.half_count
    n = half_vals.shape[1]
    eigenvalues = np.empty((size, n))
    eigenvalues[:half] = half_vals
    eigenvalues[size - half:] = half_vals[::-1]
    eigenvectors = np.empty((size, q_keep, n), dtype=np.complex128)
    eigenvectors[:half] = half_rows
    eigenvectors[size - half:] = np.conj(half_rows[::-1])
    return DynamicEigenSystem(grid, eigenvalues, eigenvectors, q_keep)


def eigendecompose_all(estimate: SpectralDensityEstimate, q_keep: int) -> DynamicEigenSystem:
    """Hermitian eigendecomposition at every grid frequency.

    All n eigenvalues are returned per frequency; eigenvector rows are
    kept for the top ``q_keep`` only.  Only the non-negative half of
    the grid is decomposed; the other half is mirror-filled by
    conjugation.  At the zero frequency the (real symmetric) matrix is
    decomposed in real arithmetic so its eigenvectors are exactly real.
    """
    n = estimate.n
    if not 0 <= q_keep <= n:
        raise ConfigError(f"q_keep={q_keep} out of range 0..{n}")
    grid = estimate.grid
    half = grid.half_count
    sub = estimate.matrices[:half]
    finite = np.isfinite(sub.real) & np.isfinite(sub.imag)
    if not finite.all():
        g = int(np.flatnonzero(~finite.all(axis=(1, 2)))[0])
        raise NumericError(f"eigendecomposition failed at grid index {g}")
    try:
        vals, vecs = np.linalg.eigh(sub)
    except np.linalg.LinAlgError as exc:
        for g in range(half):
            try:
                np.linalg.eigh(sub[g])
            except np.linalg.LinAlgError:
                raise NumericError(f"eigendecomposition failed at grid index {g}") from exc
        raise NumericError("eigendecomposition failed") from exc
    if not np.isfinite(vals).all():
        g = int(np.flatnonzero(~np.isfinite(vals).all(axis=1))[0])
        raise NumericError(f"eigendecomposition failed at grid index {g}")
    # zero frequency: real symmetric decomposition for exactly real rows
    vals0, vecs0 = np.linalg.eigh(sub[-1].real)
    vals[-1] = vals0
    vecs[-1] = vecs0
    half_vals = vals[:, ::-1]
    rows = np.conj(np.transpose(vecs, (0, 2, 1)))[:, ::-1, :][:, :q_keep, :]
    rows = _fix_phases(np.ascontiguousarray(rows))
    return _mirror_system(grid, half_vals, rows, q_keep)


# ---------------------------------------------------------------------------
# Gram (dual) route for n >> lattice size
# ---------------------------------------------------------------------------


def _axis_weight_matrix(kernel, extent: int, bandwidth: int, theta: float) -> np.ndarray:
    if bandwidth == 0:
        return np.eye(extent, dtype=np.complex128)
    diff = np.arange(extent)[:, None] - np.arange(extent)[None, :]
    return kernel(diff / bandwidth) * np.exp(-1j * theta * diff)


def _gram_half_matrices(x2d: np.ndarray, kernels, bw, dims):
    """Small-side Hermitian matrices sharing the spectrum of Sigma_hat.

    With X the (n, V) data matrix, V = S1*S2*T, the estimate at theta is
    Sigma_hat(theta) = X W(theta) X^T / V for a Hermitian V x V weight
    W(theta) (Kronecker product of per-axis kernel/phase matrices).  Its
    nonzero eigenvalues coincide with those of
    H(theta) = G^(1/2) W(theta) G^(1/2), where G = X^T X / V, and the
    eigenvector of Sigma_hat for eigenvalue mu with H z = mu z is
    v = X G^(-1/2) z / sqrt(V), automatically unit norm.
    """
    kernels = resolve_kernels(kernels)
    volume = x2d.shape[1]
    grid = FrequencyGrid(tuple(bw))
    gram = x2d.T @ x2d / volume
    gram = 0.5 * (gram + gram.T)
    gvals, gvecs = np.linalg.eigh(gram)
    floor = max(gvals[-1], 0.0) * 1e-13
    pos = gvals > floor
    if not pos.any():
        raise NumericError("degenerate data: Gram matrix has no positive eigenvalues")
    sq = np.sqrt(gvals[pos])
    basis = gvecs[:, pos]
    g_half = (basis * sq) @ basis.T
    g_invhalf = (basis / sq) @ basis.T
    half = grid.half_count
    theta_axes = [grid.axis_frequencies(d) for d in range(3)]
    shape = grid.shape
    hs = np.empty((half, volume, volume), dtype=np.complex128)
    for g in range(half):
        i1, i2, i3 = np.unravel_index(g, shape)
        w1 = _axis_weight_matrix(kernels[0], dims[0], bw[0], theta_axes[0][i1])
        w2 = _axis_weight_matrix(kernels[1], dims[1], bw[1], theta_axes[1][i2])
        w3 = _axis_weight_matrix(kernels[2], dims[2], bw[2], theta_axes[2][i3])
        w = np.kron(np.kron(w1, w2), w3)
        h = g_half @ w @ g_half
        hs[g] = 0.5 * (h + np.conj(h.T))
    hs[half - 1] = hs[half - 1].real
    return grid, hs, g_invhalf


def _gram_eigensystem(x2d: np.ndarray, kernels, bw, dims, q_keep: int) -> DynamicEigenSystem:
    n, volume = x2d.shape
    grid, hs, g_invhalf = _gram_half_matrices(x2d, kernels, bw, dims)
    half = grid.half_count
    mu, z = np.linalg.eigh(hs)
    mu0, z0 = np.linalg.eigh(hs[-1].real)
    mu[-1] = mu0
    z[-1] = z0
    half_vals = np.zeros((half, n))
    half_vals[:, : min(n, volume)] = mu[:, ::-1][:, : min(n, volume)]
    rows = np.zeros((half, q_keep, n), dtype=np.complex128)
    if q_keep > 0:
        if q_keep > min(n, volume):
            raise ConfigError(
                f"q_keep={q_keep} exceeds the rank bound min(n, S1*S2*T)={min(n, volume)}"
            )
        ztop = z[:, :, ::-1][:, :, :q_keep]
        cols = np.einsum("nv,gvq->gnq", x2d @ g_invhalf / np.sqrt(volume), ztop)
        norms = np.linalg.norm(cols, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise NumericError("degenerate eigenvector in Gram route")
        # rows are conjugate transposes of the column eigenvectors
        rows = _fix_phases(np.conj(np.transpose(cols / norms, (0, 2, 1))).copy())
    return _mirror_system(grid, half_vals, rows, q_keep)


def eigensystem_from_field(
    field: LatticeField, kernels="epanechnikov", bw=None, q_keep: int = 0, route: str = "auto"
) -> DynamicEigenSystem:
    """Full pipeline from a demeaned field to its dynamic eigensystem.

    ``route`` picks the computation: "standard" materializes the
    spectral matrices and decomposes them; "gram" works with the
    V x V Gram-side matrices (V = S1*S2*T) and is the right choice for
    stacked panels where n >> V; "auto" selects by shape.  Both routes
    return the same eigenvalues and the same eigenvector rows up to
    numerical rounding.
    """
    if not field.demeaned:
        raise ConfigError("eigensystem_from_field requires a demeaned field")
    if bw is None:
        bw = default_bandwidths(field.dims)
    bw = validate_bandwidths(bw, field.dims)
    if route == "auto":
        route = "gram" if field.lattice_size < field.n else "standard"
    if route == "standard":
        return eigendecompose_all(estimate_spectral_density(field, kernels, bw), q_keep)
    if route == "gram":
        x2d = field.values.reshape(field.n, -1)
        return _gram_eigensystem(x2d, kernels, bw, field.dims, q_keep)
    raise ConfigError(f"unknown eigensystem route {route!r}")


# ---------------------------------------------------------------------------
# Averaged eigenvalue curves
# ---------------------------------------------------------------------------


def averaged_eigenvalues(system: DynamicEigenSystem, top_k: int) -> np.ndarray:
    """Top ``top_k`` eigenvalues averaged over all grid frequencies."""
    if not 1 <= top_k <= system.n:
        raise ConfigError(f"top_k={top_k} out of range 1..{system.n}")
    return system.eigenvalue_means()[:top_k]


def eigenvalue_curve_by_size(
    field: LatticeField, m_values, top_k: int, kernels="epanechnikov", bw=None
) -> np.ndarray:
    """Averaged top eigenvalues of nested leading subpanels.

    Row r holds the grid-averaged top ``top_k`` eigenvalues of the
    spectral estimate restricted to the first ``m_values[r]`` series.
    The estimate for a leading subset of series is exactly the leading
    principal submatrix of the full estimate, so the spectral matrices
    are assembled once and only the eigendecompositions repeat.
    """
    if not field.demeaned:
        raise ConfigError("eigenvalue_curve_by_size requires a demeaned field")
    m_values = [int(m) for m in m_values]
    if min(m_values) < 1 or max(m_values) > field.n:
        raise ConfigError(f"subpanel sizes must lie in 1..{field.n}")
    if top_k > min(m_values):
        raise ConfigError(f"top_k={top_k} exceeds smallest subpanel size {min(m_values)}")
    if bw is None:
        bw = default_bandwidths(field.dims)
    bw = validate_bandwidths(bw, field.dims)
    out = np.empty((len(m_values), top_k))
    if field.lattice_size < field.n:
        x2d = field.values.reshape(field.n, -1)
        for r, m in enumerate(m_values):
            sub = _gram_eigensystem(x2d[:m], kernels, bw, field.dims, 0)
            out[r] = sub.eigenvalue_means()[:top_k]
        return out
    estimate = estimate_spectral_density(field, kernels, bw)
    half = estimate.grid.half_count
    weights = estimate.grid.pair_weights
    for r, m in enumerate(m_values):
        vals = np.linalg.eigvalsh(estimate.matrices[:half, :m, :m])[:, ::-1]
        out[r] = (weights @ vals[:, :top_k]) / estimate.grid.size
    return out


def eigengap_curve(
    field: LatticeField, m_values, top_k: int, kernels="epanechnikov", bw=None, csv_path=None
) -> np.ndarray:
    """Eigen-gap diagnostic: averaged eigenvalues versus panel size.

    Optionally writes a plot-ready CSV with columns
    ``m, lambda_1, ..., lambda_<top_k>``.
    """
    curve = eigenvalue_curve_by_size(field, m_values, top_k, kernels, bw)
    if csv_path is not None:
        write_eigengap_csv(csv_path, m_values, curve)
    return curve


def write_eigengap_csv(path, m_values, curve: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m"] + [f"lambda_{j + 1}" for j in range(curve.shape[1])])
        for m, row in zip(m_values, curve):
            writer.writerow([int(m)] + [f"{v:.17g}" for v in row])
