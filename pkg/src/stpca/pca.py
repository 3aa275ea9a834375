"""PCA projections over daily profiles and the node embeddings they produce.

Each (day, node) pair contributes one T-dimensional sample (the node's profile
over that day). The projection maps profiles to C coordinates; averaging the
per-day coordinates over the training days gives one frozen embedding row per
node. Because the projection acts on the slot axis, it can be reused on a
series with any node count, which is what makes cross-city transfer possible.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import DayTensor

SYMMETRY_TOL = 1e-10
JACOBI_OFFDIAG_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def sym_eig(a: np.ndarray):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvalues in descending order
    and eigenvectors as columns. Sweeps run until every off-diagonal magnitude
    drops below 1e-12 or 100 sweeps have been applied.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.isfinite(a).all():
        raise ValueError("non-finite entries")
    if a.shape[0] > 1 and np.abs(a - a.T).max() > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric within 1e-10")

    n = a.shape[0]
    if n == 1:
        return a[0].copy(), np.array([[1.0]])

    d = (a + a.T) / 2.0  # work on the exactly symmetric part
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.abs(d - np.diag(np.diag(d))).max()
        if off < JACOBI_OFFDIAG_TOL:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = d[p, q]
                if abs(apq) < JACOBI_OFFDIAG_TOL:
                    continue
                theta = (d[q, q] - d[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c

                row_p = d[p, :].copy()
                row_q = d[q, :].copy()
                d[p, :] = c * row_p - s * row_q
                d[q, :] = s * row_p + c * row_q
                col_p = d[:, p].copy()
                col_q = d[:, q].copy()
                d[:, p] = c * col_p - s * col_q
                d[:, q] = s * col_p + c * col_q

                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]

    eigvals = np.diag(d).copy()
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    vecs = v[:, order]
    # deterministic sign: first entry above tolerance made positive
    for j in range(n):
        col = vecs[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0:
            vecs[:, j] = -col
    return eigvals, vecs


@dataclass
class PcaProjection:
    """Fitted projection: feature mean, orthonormal axes and the full spectrum.

    components is [T x C] with columns in descending eigenvalue order; the
    eigenvalue vector keeps all T entries so component selection can be redone
    without refitting.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.components = np.asarray(self.components, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        t, c = self.components.shape
        if self.mean.shape != (t,) or self.eigenvalues.shape != (t,):
            raise ValueError("inconsistent projection shapes")
        gram = self.components.T @ self.components
        if np.abs(gram - np.eye(c)).max() > 1e-8:
            raise ValueError("components are not orthonormal")
        if (np.diff(self.eigenvalues) > 1e-9).any():
            raise ValueError("eigenvalues must be non-increasing")

    @property
    def num_slots(self) -> int:
        return self.components.shape[0]

    @property
    def num_components(self) -> int:
        return self.components.shape[1]

    def explained_variance_ratio(self) -> np.ndarray:
        """Cumulative eigenvalue fraction for k = 1..T."""
        total = self.eigenvalues.sum()
        if total <= 0:
            raise ValueError("zero total variance")
        return np.cumsum(self.eigenvalues) / total


@dataclass
class EmbeddingTable:
    """[N x C] per-node embedding with its strategy tag and provenance."""

    values: np.ndarray
    strategy: str
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("embedding must be [N x C]")
        if not np.isfinite(self.values).all():
            raise ValueError("non-finite embedding entries")
        if self.strategy not in ("adaptive", "pca", "zero"):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def num_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def zero_embedding(n: int, c: int) -> EmbeddingTable:
    return EmbeddingTable(values=np.zeros((n, c)), strategy="zero")


def select_components(eigenvalues: np.ndarray, theta: float) -> int:
    """Smallest k whose cumulative eigenvalue fraction reaches theta."""
    if not 0 < theta <= 1:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    total = eigenvalues.sum()
    if total <= 0:
        raise ValueError("zero total variance")
    ratios = np.cumsum(eigenvalues) / total
    return int(np.searchsorted(ratios, theta - 1e-12) + 1)


def fit_projection(
    z: DayTensor,
    n_components: Optional[int] = None,
    theta: Optional[float] = None,
    center: bool = True,
) -> PcaProjection:
    """Fit the projection from the D*N day-profiles of a (normalized) day tensor.

    An explicit n_components wins over theta; with neither given, theta
    defaults to 0.9. Column signs are fixed so each component's
    largest-magnitude entry is positive.
    """
    samples = z.data.reshape(-1, z.steps_per_day)
    m, t = samples.shape
    if m < 2:
        raise ValueError(f"need at least 2 samples, got {m}")
    if center:
        mean = samples.mean(axis=0)
    else:
        mean = np.zeros(t)
    x = samples - mean
    cov = (x.T @ x) / (m - 1)

    eigvals, vecs = sym_eig(cov)
    eigvals = np.maximum(eigvals, 0.0)  # covariance is PSD; clip rounding noise

    cap = min(t, m - 1)
    if n_components is not None:
        if not 1 <= n_components <= cap:
            raise ValueError(
                f"n_components {n_components} outside [1, {cap}] "
                f"(T={t}, samples={m})"
            )
        c = n_components
    else:
        c = min(select_components(eigvals, 0.9 if theta is None else theta), cap)

    comps = vecs[:, :c].copy()
    for j in range(c):
        k = int(np.argmax(np.abs(comps[:, j])))
        if comps[k, j] < 0:
            comps[:, j] = -comps[:, j]
    return PcaProjection(mean=mean, components=comps, eigenvalues=eigvals)


def embed_days(z: DayTensor, proj: PcaProjection):
    """Project each day's [N x T] profile block: one [N x C] matrix per day."""
    if z.steps_per_day != proj.num_slots:
        raise ValueError(
            f"slot mismatch: tensor T={z.steps_per_day}, projection T={proj.num_slots}"
        )
    return [(z.data[d] - proj.mean) @ proj.components for d in range(z.num_days)]


def average_embeddings(per_day, source=None) -> EmbeddingTable:
    """Element-wise mean of per-day embeddings; the frozen pca table."""
    if len(per_day) == 0:
        raise ValueError("empty embedding sequence")
    shape = per_day[0].shape
    for e in per_day:
        if e.shape != shape:
            raise ValueError("per-day embedding shapes differ")
    mean = np.mean(np.stack(per_day, axis=0), axis=0)
    return EmbeddingTable(values=mean, strategy="pca", source=dict(source or {}))


def refresh_embedding(target: DayTensor, proj: PcaProjection, source=None) -> EmbeddingTable:
    """Recompute the pca table for new data under a fixed projection.

    The projection acts on the slot axis, so the target may carry a different
    node count than the data the projection was fitted on.
    """
    if target.num_days < 1:
        raise ValueError("empty day tensor")
    info = {"day_range": target.step_range, "origin": target.origin}
    info.update(source or {})
    return average_embeddings(embed_days(target, proj), source=info)
