"""Per-point local geometry: PCA normals and frames, spin-image coordinates,
shape index from a local quadric fit, and the 9D point descriptor."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .kdtree import KDTree

DESCRIPTOR_COLUMNS = ("x", "y", "z", "nx", "ny", "nz", "alpha", "beta", "gamma")
FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])

# relative eigenvalue floor below which a covariance counts as rank <= 1
_RANK_TOL = 1e-12
# relative singular-value floor for the quadric design matrix
_FIT_TOL = 1e-10
_CURV_EPS = 1e-9


@dataclass(frozen=True)
class LocalFrame:
    origin: np.ndarray
    normal: np.ndarray
    tangent_u: np.ndarray
    tangent_v: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class LocalFrames:
    """Per-point frames stored column-wise; ``(tangent_u, tangent_v, normal)``
    is a right-handed orthonormal basis at each row."""

    origins: np.ndarray
    normals: np.ndarray
    tangent_u: np.ndarray
    tangent_v: np.ndarray
    degenerate: np.ndarray

    def __len__(self) -> int:
        return self.origins.shape[0]

    def __getitem__(self, i: int) -> LocalFrame:
        return LocalFrame(
            self.origins[i], self.normals[i], self.tangent_u[i], self.tangent_v[i],
            bool(self.degenerate[i]),
        )

    def flipped(self) -> "LocalFrames":
        """Same frames with every normal reversed (basis kept right-handed)."""
        return frames_from_normals(self.origins, -self.normals, self.degenerate)


def tangent_basis(normals: np.ndarray):
    """Complete unit normals (N, 3) to right-handed frames ``(u, v, n)``."""
    normals = np.asarray(normals, dtype=np.float64)
    # seed with the coordinate axis least aligned with the normal
    axis = np.argmin(np.abs(normals), axis=1)
    seed = np.zeros_like(normals)
    seed[np.arange(normals.shape[0]), axis] = 1.0
    u = seed - np.sum(seed * normals, axis=1, keepdims=True) * normals
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(normals, u)
    return u, v


def frames_from_normals(origins, normals, degenerate=None) -> LocalFrames:
    origins = np.asarray(origins, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    u, v = tangent_basis(normals)
    if degenerate is None:
        degenerate = np.zeros(origins.shape[0], dtype=bool)
    return LocalFrames(origins, normals, u, v, np.asarray(degenerate, dtype=bool))


def estimate_normals(cloud: PointCloud, index: KDTree, k_normal: int = 20) -> LocalFrames:
    """PCA normals over each point and its ``k_normal`` nearest neighbors.

    The normal is the covariance eigenvector of smallest eigenvalue, oriented
    away from the cloud centroid.  Neighbourhoods whose covariance has rank
    <= 1 are flagged degenerate and get the normal (0, 0, 1).
    """
    if k_normal < 3:
        raise ValueError("k_normal must be >= 3")
    pts = cloud.points
    n = len(cloud)
    nbr, _ = index.knn_self(k_normal)
    idx = np.concatenate([np.arange(n)[:, None], nbr], axis=1)
    valid = idx >= 0
    safe = np.where(valid, idx, np.arange(n)[:, None])
    patch = pts[safe]
    w = valid[..., None].astype(np.float64)
    count = w.sum(axis=1)
    mean = (patch * w).sum(axis=1) / count
    centered = (patch - mean[:, None, :]) * w
    cov = np.einsum("nki,nkj->nij", centered, centered) / count[:, None]
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]

    degenerate = evals[:, 1] <= _RANK_TOL * np.maximum(evals[:, 2], np.finfo(float).tiny)
    normals = np.where(degenerate[:, None], FALLBACK_NORMAL, normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    outward = np.sum(normals * (pts - pts.mean(axis=0)), axis=1)
    # on a (near) zero dot fall back to making the dominant component positive
    tie = np.abs(outward) < 1e-12
    dominant = normals[np.arange(n), np.argmax(np.abs(normals), axis=1)]
    sign = np.where(tie, np.sign(dominant), np.sign(outward))
    sign[degenerate] = 1.0
    normals = normals * np.where(sign == 0, 1.0, sign)[:, None]
    return frames_from_normals(pts, normals, degenerate)


def spin_decompose(origins, normals, others):
    """Vectorized spin-image coordinates.

    ``beta`` is the signed offset of ``others`` along ``normals`` and
    ``alpha`` the remaining in-plane radius; arguments broadcast as (..., 3).
    """
    d = np.asarray(others, dtype=np.float64) - np.asarray(origins, dtype=np.float64)
    beta = np.sum(np.asarray(normals, dtype=np.float64) * d, axis=-1)
    alpha = np.sqrt(np.maximum(0.0, np.sum(d * d, axis=-1) - beta * beta))
    return alpha, beta


def spin_coordinates(reference: LocalFrame, other):
    """In-plane (``alpha``) and out-of-plane (``beta``) distance of ``other``
    with respect to the tangent plane at ``reference``."""
    return spin_decompose(reference.origin, reference.normal, other)


def _shape_index_from_quadric(a, b, c):
    # principal curvatures of the fitted height field, sign such that a
    # surface bending away from the normal (sphere, outward normal) is positive
    mean = -(a + c)
    r = np.sqrt((a - c) ** 2 + b * b)
    k1 = mean + r
    k2 = mean - r
    ksum = k1 + k2
    gamma = (2.0 / np.pi) * np.arctan2(ksum, k1 - k2)
    umbilic = (k1 - k2) < _CURV_EPS * np.maximum(1.0, np.abs(ksum))
    gamma = np.where(umbilic, np.sign(ksum), gamma)
    planar = (np.abs(k1) < _CURV_EPS) & (np.abs(k2) < _CURV_EPS)
    gamma = np.where(planar, 0.0, gamma)
    return np.clip(gamma, -1.0, 1.0), k1, k2


def _fit_quadrics(pts, frames: LocalFrames, rows, nbr):
    """Least-squares w = a u^2 + b uv + c v^2 in each row's local frame.
    Returns coefficients (M, 3) and a rank-deficiency mask."""
    # padding (-1) becomes the centre itself, i.e. an all-zero design row
    nbr = np.where(nbr >= 0, nbr, rows[:, None])
    d = pts[nbr] - frames.origins[rows][:, None, :]
    u = np.einsum("mki,mi->mk", d, frames.tangent_u[rows])
    v = np.einsum("mki,mi->mk", d, frames.tangent_v[rows])
    w = np.einsum("mki,mi->mk", d, frames.normals[rows])
    design = np.stack([u * u, u * v, v * v], axis=-1)
    U, s, Vt = np.linalg.svd(design, full_matrices=False)
    deficient = s[:, -1] <= _FIT_TOL * np.maximum(s[:, 0], np.finfo(float).tiny)
    s_inv = np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    proj = np.einsum("mkj,mk->mj", U, w) * s_inv
    coef = np.einsum("mji,mj->mi", Vt, proj)
    return coef, deficient


def shape_indices(cloud: PointCloud, index: KDTree, frames: LocalFrames, k_curv: int = 30):
    """Shape index of every point; returns ``(gamma, degenerate)``."""
    if k_curv < 6:
        raise ValueError("k_curv must be >= 6")
    n = len(cloud)
    if n - 1 < 5:
        return np.zeros(n), np.ones(n, dtype=bool)
    nbr, _ = index.knn_self(k_curv)
    rows = np.arange(n)
    coef, deficient = _fit_quadrics(cloud.points, frames, rows, nbr)
    gamma, _, _ = _shape_index_from_quadric(coef[:, 0], coef[:, 1], coef[:, 2])
    degenerate = deficient | frames.degenerate
    gamma = np.where(degenerate, 0.0, gamma)
    return gamma, degenerate


def shape_index(cloud: PointCloud, index: KDTree, frames: LocalFrames, point: int,
                k_curv: int = 30):
    """Shape index in [-1, 1] at one point; returns ``(gamma, degenerate)``."""
    if k_curv < 6:
        raise ValueError("k_curv must be >= 6")
    if frames.degenerate[point] or len(cloud) - 1 < 5:
        return 0.0, True
    nbr, _ = index.knn_batch(cloud.points[point][None], k_curv, np.array([point]))
    coef, deficient = _fit_quadrics(cloud.points, frames, np.array([point]), nbr)
    if deficient[0]:
        return 0.0, True
    gamma, _, _ = _shape_index_from_quadric(coef[:, 0], coef[:, 1], coef[:, 2])
    return float(gamma[0]), False


@dataclass(frozen=True)
class Descriptors:
    """Rows of ``(x, y, z, nx, ny, nz, alpha_mean, beta_mean, gamma)``."""

    values: np.ndarray
    frame_degenerate: np.ndarray
    curvature_degenerate: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_degenerate(self) -> int:
        return int(np.count_nonzero(self.frame_degenerate | self.curvature_degenerate))


def compute_descriptors(cloud: PointCloud, index: KDTree, k_feat: int = 20,
                        k_normal: int = 20, k_curv: int = 30,
                        normals: str = "auto") -> Descriptors:
    """Assemble the 9D descriptor of every point.

    ``normals`` selects the normal source: ``"estimate"`` (PCA), ``"cloud"``
    (normals stored on the cloud) or ``"auto"`` (cloud normals when present).
    Spin coordinates are averaged over the ``k_feat`` nearest neighbors.
    """
    if k_feat < 1:
        raise ValueError("k_feat must be >= 1")
    if normals not in ("auto", "estimate", "cloud"):
        raise ValueError(f"unknown normal source {normals!r}")
    if normals == "cloud" and not cloud.has_normals:
        raise ValueError("cloud carries no normals")
    if normals == "cloud" or (normals == "auto" and cloud.has_normals):
        frames = frames_from_normals(cloud.points, cloud.normals)
    else:
        frames = estimate_normals(cloud, index, k_normal)

    gamma, curv_degenerate = shape_indices(cloud, index, frames, k_curv)

    pts = cloud.points
    nbr, _ = index.knn_self(k_feat)
    valid = nbr >= 0
    safe = np.where(valid, nbr, np.arange(len(cloud))[:, None])
    alpha, beta = spin_decompose(pts[:, None, :], frames.normals[:, None, :], pts[safe])
    cnt = np.maximum(valid.sum(axis=1), 1)
    alpha_mean = np.where(valid, alpha, 0.0).sum(axis=1) / cnt
    beta_mean = np.where(valid, beta, 0.0).sum(axis=1) / cnt

    values = np.column_stack([pts, frames.normals, alpha_mean, beta_mean, gamma])
    return Descriptors(values, frames.degenerate.copy(), curv_degenerate)


def write_descriptors_csv(path, descriptors: Descriptors) -> None:
    lines = [",".join(DESCRIPTOR_COLUMNS)]
    lines += [",".join(f"{v:.9g}" for v in row) for row in descriptors.values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_descriptors_csv(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != DESCRIPTOR_COLUMNS:
        raise ValueError(f"unexpected descriptor header {header}")
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
