"""Least-squares similarity alignment between paired embedding clouds.

Finds scale s, orthogonal R and translation t minimizing
||s * source @ R + t - target||_F. The rotation comes from the SVD of the
centered cross-covariance, computed here by one-sided Jacobi on the small
D x D matrix; degenerate directions (zero singular values) are completed
to a full orthonormal basis and counted in the result.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericError


@dataclass(frozen=True)
class ProcrustesResult:
    scale: float
    rotation: np.ndarray  # (D, D); right-multiplies row vectors
    translation: np.ndarray  # (D,)
    residual: float
    degenerate_dims: int

    def transform(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        return self.scale * arr @ self.rotation + self.translation


def _complete_column(u: np.ndarray, j: int) -> np.ndarray:
    # densest leftover basis direction, orthogonalized against filled columns
    d = u.shape[0]
    best, best_norm = None, -1.0
    for k in range(d):
        cand = np.zeros(d)
        cand[k] = 1.0
        cand -= u[:, :j] @ (u[:, :j].T @ cand)
        norm = np.linalg.norm(cand)
        if norm > best_norm:
            best, best_norm = cand, norm
    return best / best_norm


def jacobi_svd(m, tol: float = 1e-14, max_sweeps: int = 60):
    """One-sided Jacobi SVD of a square matrix: m = u @ diag(s) @ vt.

    Sweeps plane rotations until every column pair is orthogonal to `tol`
    relative accuracy. Returns (u, s, vt, degenerate) with singular values
    sorted descending and `degenerate` counting the ones at numerical zero
    whose u columns were basis-completed.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"jacobi_svd needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("jacobi_svd input contains non-finite values")
    d = a.shape[0]
    v = np.eye(d)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                app = a[:, p] @ a[:, p]
                aqq = a[:, q] @ a[:, q]
                apq = a[:, p] @ a[:, q]
                if apq == 0.0 or apq * apq <= tol * tol * app * aqq:
                    continue
                rotated = True
                zeta = (aqq - app) / (2.0 * apq)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = cs * ap - sn * aq
                a[:, q] = sn * ap + cs * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = cs * vp - sn * vq
                v[:, q] = sn * vp + cs * vq
        if not rotated:
            break
    s = np.linalg.norm(a, axis=0)
    order = np.argsort(-s)
    s = s[order]
    a = a[:, order]
    v = v[:, order]
    u = np.zeros_like(a)
    scale = s[0] if s.size and s[0] > 0 else 1.0
    rank_tol = d * np.finfo(np.float64).eps * scale
    degenerate = 0
    for j in range(d):
        if s[j] > rank_tol:
            u[:, j] = a[:, j] / s[j]
        else:
            degenerate += 1
            u[:, j] = _complete_column(u, j)
    return u, s, v.T, degenerate


def procrustes_align(source, target) -> ProcrustesResult:
    """Fit the similarity transform mapping source rows onto target rows."""
    x = np.asarray(source, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.ndim != 2 or x.shape != y.shape:
        raise ConfigError(
            f"source {x.shape} and target {y.shape} must be matching (N, D)"
        )
    if x.shape[0] < 2:
        raise ConfigError(f"alignment needs at least 2 rows, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NumericError("procrustes inputs contain non-finite values")
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    u, s, vt, degenerate = jacobi_svd(xc.T @ yc)
    rotation = u @ vt
    fro2 = float((xc * xc).sum())
    scale = float(s.sum() / fro2) if fro2 > 0 else 1.0
    translation = y_mean - scale * x_mean @ rotation
    residual = float(np.linalg.norm(scale * xc @ rotation - yc))
    return ProcrustesResult(scale, rotation, translation, residual, degenerate)
