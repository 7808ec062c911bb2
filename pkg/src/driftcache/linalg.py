"""Dense numeric kernels: cosine similarity, one-sided Jacobi SVD, spectral norm,
bottom-k selection.

Matrices are C-contiguous float32 ndarrays; reductions and matrix products
accumulate in float64 before results are stored back as float32. All
operations are pure and deterministic for fixed inputs.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError

SWEEP_LIMIT = 60
ROTATION_TOL = 1e-10
ZERO_NORM_TOL = 1e-12


def as_matrix(w, name: str = "matrix") -> np.ndarray:
    arr = np.ascontiguousarray(w, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul_f32(a, b) -> np.ndarray:
    """Matrix product with float64 accumulation, stored back as float32."""
    out = np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)
    return out.astype(np.float32)


def cosine_sim(a, b) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Raises DegenerateInputError if either vector has norm <= 1e-12.
    """
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.shape != bv.shape:
        raise ShapeError(f"length mismatch: {av.shape[0]} vs {bv.shape[0]}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na <= ZERO_NORM_TOL or nb <= ZERO_NORM_TOL:
        raise DegenerateInputError("cosine similarity of (near-)zero vector")
    return float(np.clip(float(av @ bv) / (na * nb), -1.0, 1.0))


def row_cosine(a, b) -> np.ndarray:
    """Row-wise cosine similarity of two equally shaped (n, m) arrays."""
    am = np.asarray(a, dtype=np.float64)
    bm = np.asarray(b, dtype=np.float64)
    if am.shape != bm.shape or am.ndim != 2:
        raise ShapeError(f"row_cosine shape mismatch: {am.shape} vs {bm.shape}")
    na = np.linalg.norm(am, axis=1)
    nb = np.linalg.norm(bm, axis=1)
    if np.any(na <= ZERO_NORM_TOL) or np.any(nb <= ZERO_NORM_TOL):
        raise DegenerateInputError("cosine similarity of (near-)zero row")
    dots = np.einsum("ij,ij->i", am, bm)
    return np.clip(dots / (na * nb), -1.0, 1.0)


def topk_lowest(scores, k: int) -> np.ndarray:
    """Indices of the k smallest scores, ties broken by lowest index,
    returned sorted ascending."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if not 1 <= k <= s.size:
        raise ValueError(f"k={k} out of range for {s.size} scores")
    picked = np.argsort(s, kind="stable")[:k]
    return np.sort(picked).astype(np.int64)


@dataclass(frozen=True)
class SvdResult:
    """Factorization w = u @ diag(singular_values) @ v.T with column-orthonormal
    u and v and singular values sorted descending."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return matmul_f32(self.u * self.singular_values.astype(np.float64), self.v.T)


@functools.lru_cache(maxsize=32)
def _round_robin_schedule(n: int) -> tuple:
    """Tournament pairing: n-1 rounds (n even) of disjoint column pairs covering
    every pair exactly once per sweep. Disjointness lets a whole round rotate
    in one vectorized step."""
    players = list(range(n))
    if n % 2:
        players.append(-1)
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        left = np.array(players[: m // 2])
        right = np.array(players[m // 2:][::-1])
        keep = (left >= 0) & (right >= 0)
        rounds.append((left[keep].copy(), right[keep].copy()))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _orthonormal_fill(u: np.ndarray, cols: np.ndarray) -> None:
    """Replace the given (numerically zero) columns of u with vectors orthonormal
    to the rest, picked deterministically from the canonical basis."""
    d = u.shape[0]
    good = [j for j in range(u.shape[1]) if j not in set(cols.tolist())]
    basis = np.eye(d)
    for j in cols:
        residuals = basis.copy()
        if good:
            g = u[:, good]
            residuals -= g @ (g.T @ basis)
        norms = np.linalg.norm(residuals, axis=0)
        best = int(np.argmax(norms))
        u[:, j] = residuals[:, best] / norms[best]
        good.append(j)


def svd(w) -> SvdResult:
    """One-sided Jacobi SVD of a square matrix.

    Sweeps rotate column pairs until every off-diagonal correlation falls
    below 1e-10 (or 60 sweeps). Deterministic: fixed pair ordering, float64
    accumulation, stable descending sort of the singular values.
    """
    mat = as_matrix(w, "svd input")
    d, cols = mat.shape
    if d != cols:
        raise ShapeError(f"svd requires a square matrix, got {d}x{cols}")

    a = mat.astype(np.float64)
    v = np.eye(d)
    if d > 1:
        for _ in range(SWEEP_LIMIT):
            worst = 0.0
            for left, right in _round_robin_schedule(d):
                ap = a[:, left]
                aq = a[:, right]
                alpha = np.einsum("ij,ij->j", ap, ap)
                beta = np.einsum("ij,ij->j", aq, aq)
                gamma = np.einsum("ij,ij->j", ap, aq)
                denom = np.sqrt(alpha * beta)
                live = denom > 0.0
                off = np.zeros_like(gamma)
                np.divide(np.abs(gamma), denom, out=off, where=live)
                if off.size:
                    worst = max(worst, float(off.max()))
                rotate = live & (off > 1e-15)
                if not np.any(rotate):
                    continue
                zeta = np.zeros_like(gamma)
                np.divide(beta - alpha, 2.0 * gamma, out=zeta, where=rotate)
                sign = np.where(zeta >= 0.0, 1.0, -1.0)
                t = np.where(rotate, sign / (np.abs(zeta) + np.hypot(1.0, zeta)), 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                a[:, left] = c * ap - s * aq
                a[:, right] = s * ap + c * aq
                vp = v[:, left]
                vq = v[:, right]
                v[:, left] = c * vp - s * vq
                v[:, right] = s * vp + c * vq
            if worst <= ROTATION_TOL:
                break

    sing = np.linalg.norm(a, axis=0)
    order = np.argsort(-sing, kind="stable")
    a = a[:, order]
    v = v[:, order]
    sing = sing[order]

    u = np.zeros_like(a)
    nonzero = sing > ZERO_NORM_TOL
    u[:, nonzero] = a[:, nonzero] / sing[nonzero]
    dead = np.nonzero(~nonzero)[0]
    if dead.size:
        sing = sing.copy()
        sing[dead] = 0.0
        _orthonormal_fill(u, dead)

    return SvdResult(
        u=u.astype(np.float32),
        singular_values=sing.astype(np.float32),
        v=v.astype(np.float32),
    )


def spectral_norm(w) -> float:
    """Largest singular value via power iteration on the (smaller) Gram matrix."""
    mat = as_matrix(w, "spectral_norm input").astype(np.float64)
    rows, cols = mat.shape
    gram = mat.T @ mat if rows >= cols else mat @ mat.T
    n = gram.shape[0]

    vec = np.ones(n) / np.sqrt(n)
    if float(np.linalg.norm(gram @ vec)) == 0.0:
        # ones may sit in the null space; probe canonical directions
        for i in range(n):
            probe = np.zeros(n)
            probe[i] = 1.0
            if float(np.linalg.norm(gram @ probe)) > 0.0:
                vec = probe
                break
        else:
            return 0.0

    lam = 0.0
    for _ in range(500):
        nxt = gram @ vec
        norm = float(np.linalg.norm(nxt))
        if norm == 0.0:
            return 0.0
        vec = nxt / norm
        new_lam = float(vec @ (gram @ vec))
        if abs(new_lam - lam) <= 1e-14 * max(abs(new_lam), 1.0):
            lam = new_lam
            break
        lam = new_lam
    return float(np.sqrt(max(lam, 0.0)))
