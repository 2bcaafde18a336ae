"""Deterministic k-means with k-means++ seeding and restarts."""

from __future__ import annotations

import numpy as np


def _plusplus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            chosen.append(int(rng.integers(n)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, np.sum((X - X[chosen[-1]]) ** 2, axis=1))
    return X[chosen].copy()


def _assign(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin breaks ties toward the smaller center index
    d2 = np.sum(X * X, axis=1)[:, None] - 2.0 * X @ centers.T \
        + np.sum(centers * centers, axis=1)[None, :]
    return np.argmin(d2, axis=1)


def _lloyd(X: np.ndarray, centers: np.ndarray, iters: int, tol: float):
    n = X.shape[0]
    labels = _assign(X, centers)
    for _ in range(iters):
        new = centers.copy()
        for j in range(centers.shape[0]):
            members = labels == j
            if np.any(members):
                new[j] = X[members].mean(axis=0)
            else:
                # deterministic reseed: farthest point from its center
                d2 = np.sum((X - centers[labels]) ** 2, axis=1)
                new[j] = X[int(np.argmax(d2))]
        shift = float(np.max(np.abs(new - centers)))
        centers = new
        labels = _assign(X, centers)
        if shift < tol:
            break
    inertia = float(np.sum((X - centers[labels]) ** 2))
    return centers, labels, inertia


def kmeans_fit(X: np.ndarray, k: int, seed: int, restarts: int = 20,
               iters: int = 100, tol: float = 1e-12):
    """Best-of-``restarts`` Lloyd runs; deterministic given ``seed``.

    Returns (centers (k, dim), labels (n,), inertia).  Ties between
    restarts keep the earlier run.
    """
    X = np.asarray(X, dtype=np.float64)
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k={k} out of range for {X.shape[0]} samples")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers = _plusplus_init(X, k, rng)
        centers, labels, inertia = _lloyd(X, centers, iters, tol)
        if best is None or inertia < best[2] - 1e-15:
            best = (centers, labels, inertia)
    return best
