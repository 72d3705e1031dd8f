"""Classical FISTA for 0.5 |s - W h|^2 + tau |T h|_1.

Threshold convention: ``tau`` is the l1 penalty of the objective and each
iteration applies the exact proximal step, i.e. soft-thresholding at
``eta * tau``.  At ``eta = 1`` this is the textbook soft(g, tau).

Vectors are rows: a batch of B problems sharing W is an array of shape
(B, n) and codewords (B, m).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidArgument


def _as_matrix(w):
    return np.asarray(getattr(w, "w", w), dtype=float)


def soft_threshold(x, tau):
    """sign(x) * max(|x| - tau, 0); ``tau`` may broadcast against ``x``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise InvalidArgument("threshold must be nonnegative")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def shrinkage_schedule(k_max: int):
    """Return (t, gamma): t[0..k_max] holds t_1..t_{k_max+1}, gamma[k-1] = (t_k - 1) / t_{k+1}."""
    if k_max < 1:
        raise InvalidArgument("k_max must be >= 1")
    t = np.empty(k_max + 1)
    t[0] = 1.0
    for k in range(k_max):
        t[k + 1] = (1.0 + np.sqrt(1.0 + 4.0 * t[k] ** 2)) / 2.0
    gamma = (t[:-1] - 1.0) / t[1:]
    return t, gamma


def lipschitz(w, iters: int = 50, tol: float = 1e-10) -> float:
    """Largest eigenvalue of W^T W by power iteration."""
    w = _as_matrix(w)
    v = np.ones(w.shape[1]) / np.sqrt(w.shape[1])
    lam = 0.0
    for _ in range(iters):
        u = w.T @ (w @ v)
        new = float(np.linalg.norm(u))
        if new == 0.0:
            return 0.0
        v = u / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam


def default_step(w) -> float:
    lam = lipschitz(w)
    if lam == 0.0:
        raise InvalidArgument("measurement matrix is zero")
    return 0.99 / lam


def _transform_pair(transform):
    if transform is None or (isinstance(transform, str) and transform == "identity"):
        return None
    t = np.asarray(transform, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1] or not np.allclose(t @ t.T, np.eye(t.shape[0]), atol=1e-10):
        raise InvalidArgument("transform must be 'identity' or an orthonormal matrix")
    return t


def lasso_objective(w, s, h, tau, transform="identity"):
    """0.5 |s - W h|^2 + tau |T h|_1, evaluated per row for batched input."""
    w = _as_matrix(w)
    s = np.asarray(getattr(s, "s", s), dtype=float)
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != w.shape[1] or s.shape[-1] != w.shape[0]:
        raise InvalidArgument(f"shapes W{w.shape}, s{s.shape}, h{h.shape} inconsistent")
    t = _transform_pair(transform)
    th = h if t is None else h @ t.T
    r = s - h @ w.T
    return 0.5 * np.sum(r * r, axis=-1) + tau * np.sum(np.abs(th), axis=-1)


@dataclass
class FistaConfig:
    tau: float = 0.0
    eta: float | None = None  # None -> 0.99 / lambda_max(W^T W)
    iters: int = 20
    transform: object = "identity"

    def __post_init__(self):
        if self.tau < 0:
            raise InvalidArgument("tau must be nonnegative")
        if self.eta is not None and not self.eta > 0:
            raise InvalidArgument("eta must be positive")
        if self.iters < 0:
            raise InvalidArgument("iters must be >= 0")


@dataclass
class SolveTrace:
    iterates: np.ndarray
    objectives: np.ndarray
    final: np.ndarray
    eta: float
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.iterates)


def gradient_step(y, w, s, eta):
    """y - eta W^T (W y - s) on row vectors; shared with the unrolled network."""
    return y - eta * ((y @ w.T - s) @ w)


def fista_solve(w, s, config: FistaConfig, x0=None) -> SolveTrace:
    """Run exactly ``config.iters`` FISTA iterations from y_1 = h_0 = x0."""
    w = _as_matrix(w)
    s = np.asarray(getattr(s, "s", s), dtype=float)
    if s.shape[-1] != w.shape[0]:
        raise InvalidArgument(f"codeword length {s.shape[-1]} != {w.shape[0]}")
    x0 = np.zeros(s.shape[:-1] + (w.shape[1],)) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape[-1] != w.shape[1]:
        raise InvalidArgument(f"x0 length {x0.shape[-1]} != {w.shape[1]}")
    t_mat = _transform_pair(config.transform)

    notes = []
    if config.eta is None:
        eta = default_step(w)
    else:
        eta = float(config.eta)
        lam = lipschitz(w)
        if eta * lam > 1.0 + 1e-12:
            notes.append(f"eta={eta:g} exceeds 1/L={1 / lam:g}; iterations may diverge")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    thr = eta * config.tau

    k_max = config.iters
    iterates = np.empty((k_max,) + x0.shape)
    objectives = np.empty((k_max,) + x0.shape[:-1])
    gammas = shrinkage_schedule(k_max)[1] if k_max else []

    y, h_prev = x0, x0
    for k in range(k_max):
        g = gradient_step(y, w, s, eta)
        if t_mat is None:
            h = soft_threshold(g, thr)
        else:
            h = soft_threshold(g @ t_mat.T, thr) @ t_mat
        if not np.all(np.isfinite(h)):
            raise DivergenceError(k + 1)
        y = h + gammas[k] * (h - h_prev)
        h_prev = h
        iterates[k] = h
        objectives[k] = lasso_objective(w, s, h, config.tau, config.transform)
    final = iterates[-1] if k_max else x0.copy()
    return SolveTrace(iterates=iterates, objectives=objectives, final=final, eta=eta, warnings=notes)
