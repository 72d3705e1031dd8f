"""Two-stage low-rank (TSLR) split of the real-stacked channel.

The stacked matrix H (2N_r x N_t) of rank R is split into a column basis
H1 (2N_r x R) and a dependent remainder H2 = H1 @ B.  ``vec`` below is the
column-major vectorization, so vec(H1 @ B) = (I kron H1) vec(B).  The
decoder networks instead see blocks flattened row-major (channel-major
image layout); ``ls_warm_start`` bridges the two conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateInput, InvalidArgument, WarmStartUnavailable

RANK_TOL = 1e-8


@dataclass(frozen=True)
class TslrParts:
    h1: np.ndarray
    h2: np.ndarray
    b: np.ndarray
    col_perm: np.ndarray
    rank: int

    @property
    def h1_vec(self) -> np.ndarray:
        """Row-major flattening fed to the stage-1 encoder."""
        return self.h1.reshape(-1)

    @property
    def h2_vec(self) -> np.ndarray:
        return self.h2.reshape(-1)


@dataclass(frozen=True)
class KronOperator:
    """M = I_J kron H1 applied blockwise, never materialized."""

    h1: np.ndarray
    block_count: int

    @property
    def shape(self):
        p, r = self.h1.shape
        return p * self.block_count, r * self.block_count

    def apply(self, b_vec):
        p, r = self.h1.shape
        b_vec = np.asarray(b_vec)
        if b_vec.shape != (r * self.block_count,):
            raise InvalidArgument(f"expected vector of length {r * self.block_count}, got {b_vec.shape}")
        b = b_vec.reshape((r, self.block_count), order="F")
        return (self.h1 @ b).reshape(-1, order="F")

    def adjoint(self, v):
        p, r = self.h1.shape
        v = np.asarray(v)
        if v.shape != (p * self.block_count,):
            raise InvalidArgument(f"expected vector of length {p * self.block_count}, got {v.shape}")
        return (self.h1.T @ v.reshape((p, self.block_count), order="F")).reshape(-1, order="F")


def kron_apply(op: KronOperator, b_vec) -> np.ndarray:
    return op.apply(b_vec)


def decompose(h_tilde, rank_tol: float = RANK_TOL, rank: int | None = None) -> TslrParts:
    """Split ``h_tilde`` into a column basis and its linearly dependent rest.

    The leading ``rank`` columns are used when they are independent;
    otherwise a column-pivoted QR picks the basis and ``col_perm`` records
    the reordering.  ``rank`` overrides the SVD-based rank estimate.
    """
    h = np.asarray(h_tilde, dtype=float)
    if h.ndim != 2:
        raise InvalidArgument("expected a matrix")
    s = np.linalg.svd(h, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateInput("cannot decompose an all-zero matrix")
    if rank is None:
        rank = int(np.sum(s > rank_tol * s[0]))
    if not 1 <= rank <= h.shape[1]:
        raise InvalidArgument(f"rank {rank} out of range for {h.shape[1]} columns")

    n_cols = h.shape[1]
    lead = np.linalg.svd(h[:, :rank], compute_uv=False)
    if lead[-1] > rank_tol * s[0]:
        perm = np.arange(n_cols)
    else:
        _, _, piv = scipy.linalg.qr(h, mode="economic", pivoting=True)
        basis = np.sort(piv[:rank])
        perm = np.concatenate([basis, np.setdiff1d(np.arange(n_cols), basis)])
    hp = h[:, perm]
    h1, h2 = hp[:, :rank], hp[:, rank:]
    b = np.linalg.lstsq(h1, h2, rcond=None)[0] if h2.shape[1] else np.zeros((rank, 0))
    return TslrParts(h1=h1, h2=h2, b=b, col_perm=perm, rank=rank)


def reassemble(parts: TslrParts, h1=None, h2=None) -> np.ndarray:
    """Stitch [H1, H2] back into the original column order.

    ``h1``/``h2`` substitute reconstructed blocks for the stored ones.
    """
    h1 = parts.h1 if h1 is None else np.asarray(h1)
    h2 = parts.h2 if h2 is None else np.asarray(h2)
    if h1.shape[0] != h2.shape[0] or h1.shape[1] + h2.shape[1] != len(parts.col_perm):
        raise InvalidArgument(f"block shapes {h1.shape}, {h2.shape} do not fit {len(parts.col_perm)} columns")
    out = np.empty((h1.shape[0], len(parts.col_perm)), dtype=np.result_type(h1, h2))
    out[:, parts.col_perm] = np.concatenate([h1, h2], axis=1)
    return out


def warm_start_operator(h1_hat: np.ndarray, w_en2: np.ndarray) -> np.ndarray:
    """Dense W_en2 @ P @ (I kron H1_hat), P mapping vec(H2) to its row-major flattening.

    Column ``r + R*j`` corresponds to entry B[r, j].
    """
    p, r = h1_hat.shape
    m, n = w_en2.shape
    if n % p:
        raise InvalidArgument(f"encoder input length {n} not a multiple of {p} rows")
    j = n // p
    w3 = w_en2.reshape(m, p, j)
    a3 = np.einsum("mpj,pr->mjr", w3, h1_hat)
    return a3.reshape(m, j * r)


def ls_warm_start(h1_hat, w_en2, s2, rcond: float = RANK_TOL) -> np.ndarray:
    """Stage-2 initial value M_hat @ pinv(W_en2 @ M_hat) @ s2, row-major flattened.

    ``h1_hat`` is the stage-1 reconstruction as a 2N_r x R matrix.  Raises
    WarmStartUnavailable when it is zero.
    """
    w = getattr(w_en2, "w", w_en2)
    s = getattr(s2, "s", s2)
    h1_hat = np.asarray(h1_hat, dtype=float)
    w = np.asarray(w, dtype=float)
    s = np.asarray(s, dtype=float)
    if h1_hat.ndim != 2:
        raise InvalidArgument("h1_hat must be a 2N_r x R matrix")
    if s.shape != (w.shape[0],):
        raise InvalidArgument(f"codeword length {s.shape} does not match encoder rows {w.shape[0]}")
    if not np.any(h1_hat):
        raise WarmStartUnavailable("stage-1 estimate is zero")
    a = warm_start_operator(h1_hat, w)
    r = h1_hat.shape[1]
    b_hat = np.linalg.pinv(a, rcond=rcond) @ s
    b_mat = b_hat.reshape(-1, r).T
    return (h1_hat @ b_mat).reshape(-1)


def ls_warm_start_batch(h1_hat, w_en2, s2, rcond: float = RANK_TOL):
    """Batched torch version of :func:`ls_warm_start` (no gradient tracking).

    h1_hat: (B, 2N_r, R), w_en2: (m, n), s2: (B, m).  Rows whose h1_hat is
    zero get a zero initial value; the returned mask flags them.
    """
    import torch

    with torch.no_grad():
        bsz, p, r = h1_hat.shape
        m, n = w_en2.shape
        j = n // p
        a = torch.einsum("mpj,bpr->bmjr", w_en2.reshape(m, p, j), h1_hat).reshape(bsz, m, j * r)
        ok = h1_hat.flatten(1).abs().amax(dim=1) > 0
        b_hat = torch.linalg.pinv(a, rtol=rcond) @ s2.unsqueeze(-1)
        b_mat = b_hat.reshape(bsz, j, r).transpose(1, 2)
        h2_0 = (h1_hat @ b_mat).reshape(bsz, -1)
        h2_0 = torch.where(ok.unsqueeze(1), h2_0, torch.zeros_like(h2_0))
    return h2_0, ok
