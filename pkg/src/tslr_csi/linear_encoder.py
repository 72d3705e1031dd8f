"""UE-side bias-free linear compression and the AWGN feedback link."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

NOISELESS = "noiseless"


def codeword_length(n: int, cr: float) -> int:
    if not 0 < cr <= 1:
        raise InvalidArgument(f"compression ratio must be in (0, 1], got {cr}")
    m = int(math.floor(cr * n + 0.5))
    if m < 1:
        raise InvalidArgument(f"cr={cr} leaves no codeword entries for n={n}")
    return m


@dataclass
class EncoderWeights:
    w: np.ndarray
    cr: float

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @property
    def n(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class Codeword:
    s: np.ndarray
    snr_db: float | str = NOISELESS


def init_encoder(n: int, cr: float, rng: np.random.Generator) -> EncoderWeights:
    """Gaussian weights with variance 1/n, shape (round(cr*n), n)."""
    m = codeword_length(n, cr)
    return EncoderWeights(w=rng.standard_normal((m, n)) / math.sqrt(n), cr=cr)


def compress(w: EncoderWeights, h) -> Codeword:
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != w.n:
        raise InvalidArgument(f"input length {h.shape[-1]} != encoder width {w.n}")
    return Codeword(s=h @ w.w.T)


def noise_variance(s, snr_db: float) -> float:
    s = np.asarray(s)
    return float(np.sum(s**2) / s.size) * 10.0 ** (-snr_db / 10.0)


def add_awgn(s: Codeword, snr_db, rng: np.random.Generator) -> Codeword:
    """Add white Gaussian noise with variance (|s|^2 / m) 10^(-snr/10).

    ``snr_db`` of +inf, None or "noiseless" returns the codeword unchanged.
    A zero codeword gets zero noise.
    """
    if snr_db is None or snr_db == NOISELESS or np.isposinf(snr_db):
        return Codeword(s=s.s, snr_db=NOISELESS)
    sigma = math.sqrt(noise_variance(s.s, snr_db))
    return Codeword(s=s.s + sigma * rng.standard_normal(s.s.shape), snr_db=float(snr_db))
