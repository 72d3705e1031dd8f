"""Geometric mmWave channel model, beamspace transform and real stacking."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument

RANK_TOL = 1e-8


@dataclass(frozen=True)
class GeometryConfig:
    n_rx: int = 16
    n_tx: int = 16
    n_paths: int = 2
    angle_spread_deg: float = 50.0
    element_spacing: float = 0.5
    carrier_ghz: float = 90.0  # metadata only

    def __post_init__(self):
        if min(self.n_rx, self.n_tx, self.n_paths) < 1:
            raise InvalidArgument("antenna and path counts must be >= 1")
        if self.n_paths >= self.n_rx:
            raise InvalidArgument(f"n_paths={self.n_paths} must be < n_rx={self.n_rx} (low-rank regime)")
        if not self.angle_spread_deg > 0:
            raise InvalidArgument("angle_spread_deg must be positive")
        if not self.element_spacing > 0:
            raise InvalidArgument("element_spacing must be positive")

    @property
    def laplace_scale_rad(self) -> float:
        # std of Laplace(0, b) is sqrt(2) * b
        return np.deg2rad(self.angle_spread_deg) / np.sqrt(2.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PathSet:
    gains: np.ndarray
    aoa_rad: np.ndarray
    aod_rad: np.ndarray

    def __post_init__(self):
        if not (len(self.gains) == len(self.aoa_rad) == len(self.aod_rad)):
            raise InvalidArgument("gains, aoa_rad and aod_rad must have equal length")

    def __len__(self):
        return len(self.gains)


@dataclass(frozen=True)
class ChannelSample:
    h_complex: np.ndarray
    h_beam: np.ndarray
    h_real: np.ndarray
    paths: PathSet
    seed: int


@dataclass
class Dataset:
    """A stack of real-stacked channel tensors of shape (count, 2, H, W).

    ``tensors[i, 0]`` is the real block and ``tensors[i, 1]`` the imaginary
    block, so ``tensors[i].reshape(2 * H, W)`` is the stacked matrix.
    """

    tensors: np.ndarray
    kind: str = "mmwave_geometric"
    seed: int | None = None
    config: GeometryConfig | None = None
    sample_seeds: np.ndarray | None = None
    samples: list[ChannelSample] | None = field(default=None, repr=False)
    params: dict = field(default_factory=dict)

    def __len__(self):
        return self.tensors.shape[0]

    @property
    def tensor_shape(self) -> tuple[int, int, int]:
        return tuple(self.tensors.shape[1:])

    def matrices(self) -> np.ndarray:
        """Stacked (count, 2H, W) real matrices."""
        c, _, h, w = self.tensors.shape
        return self.tensors.reshape(c, 2 * h, w)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            tensors=self.tensors[idx],
            kind=self.kind,
            seed=self.seed,
            config=self.config,
            sample_seeds=None if self.sample_seeds is None else self.sample_seeds[idx],
            samples=None if self.samples is None else [self.samples[i] for i in idx],
            params=dict(self.params),
        )


def ula_response(angle_rad: float, n: int, spacing: float = 0.5) -> np.ndarray:
    """Unit-norm ULA steering vector (1/sqrt(n)) exp(j 2 pi d m sin(angle))."""
    if n < 1:
        raise InvalidArgument(f"antenna count must be >= 1, got {n}")
    m = np.arange(n)
    return np.exp(2j * np.pi * spacing * m * np.sin(angle_rad)) / np.sqrt(n)


def _steering_matrix(angles: np.ndarray, n: int, spacing: float) -> np.ndarray:
    m = np.arange(n)[:, None]
    return np.exp(2j * np.pi * spacing * m * np.sin(np.asarray(angles))[None, :]) / np.sqrt(n)


def wrap_angle(theta):
    """Fold angles into (-pi/2, pi/2] by reflection at +-pi/2."""
    t = np.mod(np.asarray(theta, dtype=float) + np.pi / 2, 2 * np.pi)
    out = np.where(t <= np.pi, t - np.pi / 2, 3 * np.pi / 2 - t)
    # -pi/2 and pi/2 are the same endfire direction; keep the closed end
    return np.where(out <= -np.pi / 2, np.pi / 2, out)


def sample_geometry(config: GeometryConfig, rng: np.random.Generator, wrap: bool = True) -> PathSet:
    """Draw path gains CN(0, 1/2) and zero-centred Laplace AoA/AoD."""
    L = config.n_paths
    gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) * 0.5
    b = config.laplace_scale_rad
    aoa = rng.laplace(0.0, b, size=L)
    aod = rng.laplace(0.0, b, size=L)
    if wrap:
        aoa, aod = wrap_angle(aoa), wrap_angle(aod)
    return PathSet(gains=gains, aoa_rad=aoa, aod_rad=aod)


def synth_channel(paths: PathSet, config: GeometryConfig) -> np.ndarray:
    """H = sum_l alpha_l a_r(theta_l) a_t(phi_l)^H."""
    if len(paths) != config.n_paths:
        raise InvalidArgument(f"PathSet has {len(paths)} paths, config expects {config.n_paths}")
    a_r = _steering_matrix(paths.aoa_rad, config.n_rx, config.element_spacing)
    a_t = _steering_matrix(paths.aod_rad, config.n_tx, config.element_spacing)
    return (a_r * paths.gains[None, :]) @ a_t.conj().T


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries exp(-j 2 pi p q / n) / sqrt(n)."""
    if n < 1:
        raise InvalidArgument(f"size must be >= 1, got {n}")
    return _dft(n).copy()


@lru_cache(maxsize=16)
def _dft(n: int) -> np.ndarray:
    pq = np.outer(np.arange(n), np.arange(n)) % n
    d = np.exp(-2j * np.pi * pq / n) / np.sqrt(n)
    d.setflags(write=False)
    return d


def to_beamspace(h: np.ndarray) -> np.ndarray:
    """H_sl = D_r^H H D_t, the inverse of H = D_r H_sl D_t^H."""
    h = np.asarray(h)
    if h.ndim != 2:
        raise InvalidArgument("channel must be a matrix")
    d_r, d_t = _dft(h.shape[0]), _dft(h.shape[1])
    return d_r.conj().T @ h @ d_t


def from_beamspace(h_sl: np.ndarray) -> np.ndarray:
    d_r, d_t = _dft(h_sl.shape[0]), _dft(h_sl.shape[1])
    return d_r @ h_sl @ d_t.conj().T


def to_real_stacked(h_sl: np.ndarray) -> np.ndarray:
    """[Re(H_sl); Im(H_sl)] as a real 2N_r x N_t matrix."""
    h_sl = np.asarray(h_sl)
    if h_sl.ndim != 2:
        raise InvalidArgument("expected a matrix")
    return np.concatenate([h_sl.real, h_sl.imag], axis=0)


def from_real_stacked(h_real: np.ndarray) -> np.ndarray:
    h_real = np.asarray(h_real)
    if h_real.ndim != 2 or h_real.shape[0] % 2:
        raise InvalidArgument("expected a 2N_r x N_t real matrix")
    n_r = h_real.shape[0] // 2
    return h_real[:n_r] + 1j * h_real[n_r:]


def numeric_rank(a: np.ndarray, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def sample_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, dtype=np.uint64)[0])


def make_sample(config: GeometryConfig, seed: int) -> ChannelSample:
    rng = np.random.default_rng(seed)
    paths = sample_geometry(config, rng)
    h = synth_channel(paths, config)
    h_sl = to_beamspace(h)
    return ChannelSample(h_complex=h, h_beam=h_sl, h_real=to_real_stacked(h_sl), paths=paths, seed=seed)


def generate_dataset(config: GeometryConfig, count: int, master_seed: int, keep_samples: bool = False) -> Dataset:
    """Generate ``count`` samples; sample i is seeded from (master_seed, i) only."""
    if count < 1:
        raise InvalidArgument(f"count must be >= 1, got {count}")
    seeds = np.array([sample_seed(master_seed, i) for i in range(count)], dtype=np.uint64)
    samples = [make_sample(config, int(s)) for s in seeds]
    tensors = np.stack([s.h_real.reshape(2, config.n_rx, config.n_tx) for s in samples])
    # DFT beamspace of ULA paths has real-stacked rank L + 1, not 2L: every
    # DFT bin of a unit-modulus geometric sequence has real part 1/2 of its
    # common factor, which removes one real dimension.  Record what is measured.
    rank = max(numeric_rank(s.h_real) for s in samples)
    return Dataset(
        tensors=tensors,
        kind="mmwave_geometric",
        seed=master_seed,
        config=config,
        sample_seeds=seeds,
        samples=samples if keep_samples else None,
        params={"geometry": config.to_dict(), "rank": rank},
    )
