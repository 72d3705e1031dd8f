"""Loss, training loop, NMSE metric and end-to-end evaluation."""

from __future__ import annotations

import copy
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import fista_solver
from .errors import InvalidArgument, NumericFailure
from .fista_net import ArchConfig, FistaNet, NetOutput, count_macc, count_trainable_params, record_kinks
from .tslr_codec import decompose, ls_warm_start_batch, reassemble

log = logging.getLogger(__name__)

NMSE_FLOOR_DB = -300.0


# --------------------------------------------------------------------------- loss

@dataclass(frozen=True)
class LossWeights:
    mu: float = 0.01
    zeta: float = 0.01

    def __post_init__(self):
        if self.mu < 0 or self.zeta < 0:
            raise InvalidArgument("loss weights must be nonnegative")


def _sq(x):
    return (x * x).flatten(1).sum(dim=1)


def composite_loss(out: NetOutput, target, weights: LossWeights, sym_mode: str = "feature", net=None):
    """L_mse + mu * L_iteration + zeta * L_symmetry, averaged over the batch.

    ``sym_mode="feature"`` penalises |St(S(X_k)) - X_k|^2 on the stage-k input
    X_k = R_k(G_k) of the sparse transform.  ``sym_mode="printed"`` uses
    |St(S(R_k(h_k)) - R_k(h))|^2 instead, which needs ``net``.
    Returns (total, terms) where terms are detached floats.
    """
    if not out.iterates:
        raise InvalidArgument("network output has no iterates")
    target = target.reshape(out.final.shape)
    mse = _sq(out.final - target).mean()
    it = torch.stack([_sq(h - target) for h in out.iterates]).sum(dim=0).mean()
    if sym_mode == "feature":
        sym = torch.stack([_sq(st_s - x) for x, st_s in out.sym_features]).sum(dim=0).mean()
    elif sym_mode == "printed":
        if net is None:
            raise InvalidArgument("printed symmetry loss needs the network")
        arch = net.arch
        img = lambda v: v.reshape(v.shape[0], arch.io_channels, arch.img_h, arch.img_w)  # noqa: E731
        terms = []
        for st, h in zip(net.stages, out.iterates):
            lift = lambda v: F.conv2d(img(v), st.R, padding=1)  # noqa: E731
            terms.append(_sq(st.inverse_transform(st.transform(lift(h)) - lift(target))))
        sym = torch.stack(terms).sum(dim=0).mean()
    else:
        raise InvalidArgument(f"unknown sym_mode {sym_mode!r}")
    total = mse + weights.mu * it + weights.zeta * sym
    return total, {"mse": mse.item(), "iteration": it.item(), "symmetry": sym.item(), "total": total.item()}


# --------------------------------------------------------------------------- metric

def nmse_ratios(h_hat, h) -> np.ndarray:
    """Per-sample |h_hat - h|^2 / |h|^2; the first axis indexes samples."""
    h_hat = np.asarray(h_hat, dtype=float)
    h = np.asarray(h, dtype=float)
    if h_hat.shape != h.shape:
        raise InvalidArgument(f"shape mismatch {h_hat.shape} vs {h.shape}")
    h2 = h.reshape(len(h), -1)
    den = np.sum(h2 * h2, axis=1)
    if np.any(den == 0):
        raise InvalidArgument("reference has zero norm")
    return np.sum((h_hat.reshape(len(h), -1) - h2) ** 2, axis=1) / den


def to_db(ratio: float) -> float:
    return NMSE_FLOOR_DB if ratio <= 0 else max(10.0 * math.log10(ratio), NMSE_FLOOR_DB)


def nmse(h_hat, h, batched: bool = False) -> float:
    """NMSE in dB.  With ``batched`` the mean of per-sample ratios is taken before the log."""
    if not batched:
        h_hat, h = np.asarray(h_hat)[None], np.asarray(h)[None]
    return to_db(float(np.mean(nmse_ratios(h_hat, h))))


# --------------------------------------------------------------------------- noise

def awgn_torch(s: torch.Tensor, snr_db, gen: torch.Generator) -> torch.Tensor:
    """Per-codeword AWGN; ``snr_db`` may be a scalar or a per-row tensor."""
    if snr_db is None:
        return s
    snr = torch.as_tensor(snr_db, dtype=s.dtype)
    if snr.ndim == 0:
        snr = snr.expand(s.shape[0])
    power = (s.detach() ** 2).mean(dim=1)
    sigma = torch.sqrt(power * 10.0 ** (-snr / 10.0))
    sigma = torch.where(torch.isinf(snr), torch.zeros_like(sigma), sigma)
    noise = torch.randn(s.shape, generator=gen, dtype=s.dtype)
    return s + sigma.unsqueeze(1) * noise


# --------------------------------------------------------------------------- gradient check

def _param_class(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "encoder":
        return "encoder.w"
    return ".".join(parts[2:])


def grad_check(net: FistaNet, target, weights: LossWeights, eps: float = 1e-5, per_class: int = 20,
               seed: int = 0, mode: str = "train", x0=None, rel_floor: float = 1e-6) -> dict:
    """Compare autograd gradients with central differences.

    The codeword is recomputed from ``target`` through the encoder, so the
    encoder weights are checked too.  Returns max relative error per
    parameter class, plus "max" over classes and "skipped", the number of
    coordinates redrawn because their +-eps stencil crossed a kink (a ReLU,
    |.| or soft-threshold branch changed), where central differences do not
    estimate the derivative.  Works on a copy of ``net``.

    The relative error is |a - d| / max(|a|, |d|, rel_floor * max(1, |L|)).
    Central differences carry roundoff near 2e-16 |L| / eps, so gradients
    far below the floor (e.g. FC biases feeding batch norm, which are exactly
    zero) cannot be resolved and are compared on the floor scale instead.
    """
    net = copy.deepcopy(net)
    target = torch.as_tensor(target, dtype=net.dtype)
    rng = np.random.default_rng(seed)

    def loss_fn():
        with record_kinks() as kinks:
            out = net(net.encode(target), x0=x0, mode=mode)
            loss = composite_loss(out, target, weights)[0]
        return loss, torch.cat(kinks) if kinks else torch.zeros(0, dtype=torch.bool)

    net.zero_grad()
    base, pattern = loss_fn()
    base.backward()
    floor = rel_floor * max(1.0, abs(base.item()))
    errors: dict[str, float] = {}
    skipped = 0
    with torch.no_grad():
        for name, p, trainable in net.named_entries():
            if not trainable:
                continue
            grad = torch.zeros_like(p) if p.grad is None else p.grad  # unused, e.g. the last gamma
            if not torch.isfinite(grad).all():
                raise NumericFailure(-1, f"non-finite analytic gradient for {name}")
            flat = p.view(-1)
            gflat = grad.reshape(-1)
            worst, used = 0.0, 0
            for i in rng.permutation(flat.numel()):
                if used == per_class:
                    break
                orig = flat[i].item()
                flat[i] = orig + eps
                lp, kp = loss_fn()
                flat[i] = orig - eps
                lm, km = loss_fn()
                flat[i] = orig
                if not (torch.equal(kp, pattern) and torch.equal(km, pattern)):
                    skipped += 1
                    continue
                fd = (lp.item() - lm.item()) / (2 * eps)
                an = gflat[i].item()
                worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), floor))
                used += 1
            cls = _param_class(name)
            errors[cls] = max(errors.get(cls, 0.0), worst)
    errors["max"] = max(errors.values())
    errors["skipped"] = skipped
    return errors


# --------------------------------------------------------------------------- training

@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_decay_factor: float = 1.0
    lr_decay_every: int | None = None
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    snr_db: float | Sequence[float] | None = None  # None: noiseless; list: one SNR drawn per batch
    sym_mode: str = "feature"
    checkpoint_path: str | None = None
    checkpoint_every: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise InvalidArgument("epochs, batch_size and learning_rate must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate of 1-based ``epoch``."""
        if not self.lr_decay_every:
            return self.learning_rate
        return self.learning_rate * self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_every)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_db"] = list(self.snr_db) if isinstance(self.snr_db, (list, tuple)) else self.snr_db
        return d


@dataclass
class TrainResult:
    net: FistaNet
    history: list[dict]
    aborted: bool = False


InitFn = Callable[[np.ndarray, torch.Tensor, FistaNet], torch.Tensor]


def _draw_snr(cfg: TrainConfig, rng: np.random.Generator):
    if cfg.snr_db is None:
        return None
    if isinstance(cfg.snr_db, (list, tuple, np.ndarray)):
        return float(rng.choice(np.asarray(cfg.snr_db, dtype=float)))
    return float(cfg.snr_db)


def train(net: FistaNet, targets, cfg: TrainConfig, init_fn: InitFn | None = None) -> TrainResult:
    """Adam on every trainable parameter, encoder included.

    ``targets`` is an (N, n) array of row-major flattened blocks.
    ``init_fn(idx, s, net)`` supplies x0 for the batch rows ``idx`` given the
    noisy codewords ``s``; zeros when omitted.
    """
    if cfg.deterministic:
        torch.set_num_threads(1)
    data = torch.as_tensor(np.asarray(targets), dtype=net.dtype)
    if data.ndim != 2 or data.shape[1] != net.arch.input_len:
        raise InvalidArgument(f"targets shape {tuple(data.shape)} does not match input_len {net.arch.input_len}")
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    history: list[dict] = []
    good_state = copy.deepcopy(net.state_dict())
    n = len(data)

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        order = rng.permutation(n)
        sums = {"mse": 0.0, "iteration": 0.0, "symmetry": 0.0, "total": 0.0}
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                if len(idx) < 2:  # batch norm needs two rows
                    continue
                h = data[idx]
                s = awgn_torch(net.encode(h), _draw_snr(cfg, rng), gen)
                x0 = None if init_fn is None else init_fn(idx, s.detach(), net)
                out = net(s, x0=x0, mode="train")
                loss, terms = composite_loss(out, h, cfg.loss_weights, cfg.sym_mode, net)
                if not math.isfinite(terms["total"]):
                    raise NumericFailure(-1, "loss is not finite")
                opt.zero_grad()
                loss.backward()
                opt.step()
                for k in sums:
                    sums[k] += terms[k] * len(idx)
        except NumericFailure as exc:
            log.warning("training diverged in epoch %d (%s); restoring last good parameters", epoch, exc)
            net.load_state_dict(good_state)
            _maybe_checkpoint(net, cfg, history, force=True)
            return TrainResult(net=net, history=history, aborted=True)
        record = {k: v / n for k, v in sums.items()}
        record.update(epoch=epoch, lr=lr)
        history.append(record)
        log.info("epoch %d lr %.2e loss %.6g", epoch, lr, record["total"])
        good_state = copy.deepcopy(net.state_dict())
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            _maybe_checkpoint(net, cfg, history)
    _maybe_checkpoint(net, cfg, history, force=True)
    return TrainResult(net=net, history=history)


def _maybe_checkpoint(net, cfg: TrainConfig, history, force=False):
    if cfg.checkpoint_path and (force or cfg.checkpoint_every):
        from .io import save_checkpoint

        save_checkpoint(net, cfg.checkpoint_path, meta={"train_config": cfg.to_dict(), "history": history})


# --------------------------------------------------------------------------- codecs

@dataclass
class StageCodec:
    """An encoder matrix and a decoder mapping (codewords, x0) -> estimates."""

    w: np.ndarray
    decode: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "codec"


def net_codec(net: FistaNet, batch: int = 256) -> StageCodec:
    def decode(s, x0):
        outs = []
        with torch.no_grad():
            for i in range(0, len(s), batch):
                st = torch.as_tensor(s[i:i + batch], dtype=net.dtype)
                xt = torch.as_tensor(x0[i:i + batch], dtype=net.dtype)
                outs.append(net(st, x0=xt, mode="infer").final.double().numpy())
        return np.concatenate(outs)

    return StageCodec(w=net.w.detach().double().numpy(), decode=decode, name="fista_net")


def fista_codec(w, config: fista_solver.FistaConfig) -> StageCodec:
    w = np.asarray(getattr(w, "w", w), dtype=float)
    cfg = config if config.eta is not None else fista_solver.FistaConfig(
        tau=config.tau, eta=fista_solver.default_step(w), iters=config.iters, transform=config.transform)
    return StageCodec(w=w, decode=lambda s, x0: fista_solver.fista_solve(w, s, cfg, x0).final, name="fista")


def pinv_codec(w) -> StageCodec:
    w = np.asarray(getattr(w, "w", w), dtype=float)
    wp = np.linalg.pinv(w)
    return StageCodec(w=w, decode=lambda s, x0: s @ wp.T, name="pinv")


def _noisy_codewords(w, h, snr_db, rng):
    s = h @ w.T
    if snr_db is None or np.isposinf(snr_db):
        return s
    sigma = np.sqrt(np.mean(s * s, axis=1, keepdims=True) * 10.0 ** (-snr_db / 10.0))
    return s + sigma * rng.standard_normal(s.shape)


def _snr_key(snr) -> str:
    return "noiseless" if snr is None or np.isposinf(snr) else f"{float(snr):g}"


# --------------------------------------------------------------------------- reports

@dataclass
class MetricsReport:
    nmse_db: dict
    cr: float | None = None
    trainable_params: int | None = None
    macc_encoder: int | None = None
    macc_decoder: int | None = None
    series: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.nmse_db.items():
            if not math.isfinite(v):
                raise InvalidArgument(f"non-finite NMSE at {k}")

    def to_dict(self) -> dict:
        return asdict(self)


def _complexity(arch: ArchConfig | None, model: str):
    if arch is None:
        return {}
    macc = count_macc(arch, model)
    out = {"cr": arch.cr, "macc_encoder": macc["encoder"], "macc_decoder": macc["decoder"]}
    out["trainable_params"] = count_trainable_params(arch)["total"] if model == "fista_net" else 0
    return out


def evaluate(codec, targets, snr_list: Sequence, arch: ArchConfig | None = None, seed: int = 0,
             model: str = "fista_net", meta: dict | None = None) -> MetricsReport:
    """Single-matrix reconstruction NMSE per SNR (``None``/inf means noiseless).

    ``codec`` is a StageCodec or a FistaNet; ``targets`` an (N, n) array.
    """
    if isinstance(codec, FistaNet):
        if arch is not None and arch != codec.arch:
            raise InvalidArgument(f"arch mismatch: {arch} vs {codec.arch}")
        arch = codec.arch
        codec = net_codec(codec)
    h = np.asarray(targets, dtype=float)
    if h.ndim != 2 or h.shape[1] != codec.w.shape[1]:
        raise InvalidArgument(f"targets shape {h.shape} does not match encoder width {codec.w.shape[1]}")
    res = {}
    for snr in snr_list:
        rng = np.random.default_rng([seed, 0 if snr is None else int(round(1000 * float(snr))) & 0xFFFFFFFF])
        s = _noisy_codewords(codec.w, h, snr, rng)
        h_hat = codec.decode(s, np.zeros_like(h))
        res[_snr_key(snr)] = to_db(float(np.mean(nmse_ratios(h_hat, h))))
    return MetricsReport(nmse_db=res, meta=dict(meta or {}, seed=seed, samples=len(h)), **_complexity(arch, model))


@dataclass
class TslrData:
    """Per-sample TSLR split of a (count, 2N_r, N_t) stack at a fixed rank."""

    truth: np.ndarray
    h1: np.ndarray  # (count, 2N_r, R)
    h2: np.ndarray  # (count, 2N_r, N_t - R)
    parts: list

    @property
    def rank(self) -> int:
        return self.h1.shape[2]

    @classmethod
    def from_matrices(cls, mats, rank: int, rank_tol: float = 1e-8) -> "TslrData":
        parts = [decompose(m, rank_tol=rank_tol, rank=rank) for m in mats]
        return cls(truth=np.asarray(mats, dtype=float), h1=np.stack([p.h1 for p in parts]),
                   h2=np.stack([p.h2 for p in parts]), parts=parts)


def tslr_eval(codec1: StageCodec, codec2: StageCodec, data: TslrData, snr_list: Sequence,
              warm_start: bool = True, seed: int = 0, rcond: float = 1e-8, meta: dict | None = None) -> MetricsReport:
    """End-to-end TSLR feedback: compress h1 and h2, decode h1 from zeros,
    warm-start h2 from the h1 estimate, stitch and score against the full matrix.

    ``series`` carries the stage-wise NMSE (dB) per SNR and the number of
    samples whose warm start fell back to zeros.
    """
    cnt, p, r = data.h1.shape
    j = data.h2.shape[2]
    h1 = data.h1.reshape(cnt, -1)
    h2 = data.h2.reshape(cnt, -1)
    total, st1, st2, fallbacks = {}, {}, {}, {}
    for snr in snr_list:
        key = _snr_key(snr)
        rng = np.random.default_rng([seed, 1 if snr is None else int(round(1000 * float(snr))) & 0xFFFFFFFF])
        s1 = _noisy_codewords(codec1.w, h1, snr, rng)
        s2 = _noisy_codewords(codec2.w, h2, snr, rng)
        h1_hat = codec1.decode(s1, np.zeros_like(h1))
        if warm_start:
            x0, ok = ls_warm_start_batch(torch.from_numpy(h1_hat.reshape(cnt, p, r)), torch.from_numpy(codec2.w),
                                         torch.from_numpy(s2), rcond=rcond)
            x0, ok = x0.numpy(), ok.numpy()
        else:
            x0, ok = np.zeros_like(h2), np.ones(cnt, bool)
        h2_hat = codec2.decode(s2, x0)
        full = np.stack([reassemble(pt, a.reshape(p, r), b.reshape(p, j))
                         for pt, a, b in zip(data.parts, h1_hat, h2_hat)])
        total[key] = to_db(float(np.mean(nmse_ratios(full, data.truth))))
        st1[key] = to_db(float(np.mean(nmse_ratios(h1_hat, h1))))
        st2[key] = to_db(float(np.mean(nmse_ratios(h2_hat, h2))))
        fallbacks[key] = int(np.sum(~ok)) if warm_start else 0
    return MetricsReport(
        nmse_db=total,
        series={"stage1_nmse_db": st1, "stage2_nmse_db": st2, "warm_start_fallbacks": fallbacks},
        meta=dict(meta or {}, seed=seed, samples=cnt, warm_start=warm_start, rank=r),
    )


def tune_fista(w, targets, snr_db, iters: int, taus: Sequence[float], eta_scales: Sequence[float],
               seed: int = 0) -> tuple[fista_solver.FistaConfig, float]:
    """Grid search (tau, eta) for classical FISTA on ``targets``; returns the best config and its NMSE (dB)."""
    w = np.asarray(getattr(w, "w", w), dtype=float)
    h = np.asarray(targets, dtype=float)
    s = _noisy_codewords(w, h, snr_db, np.random.default_rng(seed))
    base = 1.0 / fista_solver.lipschitz(w)
    best = (None, np.inf)
    for scale in eta_scales:
        for tau in taus:
            cfg = fista_solver.FistaConfig(tau=tau, eta=scale * base, iters=iters)
            try:
                with np.errstate(all="ignore"), warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    h_hat = fista_solver.fista_solve(w, s, cfg).final
            except ArithmeticError:
                continue
            score = to_db(float(np.mean(nmse_ratios(h_hat, h))))
            if score < best[1]:
                best = (cfg, score)
    return best


def stage1_estimates(net1: FistaNet, h1_targets, snr_db=None, seed: int = 0) -> np.ndarray:
    """Decode stage-1 blocks from zero init; ``snr_db`` may be a list (one draw per sample)."""
    h1 = np.asarray(h1_targets, dtype=float).reshape(len(h1_targets), -1)
    rng = np.random.default_rng(seed)
    w = net1.w.detach().double().numpy()
    if isinstance(snr_db, (list, tuple, np.ndarray)):
        snrs = rng.choice(np.asarray(snr_db, dtype=float), size=len(h1))
        s = np.concatenate([_noisy_codewords(w, h1[i:i + 1], snrs[i], rng) for i in range(len(h1))])
    else:
        s = _noisy_codewords(w, h1, snr_db, rng)
    return net_codec(net1).decode(s, np.zeros_like(h1))


def cross_fitted_estimates(h1_targets, make_net: Callable[[int], FistaNet], cfg: TrainConfig, folds: int = 2,
                           snr_db=None, seed: int = 0) -> np.ndarray:
    """Out-of-fold stage-1 estimates for stage-2 training.

    A stage-1 network trained on all samples reconstructs its own training
    set far better than unseen data, so warm starts built from it are too
    optimistic.  Here each fold is decoded by a network trained on the other
    folds.  ``make_net(fold)`` returns a freshly initialised network.
    """
    h1 = np.asarray(h1_targets, dtype=float).reshape(len(h1_targets), -1)
    if folds < 2:
        raise InvalidArgument("cross-fitting needs at least two folds")
    parts = np.array_split(np.random.default_rng(seed).permutation(len(h1)), folds)
    est = np.empty_like(h1)
    for f, held in enumerate(parts):
        fit = np.setdiff1d(np.arange(len(h1)), held)
        net = make_net(f)
        train(net, h1[fit], cfg)
        est[held] = stage1_estimates(net, h1[held], snr_db, seed=seed + f + 1)
    return est


def warm_start_init(h1_hat, n_rows: int, rcond: float = 1e-8) -> InitFn:
    """x0 provider for stage-2 training: LS warm start from fixed stage-1 estimates.

    The warm start is recomputed with the current encoder each batch but is
    treated as a constant input (no gradient flows through the pseudo-inverse).
    """
    est = torch.as_tensor(np.asarray(h1_hat), dtype=torch.float64)
    est = est.reshape(len(est), n_rows, -1)

    def init(idx, s, net):
        x0, _ = ls_warm_start_batch(est[idx], net.w.detach().double(), s.double(), rcond=rcond)
        return x0.to(net.dtype)

    return init


def tune_fista_tslr(w1, w2, data: TslrData, snr_db, iters: int, taus: Sequence[float], eta_scales: Sequence[float],
                    seed: int = 0, rcond: float = 1e-8):
    """Grid-tune a classical TSLR pipeline one stage at a time.

    Stage 1 is tuned on its own block NMSE from zero init.  Stage 2 is then
    tuned on its block NMSE starting from the LS warm start built on the tuned
    stage-1 estimates.  Returns (cfg1, cfg2).
    """
    cnt, p, r = data.h1.shape
    h1 = data.h1.reshape(cnt, -1)
    h2 = data.h2.reshape(cnt, -1)
    w1 = np.asarray(getattr(w1, "w", w1), dtype=float)
    w2 = np.asarray(getattr(w2, "w", w2), dtype=float)
    rng = np.random.default_rng(seed)
    s1 = _noisy_codewords(w1, h1, snr_db, rng)
    s2 = _noisy_codewords(w2, h2, snr_db, rng)

    def search(w, s, truth, x0):
        base = 1.0 / fista_solver.lipschitz(w)
        best = (None, np.inf, None)
        for scale in eta_scales:
            for tau in taus:
                cfg = fista_solver.FistaConfig(tau=tau, eta=scale * base, iters=iters)
                try:
                    with np.errstate(all="ignore"), warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        est = fista_solver.fista_solve(w, s, cfg, x0).final
                except ArithmeticError:
                    continue
                score = float(np.mean(nmse_ratios(est, truth)))
                if score < best[1]:
                    best = (cfg, score, est)
        return best

    cfg1, _, h1_hat = search(w1, s1, h1, np.zeros_like(h1))
    x0, _ = ls_warm_start_batch(torch.from_numpy(h1_hat.reshape(cnt, p, r)), torch.from_numpy(w2),
                                torch.from_numpy(s2), rcond=rcond)
    cfg2, _, _ = search(w2, s2, h2, x0.numpy())
    return cfg1, cfg2
