"""Command-line entry point: gen, train, eval, tslr-eval, fista, complexity."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np
import torch

from . import io
from .channel_sim import GeometryConfig, generate_dataset
from .errors import InvalidArgument
from .fista_net import ArchConfig, count_macc, count_trainable_params, init_params, preset
from .fista_solver import FistaConfig
from .linear_encoder import init_encoder
from .train_eval import (
    LossWeights,
    TrainConfig,
    TslrData,
    evaluate,
    fista_codec,
    net_codec,
    cross_fitted_estimates,
    stage1_estimates,
    train,
    tslr_eval,
    warm_start_init,
)

log = logging.getLogger("tslr_csi")

TARGETS = ("full", "angular32", "tslr1", "tslr2")


def _snr_list(text: str):
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        out.append(None if tok in ("none", "noiseless", "inf") else float(tok))
    return out


def _snr_schedule(text: str | None):
    if text is None:
        return None
    vals = _snr_list(text)
    if vals == [None]:
        return None
    if None in vals:
        raise InvalidArgument("--snr cannot mix noiseless with SNR values")
    return vals[0] if len(vals) == 1 else vals


def _lr_decay(text: str | None):
    if not text:
        return 1.0, None
    factor, every = text.split(":")
    return float(factor), int(every)


def _dataset_rank(ds, override=None) -> int:
    if override:
        return override
    if "rank" not in ds.params:
        raise InvalidArgument("dataset does not record a TSLR rank; pass --rank")
    return int(ds.params["rank"])


def _targets(ds, target: str, rank: int | None):
    """Row-major flattened training targets and the image shape they use."""
    _, h, w = ds.tensor_shape
    if target in ("full", "angular32"):
        if target == "angular32" and (h, w) != (32, 32):
            raise InvalidArgument(f"angular32 needs [2, 32, 32] samples, dataset has [2, {h}, {w}]")
        return ds.tensors.reshape(len(ds), -1), (h, w), None
    tslr = TslrData.from_matrices(ds.matrices(), rank=rank, rank_tol=1e-5)
    block = tslr.h1 if target == "tslr1" else tslr.h2
    return block.reshape(len(ds), -1), (h, block.shape[2]), tslr


def cmd_gen(a):
    cfg = GeometryConfig(n_rx=a.nr, n_tx=a.nt, n_paths=a.paths, angle_spread_deg=a.spread_deg,
                         element_spacing=a.spacing, carrier_ghz=a.carrier_ghz)
    ds = generate_dataset(cfg, a.count, a.seed)
    io.save_dataset(ds, a.out)
    return {"command": "gen", "config": vars(a), "dataset_hash": io.dataset_hash(a.out), "count": len(ds)}


def cmd_train(a):
    torch.manual_seed(a.seed)
    ds = io.load_dataset(a.data)
    rank = _dataset_rank(ds, a.rank) if a.arch.startswith("tslr") else None
    targets, (img_h, img_w), tslr = _targets(ds, a.arch, rank)
    arch = ArchConfig(stages=a.stages, img_h=img_h, img_w=img_w, cr=a.cr)
    dtype = torch.float32 if a.float32 else torch.float64
    net = init_params(arch, np.random.default_rng(a.seed), dtype=dtype)
    factor, every = _lr_decay(a.lr_decay)
    cfg = TrainConfig(epochs=a.epochs, batch_size=a.batch, learning_rate=a.lr, lr_decay_factor=factor,
                      lr_decay_every=every, seed=a.seed, loss_weights=LossWeights(a.mu, a.zeta),
                      snr_db=_snr_schedule(a.snr), checkpoint_path=a.out, checkpoint_every=a.ckpt_every)
    init_fn = None
    if a.arch == "tslr2":
        if not a.stage1_ckpt:
            raise InvalidArgument("--arch tslr2 needs --stage1-ckpt")
        net1, _ = io.load_checkpoint(a.stage1_ckpt)
        h1 = tslr.h1.reshape(len(ds), -1)
        if a.crossfit:
            fold_cfg = dataclasses.replace(cfg, checkpoint_path=None, checkpoint_every=0)
            make = lambda f: init_params(net1.arch, np.random.default_rng(a.seed + 1000 + f), dtype=dtype)
            est = cross_fitted_estimates(h1, make, fold_cfg, a.crossfit, cfg.snr_db, seed=a.seed)
        else:
            est = stage1_estimates(net1, h1, cfg.snr_db, seed=a.seed)
        init_fn = warm_start_init(est, n_rows=tslr.h1.shape[1])
    result = train(net, targets, cfg, init_fn=init_fn)
    meta = {"target": a.arch, "rank": rank, "train_config": cfg.to_dict(), "history": result.history,
            "dataset": a.data, "aborted": result.aborted}
    io.save_checkpoint(result.net, a.out, meta=meta)
    return {"command": "train", "config": vars(a), "history": result.history, "aborted": result.aborted,
            "trainable_params": count_trainable_params(arch)["total"]}


def cmd_eval(a):
    net, meta = io.load_checkpoint(a.ckpt)
    ds = io.load_dataset(a.data)
    target = meta.get("target", "full")
    targets, (img_h, img_w), _ = _targets(ds, target, meta.get("rank"))
    if (img_h, img_w) != (net.arch.img_h, net.arch.img_w):
        raise InvalidArgument(f"checkpoint image {net.arch.img_h}x{net.arch.img_w} does not match data {img_h}x{img_w}")
    rep = evaluate(net, targets, _snr_list(a.snr_list), seed=a.seed, meta={"ckpt": a.ckpt, "data": a.data})
    return {"command": "eval", "config": vars(a), **rep.to_dict()}


def cmd_tslr_eval(a):
    net1, meta1 = io.load_checkpoint(a.ckpt1)
    net2, meta2 = io.load_checkpoint(a.ckpt2)
    ds = io.load_dataset(a.data)
    rank = meta1.get("rank") or _dataset_rank(ds)
    if meta2.get("rank") not in (None, rank):
        raise InvalidArgument(f"stage checkpoints disagree on rank: {rank} vs {meta2.get('rank')}")
    data = TslrData.from_matrices(ds.matrices(), rank=rank, rank_tol=1e-5)
    snrs = _snr_list(a.snr_list)
    rep = tslr_eval(net_codec(net1), net_codec(net2), data, snrs, warm_start=not a.zero_init, seed=a.seed)
    out = {"command": "tslr-eval", "config": vars(a), **rep.to_dict()}
    out["trainable_params"] = (count_trainable_params(net1.arch)["total"] + count_trainable_params(net2.arch)["total"])
    return out


def cmd_fista(a):
    ds = io.load_dataset(a.data)
    targets = ds.tensors.reshape(len(ds), -1)
    _, h, w = ds.tensor_shape
    enc = init_encoder(targets.shape[1], a.cr, np.random.default_rng(a.seed))
    cfg = FistaConfig(tau=a.tau, eta=a.eta, iters=a.iters)
    arch = ArchConfig(stages=a.iters, img_h=h, img_w=w, cr=a.cr)
    rep = evaluate(fista_codec(enc, cfg), targets, _snr_list(a.snr_list), arch=arch, model="fista", seed=a.seed)
    return {"command": "fista", "config": vars(a), **rep.to_dict()}


def _arch_from_name(name: str, cr: float, stages: int) -> ArchConfig:
    if "x" in name:
        h, w = (int(v) for v in name.lower().split("x"))
        return ArchConfig(stages=stages, img_h=h, img_w=w, cr=cr)
    return preset(name, cr, stages)


def cmd_complexity(a):
    arch = _arch_from_name(a.arch, a.cr, a.stages)
    return {
        "command": "complexity",
        "config": vars(a),
        "arch": arch.to_dict(),
        "trainable_params": count_trainable_params(arch),
        "macc_fista": count_macc(arch, "fista"),
        "macc_fista_net": count_macc(arch, "fista_net"),
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tslr-csi", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a geometric mmWave dataset")
    g.add_argument("--nr", type=int, default=16)
    g.add_argument("--nt", type=int, default=16)
    g.add_argument("--paths", type=int, default=2)
    g.add_argument("--spread-deg", type=float, default=50.0)
    g.add_argument("--spacing", type=float, default=0.5)
    g.add_argument("--carrier-ghz", type=float, default=90.0)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--report")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a FISTA-Net encoder/decoder")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", choices=TARGETS, default="full")
    t.add_argument("--cr", type=float, default=0.25)
    t.add_argument("--stages", type=int, default=20)
    t.add_argument("--epochs", type=int, default=300)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lr-decay", default=None, help="FACTOR:EPOCHS, e.g. 0.1:100")
    t.add_argument("--mu", type=float, default=0.01)
    t.add_argument("--zeta", type=float, default=0.01)
    t.add_argument("--snr", default=None, help="training SNR in dB, comma list (one drawn per batch) or 'none'")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--rank", type=int, default=None, help="TSLR rank (default: from dataset manifest)")
    t.add_argument("--stage1-ckpt", default=None, help="stage-1 checkpoint for --arch tslr2 warm starts")
    t.add_argument("--crossfit", type=int, default=0, metavar="FOLDS",
                   help="tslr2: build training warm starts from out-of-fold stage-1 nets (trained with this command's settings)")
    t.add_argument("--ckpt-every", type=int, default=0)
    t.add_argument("--float32", action="store_true")
    t.add_argument("--report")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate one checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--snr-list", default="noiseless")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--report")
    e.set_defaults(func=cmd_eval)

    te = sub.add_parser("tslr-eval", help="evaluate a two-stage TSLR system")
    te.add_argument("--ckpt1", required=True)
    te.add_argument("--ckpt2", required=True)
    te.add_argument("--data", required=True)
    te.add_argument("--snr-list", default="5,10,15,20")
    te.add_argument("--zero-init", action="store_true", help="disable the LS warm start")
    te.add_argument("--seed", type=int, default=0)
    te.add_argument("--report")
    te.set_defaults(func=cmd_tslr_eval)

    f = sub.add_parser("fista", help="classical FISTA baseline with a Gaussian encoder")
    f.add_argument("--data", required=True)
    f.add_argument("--cr", type=float, default=0.25)
    f.add_argument("--tau", type=float, default=0.0)
    f.add_argument("--eta", type=float, default=None)
    f.add_argument("--iters", type=int, default=20)
    f.add_argument("--snr-list", default="noiseless,5,10,15,20")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--report")
    f.set_defaults(func=cmd_fista)

    c = sub.add_parser("complexity", help="parameter and MACC accounting")
    c.add_argument("--arch", default="angular32", help="preset name or HxW image size")
    c.add_argument("--cr", type=float, default=0.25)
    c.add_argument("--stages", type=int, default=20)
    c.add_argument("--report")
    c.set_defaults(func=cmd_complexity)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage errors, 0 for --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    func = args.func
    args_ns = argparse.Namespace(**{k: v for k, v in vars(args).items() if k != "func"})
    try:
        report = func(args_ns)
    except (ValueError, ArithmeticError, OSError, KeyError) as exc:
        print(f"tslr-csi {args.command}: error: {exc}", file=sys.stderr)
        return 1
    io.write_report(report, args.report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
