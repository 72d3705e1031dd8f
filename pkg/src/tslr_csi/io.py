"""On-disk formats: datasets, checkpoints and reports.

A dataset or checkpoint is a directory holding ``manifest.json`` and one
little-endian blob.  Loaders validate the blob length against the manifest
and refuse unknown format versions.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .channel_sim import Dataset, GeometryConfig
from .errors import ArchMismatch, FormatError
from .fista_net import ArchConfig, FistaNet, count_trainable_params

FORMAT_VERSION = 1
DATASET_KINDS = ("mmwave_geometric", "angular_delay")
MANIFEST = "manifest.json"
DATA_BLOB = "data.bin"
PARAM_BLOB = "params.bin"
LAYOUT = "row-major, channel-major per sample"


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_manifest(path: Path) -> dict:
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError:
        raise FormatError(f"{path}: missing {MANIFEST}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {manifest.get('format_version')!r}")
    return manifest


# --------------------------------------------------------------------------- datasets

def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = np.ascontiguousarray(ds.tensors, dtype="<f4")
    params = dict(ds.params)
    if ds.config is not None:
        params["geometry"] = ds.config.to_dict()
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": ds.kind,
        "count": int(len(ds)),
        "tensor_shape": [int(x) for x in ds.tensor_shape],
        "dtype": "f32le",
        "layout": LAYOUT,
        "seed": ds.seed,
        "params": params,
    }
    if ds.sample_seeds is not None:
        manifest["sample_seeds"] = [int(x) for x in ds.sample_seeds]
    (path / DATA_BLOB).write_bytes(blob.tobytes())
    _dump(manifest, path / MANIFEST)
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    m = _read_manifest(path)
    if m.get("kind") not in DATASET_KINDS:
        raise FormatError(f"{path}: unknown kind {m.get('kind')!r}")
    if m.get("dtype") != "f32le":
        raise FormatError(f"{path}: unsupported dtype {m.get('dtype')!r}")
    shape = tuple(m["tensor_shape"])
    if len(shape) != 3 or shape[0] != 2:
        raise FormatError(f"{path}: tensor_shape must be [2, H, W], got {list(shape)}")
    raw = (path / DATA_BLOB).read_bytes()
    expected = m["count"] * int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: blob size mismatch, expected {expected} bytes, got {len(raw)}")
    tensors = np.frombuffer(raw, dtype="<f4").reshape((m["count"],) + shape).astype(np.float64)
    params = dict(m.get("params", {}))
    geo = params.get("geometry")
    seeds = m.get("sample_seeds")
    return Dataset(
        tensors=tensors,
        kind=m["kind"],
        seed=m.get("seed"),
        config=GeometryConfig(**geo) if geo else None,
        sample_seeds=None if seeds is None else np.array(seeds, dtype=np.uint64),
        params=params,
    )


def dataset_hash(path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    h.update((path / MANIFEST).read_bytes())
    h.update((path / DATA_BLOB).read_bytes())
    return h.hexdigest()


def ingest_angular_delay(source, out_path=None, img_h: int = 32, img_w: int = 32, key: str = "HT") -> Dataset:
    """Wrap an externally produced angular-delay corpus as a dataset.

    ``source`` is an array or a .npy/.npz/.mat file holding either real
    (N, 2*H*W) rows, real (N, 2, H, W) tensors or complex (N, H, W)
    matrices.  Values are kept as given; min/max are recorded.
    """
    if isinstance(source, (str, Path)):
        src = Path(source)
        if src.suffix == ".npy":
            arr = np.load(src)
        elif src.suffix == ".npz":
            arr = np.load(src)[key]
        elif src.suffix == ".mat":
            import scipy.io

            arr = scipy.io.loadmat(src)[key]
        else:
            raise FormatError(f"unsupported ingestion file type {src.suffix!r}")
        origin = str(src)
    else:
        arr, origin = np.asarray(source), "array"
    if np.iscomplexobj(arr):
        if arr.ndim != 3:
            raise FormatError(f"complex input must be (N, H, W), got {arr.shape}")
        arr = np.stack([arr.real, arr.imag], axis=1)
    elif arr.ndim == 2:
        if arr.shape[1] != 2 * img_h * img_w:
            raise FormatError(f"row length {arr.shape[1]} != 2*{img_h}*{img_w}")
        arr = arr.reshape(len(arr), 2, img_h, img_w)
    elif arr.ndim != 4 or arr.shape[1] != 2:
        raise FormatError(f"cannot interpret array of shape {arr.shape}")
    tensors = np.asarray(arr, dtype=np.float32).astype(np.float64)
    ds = Dataset(
        tensors=tensors,
        kind="angular_delay",
        params={"source": origin, "min": float(tensors.min()), "max": float(tensors.max())},
    )
    if out_path is not None:
        save_dataset(ds, out_path)
    return ds


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(net: FistaNet, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, t, trainable in net.named_entries():
        a = t.detach().to(torch.float64).cpu().numpy()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "length": int(a.size),
                        "trainable": trainable})
        chunks.append(np.ascontiguousarray(a, dtype="<f8").reshape(-1))
        offset += a.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0, "<f8")
    (path / PARAM_BLOB).write_bytes(blob.tobytes())
    _dump({"format_version": FORMAT_VERSION, "arch": net.arch.to_dict(), "dtype": "f64le",
           "entries": entries, "meta": meta or {}}, path / MANIFEST)
    return path


def load_checkpoint(path, expect_arch: ArchConfig | None = None, dtype=torch.float64):
    """Returns (net, meta)."""
    path = Path(path)
    m = _read_manifest(path)
    arch = ArchConfig.from_dict(m["arch"])
    if expect_arch is not None and expect_arch != arch:
        raise ArchMismatch(f"{path}: checkpoint arch {arch} != expected {expect_arch}")
    raw = np.frombuffer((path / PARAM_BLOB).read_bytes(), dtype="<f8")
    total = sum(e["length"] for e in m["entries"])
    if raw.size != total:
        raise FormatError(f"{path}: blob holds {raw.size} values, manifest lists {total}")
    net = FistaNet(arch, dtype)
    expected = {name: (t, trainable) for name, t, trainable in net.named_entries()}
    if set(expected) != {e["name"] for e in m["entries"]}:
        missing = sorted(set(expected) ^ {e["name"] for e in m["entries"]})
        raise ArchMismatch(f"{path}: entry set mismatch at {missing[0]}")
    with torch.no_grad():
        for e in m["entries"]:
            t, _ = expected[e["name"]]
            if list(t.shape) != e["shape"] or e["length"] != t.numel():
                raise ArchMismatch(f"{path}: entry {e['name']} has shape {e['shape']}, arch needs {list(t.shape)}")
            vals = raw[e["offset"]:e["offset"] + e["length"]].reshape(t.shape)
            t.copy_(torch.from_numpy(vals.copy()))
    n_train = sum(e["length"] for e in m["entries"] if e["trainable"])
    if n_train != count_trainable_params(arch)["total"]:
        raise FormatError(f"{path}: {n_train} trainable values, accounting says {count_trainable_params(arch)['total']}")
    return net, m.get("meta", {})


# --------------------------------------------------------------------------- reports

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return o


def write_report(report: dict, path=None) -> str:
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n")
    return text
