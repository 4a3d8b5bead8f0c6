"""Checkpoints as directories: a JSON manifest plus raw float64 blobs.

Layout:
    <name>/manifest.json   format tag, counters, config, tensor table
    <name>/params.bin      parameters and buffers, little-endian float64
    <name>/optim.bin       Adam first/second moments, same order and dtype

The tensor table records name, shape, byte offset and trainability for
every entry in params.bin, so a load can verify each tensor before
touching model state.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

FORMAT = "ctxseg-ckpt-1"


def _entries(model):
    """Parameters first, then buffers, both in module discovery order."""
    for name, p in model.named_parameters():
        yield name, p.data, True
    for name, buf in model.named_buffers():
        yield name, buf, False


def save_checkpoint(path: str | Path, model, optimizer=None, *, epoch: int = 0,
                    step: int = 0, config: dict | None = None,
                    best_val: float | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    table = []
    offset = 0
    with open(path / "params.bin", "wb") as fh:
        for name, arr, trainable in _entries(model):
            blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            table.append({"name": name, "shape": list(arr.shape),
                          "offset": offset, "trainable": trainable})
            fh.write(blob)
            offset += len(blob)

    manifest = {
        "format": FORMAT,
        "epoch": epoch,
        "step": step,
        "best_val": best_val,
        "config": config,
        # every random stream is keyed by (seed, completed epochs), so
        # this pair is the complete generator state
        "rng": {"seed": None if config is None else config.get("seed"),
                "epochs_completed": epoch},
        "tensors": table,
    }

    if optimizer is not None:
        state = optimizer.state_dict()
        moments = []
        offset = 0
        with open(path / "optim.bin", "wb") as fh:
            for name, _ in optimizer.params:
                m, v = state["m"][name], state["v"][name]
                blob = np.ascontiguousarray(m, dtype="<f8").tobytes()
                blob += np.ascontiguousarray(v, dtype="<f8").tobytes()
                moments.append({"name": name, "shape": list(m.shape),
                                "offset": offset})
                fh.write(blob)
                offset += len(blob)
        manifest["optim"] = {
            "lr": optimizer.lr, "beta1": optimizer.beta1,
            "beta2": optimizer.beta2, "eps": optimizer.eps,
            "step": state["step"], "moments": moments,
        }

    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise CheckpointError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"manifest under {path} is not valid JSON: {e}") from e
    if manifest.get("format") != FORMAT:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format')!r} under {path}")
    return manifest


def _read_blob(raw: bytes, entry: dict, source: str) -> np.ndarray:
    shape = tuple(entry["shape"])
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    start = entry["offset"]
    end = start + 8 * count
    if end > len(raw):
        raise CheckpointError(
            f"{source} is truncated: tensor '{entry['name']}' needs bytes "
            f"[{start}, {end}) but the file holds {len(raw)}")
    return np.frombuffer(raw[start:end], dtype="<f8").reshape(shape).copy()


def load_checkpoint(path: str | Path, model, optimizer=None) -> dict:
    """Restore model (and optionally optimizer) state in place.

    Returns the manifest. Any name or shape difference between the
    checkpoint and the live model raises CheckpointError naming the tensor.
    """
    path = Path(path)
    manifest = read_manifest(path)
    pf = path / "params.bin"
    if not pf.exists():
        raise CheckpointError(f"no params.bin under {path}")
    raw = pf.read_bytes()

    stored = {e["name"]: e for e in manifest["tensors"]}
    live = {name: (arr, trainable) for name, arr, trainable in _entries(model)}
    missing = sorted(set(live) - set(stored))
    extra = sorted(set(stored) - set(live))
    if missing or extra:
        raise CheckpointError(
            f"tensor names differ from the model: missing {missing}, unexpected {extra}")

    for name, (arr, _) in live.items():
        entry = stored[name]
        if tuple(entry["shape"]) != arr.shape:
            raise CheckpointError(
                f"tensor '{name}' has shape {tuple(entry['shape'])} in the "
                f"checkpoint but {arr.shape} in the model")
        arr[...] = _read_blob(raw, entry, str(pf))

    if optimizer is not None:
        if "optim" not in manifest:
            raise CheckpointError(f"checkpoint {path} stores no optimizer state")
        of = path / "optim.bin"
        if not of.exists():
            raise CheckpointError(f"no optim.bin under {path}")
        oraw = of.read_bytes()
        opt = manifest["optim"]
        ms: dict[str, np.ndarray] = {}
        vs: dict[str, np.ndarray] = {}
        for entry in opt["moments"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            ms[entry["name"]] = _read_blob(oraw, entry, str(of))
            ventry = {"name": entry["name"], "shape": entry["shape"],
                      "offset": entry["offset"] + 8 * count}
            vs[entry["name"]] = _read_blob(oraw, ventry, str(of))
        want = {name for name, _ in optimizer.params}
        if want - set(ms):
            raise CheckpointError(
                f"optimizer state misses moments for {sorted(want - set(ms))}")
        optimizer.lr = float(opt["lr"])
        optimizer.beta1 = float(opt["beta1"])
        optimizer.beta2 = float(opt["beta2"])
        optimizer.eps = float(opt["eps"])
        optimizer.load_state_dict({"step": opt["step"], "m": ms, "v": vs})
    return manifest


def check_architecture(manifest: dict, config_dict: dict, arch_fields) -> None:
    """Reject resuming with a config whose architecture differs."""
    stored = manifest.get("config") or {}
    for field in arch_fields:
        if field in stored and stored[field] != config_dict.get(field):
            raise CheckpointError(
                f"checkpoint was trained with {field}={stored[field]!r} but "
                f"the current config has {field}={config_dict.get(field)!r}")
