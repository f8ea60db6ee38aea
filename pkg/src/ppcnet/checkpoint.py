"""Versioned checkpoint container.

Layout: magic "PPCK", u32 format version, u64 header length, a UTF-8 JSON
header (spec echo, array directory, epoch, optimizer and rng state), then
the raw little-endian array blob. Arrays round-trip bit-exactly, so a
loaded model reproduces forward outputs down to the last bit, and the
stored rng state lets interrupted training resume deterministically.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .network import Model, NetworkSpec, build_network
from .rng import make_rng, restore_rng, rng_state

MAGIC = b"PPCK"
VERSION = 1


@dataclass
class Checkpoint:
    model: Model
    epoch: int
    velocity: dict
    rng: np.random.Generator | None
    train_params: dict | None


def _directory(arrays):
    """(name, array) pairs -> directory entries plus the packed blob."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr)
        raw = data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "shape": list(data.shape),
                        "dtype": str(data.dtype), "offset": offset, "bytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def save_checkpoint(path, model: Model, epoch: int = 0, velocity: dict | None = None,
                    rng: np.random.Generator | None = None,
                    train_params: dict | None = None):
    arrays = [(f"param.{name}", t.data) for name, t in model.params()]
    arrays += [(f"stat.{name}", a) for name, a in model.running_stats()]
    if velocity:
        arrays += [(f"vel.{name}", v) for name, v in sorted(velocity.items())]
    entries, blob = _directory(arrays)
    header = {
        "version": VERSION,
        "spec": model.spec.to_dict(),
        "dtype": str(np.dtype(model.dtype)),
        "epoch": epoch,
        "arrays": entries,
        "rng_state": None if rng is None else rng_state(rng),
        "train_params": train_params,
    }
    raw_header = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(raw_header)))
        fh.write(raw_header)
        fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such checkpoint: {path}")
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DataError(f"not a checkpoint file: {path}")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode())
        blob = fh.read()

    arrays = {}
    for entry in header["arrays"]:
        lo, n = entry["offset"], entry["bytes"]
        if lo + n > len(blob):
            raise DataError(f"truncated checkpoint: {path}")
        arr = np.frombuffer(blob[lo:lo + n], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()

    spec = NetworkSpec.from_dict(header["spec"])
    model = build_network(spec, make_rng(0), dtype=np.dtype(header["dtype"]))
    for name, t in model.params():
        key = f"param.{name}"
        if key not in arrays:
            raise DataError(f"checkpoint missing array {key}")
        if t.data.shape != arrays[key].shape:
            raise DataError(f"checkpoint shape mismatch for {key}")
        t.data = arrays[key]
    for name, a in model.running_stats():
        a[...] = arrays[f"stat.{name}"]

    velocity = {e["name"][4:]: arrays[e["name"]]
                for e in header["arrays"] if e["name"].startswith("vel.")}
    rng = None if header["rng_state"] is None else restore_rng(header["rng_state"])
    return Checkpoint(model=model, epoch=header["epoch"], velocity=velocity,
                      rng=rng, train_params=header["train_params"])
