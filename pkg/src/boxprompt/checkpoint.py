"""Deterministic binary checkpoints.

Layout (all integers little-endian):

    bytes 0-7    magic ``BXPMCKPT``
    bytes 8-11   u32 format version (currently 1)
    bytes 12-15  u32 header length N
    bytes 16-..  N bytes of canonical JSON (sorted keys) holding the
                 student config, seed, step/epoch counters and an ordered
                 array index [{name, shape, dtype}, ...]
    remainder    the arrays' raw little-endian bytes, in index order

The array index covers, in order: every named parameter (sorted by name),
the Adam first/second moments for each, the memory-bank prototypes, and
the bank usage counters.  save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .student import MemoryBank, ModelParams, StudentConfig
from .tensor import Tensor

MAGIC = b"BXPMCKPT"
VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def _index_arrays(state) -> list[tuple[str, np.ndarray]]:
    ordered: list[tuple[str, np.ndarray]] = []
    for name in sorted(dict(state.params.items())):
        ordered.append((f"param:{name}", state.params[name].data))
    for name in sorted(state.m):
        ordered.append((f"adam_m:{name}", state.m[name]))
    for name in sorted(state.v):
        ordered.append((f"adam_v:{name}", state.v[name]))
    ordered.append(("bank:prototypes", state.bank.prototypes))
    ordered.append(("bank:usage", state.bank.usage))
    return ordered


def save_checkpoint(state, path) -> None:
    arrays = _index_arrays(state)
    index = [{"name": n, "shape": list(a.shape), "dtype": str(a.dtype)} for n, a in arrays]
    header = {
        "student_config": state.params.config.to_dict(),
        "alpha": state.params.alpha,
        "seed": state.seed,
        "step": state.step,
        "epoch": state.epoch,
        "arrays": index,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).astype(_DTYPES[str(arr.dtype)]).tobytes())


def load_checkpoint(path):
    """Rebuild a TrainState; validates magic, version, shapes and length."""
    from .training import TrainState

    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated checkpoint (only {len(raw)} bytes)")
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:8]!r}")
    version = int(np.frombuffer(raw, dtype="<u4", count=1, offset=8)[0])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    hlen = int(np.frombuffer(raw, dtype="<u4", count=1, offset=12)[0])
    if 16 + hlen > len(raw):
        raise ValueError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))

    expected = sum(int(np.prod(e["shape"])) * np.dtype(_DTYPES[e["dtype"]]).itemsize
                   for e in header["arrays"])
    body = raw[16 + hlen:]
    if len(body) != expected:
        raise ValueError(f"{path}: truncated or padded checkpoint body "
                         f"({len(body)} bytes, expected {expected})")

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
        offset += count * dt.itemsize

    config = StudentConfig.from_dict(header["student_config"])
    params: dict[str, Tensor] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        kind, _, pname = name.partition(":")
        if kind == "param":
            if arr.dtype != config.np_dtype:
                raise ValueError(f"{path}: parameter {pname} dtype {arr.dtype} "
                                 f"does not match config dtype {config.dtype}")
            params[pname] = Tensor(arr, dtype=config.np_dtype, requires_grad=True)
        elif kind == "adam_m":
            m[pname] = arr
        elif kind == "adam_v":
            v[pname] = arr
    for pname, p in params.items():
        if m[pname].shape != p.data.shape or v[pname].shape != p.data.shape:
            raise ValueError(f"{path}: moment shape mismatch for {pname}")

    bank = MemoryBank(prototypes=arrays["bank:prototypes"].astype(config.np_dtype),
                      usage=arrays["bank:usage"].astype(np.int64))
    mp = ModelParams(params, alpha=float(header["alpha"]), config=config)
    return TrainState(params=mp, bank=bank, m=m, v=v,
                      step=int(header["step"]), epoch=int(header["epoch"]),
                      seed=int(header["seed"]))
