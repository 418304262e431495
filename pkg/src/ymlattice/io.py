"""Artifact files: CSV tables, JSON manifests and binary chain checkpoints.

Checkpoint layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON
header, then the payload. The header records the config, its hash, the chain
bookkeeping and the sha256 of the payload; each payload entry is a named
array block described in the header.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import platform
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, diff_configs

SCHEMA_VERSION = 1
CKPT_MAGIC = b"YMCKPT1\n"


class CheckpointError(RuntimeError):
    pass


class ConfigMismatchError(CheckpointError):
    def __init__(self, diffs: list[str]):
        self.diffs = diffs
        super().__init__("checkpoint config differs from the requested config:\n  " + "\n  ".join(diffs))


# ---------------------------------------------------------------------------
# tables and manifests

def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def csv_bytes(columns: list[str], rows: list[dict]) -> bytes:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema_version"] + list(columns))
    for r in rows:
        w.writerow([SCHEMA_VERSION] + [format_value(r.get(c, "")) for c in columns])
    return buf.getvalue().encode()


def json_bytes(obj) -> bytes:
    return (json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n").encode()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def versions() -> dict:
    import numba
    import scipy
    return {"ymlattice": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


class OutputDir:
    """Single writer for an experiment's output directory; refuses paths outside it."""

    def __init__(self, root: str | Path):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: dict[str, str] = {}

    def path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if self.root not in p.parents and p != self.root:
            raise ValueError(f"refusing to write outside the output directory: {name}")
        return p

    def write(self, name: str, data: bytes) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(p.suffix + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(p)
        self.written[name] = hashlib.sha256(data).hexdigest()
        return p

    def write_csv(self, name: str, columns: list[str], rows: list[dict]) -> Path:
        return self.write(name, csv_bytes(columns, rows))

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json_bytes(obj))

    def write_manifest(self, config: RunConfig, extra: dict | None = None, name: str = "manifest.json") -> Path:
        man = {"schema_version": SCHEMA_VERSION, "config_hash": config.config_hash(), "config": config.to_dict(),
               "seed": config.seed, "experiment": config.experiment.name, "versions": versions(),
               "outputs": dict(sorted(self.written.items()))}
        if extra:
            man.update(extra)
        return self.write(name, json_bytes(man))


# ---------------------------------------------------------------------------
# checkpoints

def _rng_state_to_json(state: dict) -> dict:
    return _plain(state)


def _rng_state_from_json(state: dict) -> dict:
    out = dict(state)
    inner = dict(out["state"])
    for k in ("counter", "key"):
        if k in inner:
            inner[k] = np.array(inner[k], dtype=np.uint64)
    out["state"] = inner
    if "buffer" in out:
        out["buffer"] = np.array(out["buffer"], dtype=np.uint64)
    return out


@dataclass
class Checkpoint:
    config: RunConfig
    header: dict
    arrays: dict


def save_checkpoint(path: str | Path, config: RunConfig, meta: dict, arrays: dict[str, np.ndarray],
                    rng: np.random.Generator) -> Path:
    blocks, layout, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"))
        raw = a.tobytes()
        layout.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset,
                       "nbytes": len(raw)})
        blocks.append(raw)
        offset += len(raw)
    payload = b"".join(blocks)
    header = {"schema_version": SCHEMA_VERSION, "config": config.to_dict(), "config_hash": config.config_hash(),
              "meta": _plain(meta), "rng": _rng_state_to_json(rng.bit_generator.state), "layout": layout,
              "payload_sha256": hashlib.sha256(payload).hexdigest()}
    hb = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(CKPT_MAGIC + struct.pack("<Q", len(hb)) + hb + payload)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, expected: RunConfig | None = None) -> Checkpoint:
    """Read and verify a checkpoint; refuses corrupted files and differing configs."""
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    try:
        (n,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + n].decode())
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from exc
    payload = data[16 + n:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError("checkpoint payload hash mismatch (file corrupted)")
    config = RunConfig.from_dict(header["config"])
    if config.config_hash() != header.get("config_hash"):
        raise CheckpointError("checkpoint config hash mismatch (header corrupted)")
    if expected is not None and expected.config_hash() != header["config_hash"]:
        raise ConfigMismatchError(diff_configs(header["config"], expected.to_dict()))
    arrays = {}
    for b in header["layout"]:
        raw = payload[b["offset"]:b["offset"] + b["nbytes"]]
        arrays[b["name"]] = np.frombuffer(raw, dtype=np.dtype(b["dtype"])).reshape(b["shape"]).copy()
    return Checkpoint(config, header, arrays)


def restore_rng(header: dict) -> np.random.Generator:
    st = _rng_state_from_json(header["rng"])
    bg = np.random.Philox()
    bg.state = st
    return np.random.Generator(bg)
