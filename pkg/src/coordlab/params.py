"""Binary parameter-set container.

A ParamSet is an ordered mapping of named numpy arrays plus a free-form
metadata dict. The on-disk format is little-endian and self-describing:

    magic b"CLPB" | uint32 format version | uint64 manifest length |
    manifest JSON (utf-8) | raw array bytes, concatenated in manifest order

The manifest records name, dtype, shape and byte length per array, so a
file can be inspected without loading tensors. Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ShapeMismatchError

MAGIC = b"CLPB"
FORMAT_VERSION = 1


def config_hash(payload) -> str:
    """Stable short hash of a JSON-serializable configuration mapping."""
    blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _little_endian(arr: np.ndarray) -> np.ndarray:
    if arr.dtype.byteorder == ">":
        return arr.astype(arr.dtype.newbyteorder("<"))
    return arr


@dataclass
class ParamSet:
    arrays: dict = field(default_factory=dict)  # name -> np.ndarray, insertion order
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_module(cls, module: torch.nn.Module, meta: dict | None = None) -> "ParamSet":
        arrays = {
            name: p.detach().cpu().numpy().copy() for name, p in module.named_parameters()
        }
        return cls(arrays=arrays, meta=dict(meta or {}))

    def load_into(self, module: torch.nn.Module) -> None:
        """Copy arrays into a module's parameters, checking names and shapes."""
        params = dict(module.named_parameters())
        missing = set(params) - set(self.arrays)
        extra = set(self.arrays) - set(params)
        if missing or extra:
            raise ShapeMismatchError(
                layer=",".join(sorted(missing | extra)),
                expected=sorted(params),
                got=sorted(self.arrays),
            )
        with torch.no_grad():
            for name, p in params.items():
                arr = self.arrays[name]
                if tuple(arr.shape) != tuple(p.shape):
                    raise ShapeMismatchError(layer=name, expected=tuple(p.shape), got=tuple(arr.shape))
                p.copy_(torch.from_numpy(np.ascontiguousarray(arr)).to(p.dtype))

    def manifest(self) -> dict:
        entries = []
        for name, arr in self.arrays.items():
            arr = _little_endian(np.ascontiguousarray(arr))
            entries.append(
                {
                    "name": name,
                    "dtype": arr.dtype.str,
                    "shape": list(arr.shape),
                    "nbytes": int(arr.nbytes),
                }
            )
        return {"format_version": self.version, "arrays": entries, "meta": self.meta}

    def to_bytes(self) -> bytes:
        manifest = json.dumps(self.manifest(), sort_keys=True).encode("utf-8")
        parts = [
            MAGIC,
            np.uint32(self.version).astype("<u4").tobytes(),
            np.uint64(len(manifest)).astype("<u8").tobytes(),
            manifest,
        ]
        for arr in self.arrays.values():
            parts.append(_little_endian(np.ascontiguousarray(arr)).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamSet":
        if blob[:4] != MAGIC:
            raise ValueError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
        version = int(np.frombuffer(blob, "<u4", count=1, offset=4)[0])
        if version > FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format version {version}")
        mlen = int(np.frombuffer(blob, "<u8", count=1, offset=8)[0])
        manifest = json.loads(blob[16 : 16 + mlen].decode("utf-8"))
        offset = 16 + mlen
        arrays = {}
        for entry in manifest["arrays"]:
            n = entry["nbytes"]
            count = n // np.dtype(entry["dtype"]).itemsize
            arr = np.frombuffer(blob, dtype=entry["dtype"], count=count, offset=offset)
            arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
            offset += n
        return cls(arrays=arrays, meta=manifest.get("meta", {}), version=version)

    def save(self, path, sidecar: bool = True) -> None:
        path = str(path)
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        if sidecar:
            with open(path + ".json", "w") as fh:
                json.dump(self.manifest(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ParamSet":
        with open(str(path), "rb") as fh:
            return cls.from_bytes(fh.read())

    def state_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))
