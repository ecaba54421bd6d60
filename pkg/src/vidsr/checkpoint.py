"""Binary checkpoint files.

Layout::

    magic      8 bytes   b"VIDSRCKP"
    version    uint32 LE
    header_len uint64 LE
    header     UTF-8 JSON (sorted keys): network specs, tensor manifest, metadata
    tensors    little-endian float32, manifest order (SR, MC, Adam moments, extras)
    checksum   SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .motion import MCNetwork, MCSpec
from .networks import NetworkSpec, SRNetwork
from .optim import AdamState

MAGIC = b"VIDSRCKP"
VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    sr: SRNetwork | None = None
    mc: MCNetwork | None = None
    adam: AdamState | None = None
    meta: dict = field(default_factory=dict)
    extra: dict[str, np.ndarray] = field(default_factory=dict)


def _tensor_list(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = []
    if ckpt.sr is not None:
        out += [(f"sr.{n}", p.data) for n, p in zip(ckpt.sr.parameter_names(), ckpt.sr.parameters())]
    if ckpt.mc is not None:
        out += [(f"mc.{n}", p.data) for n, p in zip(ckpt.mc.parameter_names(), ckpt.mc.parameters())]
    if ckpt.adam is not None:
        out += [(f"adam.m{i}", m) for i, m in enumerate(ckpt.adam.m)]
        out += [(f"adam.v{i}", v) for i, v in enumerate(ckpt.adam.v)]
    out += [(f"extra.{k}", np.asarray(a)) for k, a in ckpt.extra.items()]
    return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors = _tensor_list(ckpt)
    header = {
        "networks": {
            "sr": ckpt.sr.spec.to_dict() if ckpt.sr is not None else None,
            "mc": ckpt.mc.spec.to_dict() if ckpt.mc is not None else None,
        },
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
        "adam": None if ckpt.adam is None else {
            "lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
            "eps": ckpt.adam.eps, "step": ckpt.adam.step},
        "meta": ckpt.meta,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in tensors)
    payload = MAGIC + struct.pack("<IQ", VERSION, len(head)) + head + body
    return payload + hashlib.sha256(payload).digest()


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)
    return path


def from_bytes(raw: bytes, dtype=np.float32) -> Checkpoint:
    if len(raw) < len(MAGIC) + 12 + _DIGEST or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    payload, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch; file is corrupt or truncated")
    version, head_len = struct.unpack_from("<IQ", raw, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    start = len(MAGIC) + 12
    header = json.loads(payload[start:start + head_len])
    offset = start + head_len

    arrays = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = 4 * count
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dtype)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("tensor data length does not match the manifest")

    ckpt = Checkpoint(meta=header.get("meta", {}))
    nets = header["networks"]
    if nets.get("sr"):
        ckpt.sr = SRNetwork(NetworkSpec.from_dict(nets["sr"]), dtype=dtype)
        for n, p in zip(ckpt.sr.parameter_names(), ckpt.sr.parameters()):
            p.data = arrays[f"sr.{n}"].copy()
    if nets.get("mc"):
        ckpt.mc = MCNetwork(MCSpec.from_dict(nets["mc"]), dtype=dtype)
        for n, p in zip(ckpt.mc.parameter_names(), ckpt.mc.parameters()):
            p.data = arrays[f"mc.{n}"].copy()
    if header.get("adam"):
        a = header["adam"]
        slots = sum(1 for k in arrays if k.startswith("adam.m"))
        ckpt.adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"],
                              m=[arrays[f"adam.m{i}"].copy() for i in range(slots)],
                              v=[arrays[f"adam.v{i}"].copy() for i in range(slots)])
    ckpt.extra = {k[len("extra."):]: a.copy() for k, a in arrays.items() if k.startswith("extra.")}
    return ckpt


def load_checkpoint(path: str | Path, dtype=np.float32) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), dtype)
