"""Checkpoint bundles and their deterministic binary container.

Layout: ``NDCK`` magic, u32 version, u64 header length, UTF-8 JSON header
(sorted keys) describing every array, then the raw little-endian array
bytes back to back. No timestamps, so equal states give equal bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .align import STHParams
from .encoders import ExpertParams
from .foveation import MemoryBank
from .fusion import FusionParams
from .nn import AdamW
from .signals import MODALITIES

MAGIC = b"NDCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def write_arrays(path, arrays: dict, meta: dict) -> None:
    index, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr)
        a = a.astype(a.dtype.newbyteorder("<")) if a.dtype.byteorder == ">" else a
        raw = np.ascontiguousarray(a).tobytes()
        index.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(header)) + header)
        for raw in blobs:
            fh.write(raw)


def read_arrays(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 16 + hlen
    if len(data) < start:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(data[16:start].decode("utf-8"))
    arrays = {}
    for ent in header["arrays"]:
        lo = start + ent["offset"]
        if lo + ent["nbytes"] > len(data):
            raise CheckpointError(f"{path}: truncated payload")
        arr = np.frombuffer(data[lo:lo + ent["nbytes"]], dtype=np.dtype(ent["dtype"]))
        arrays[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return arrays, header["meta"]


def _ordered(keys, order) -> list:
    # JSON headers sort keys; restore the canonical order so re-saving is byte-identical
    return sorted(keys, key=lambda k: (order.index(k) if k in order else len(order), k))


@dataclass
class CheckpointBundle:
    experts: dict
    fusion: FusionParams
    sth: STHParams
    optimizers: dict
    bank: MemoryBank
    config_hash: str
    stage: int = 0
    epochs: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)

    def arrays(self) -> dict:
        out = {}
        for m, p in self.experts.items():
            for k, v in p.items():
                out[f"experts/{m}/{k}"] = v.data
        for k, v in self.fusion.items():
            out[f"fusion/{k}"] = v.data
        for k, v in self.sth.items():
            out[f"sth/{k}"] = v.data
        for name, opt in self.optimizers.items():
            for k, v in opt.state().items():
                if k != "t":
                    out[f"opt/{name}/{k}"] = v
        for k, v in self.bank.state().items():
            out[f"bank/{k}"] = v
        return out

    def meta(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "stage": self.stage,
            "epochs": self.epochs,
            "rng_state": self.rng_state,
            "experts": {m: p.meta() for m, p in self.experts.items()},
            "fusion": self.fusion.meta(),
            "sth": self.sth.meta(),
            "optimizers": {n: {"t": o.t, "lr": o.lr, "betas": [o.beta1, o.beta2],
                               "weight_decay": o.weight_decay, "eps": o.eps}
                           for n, o in self.optimizers.items()},
        }

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.meta(), sort_keys=True).encode())
        for name, arr in self.arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        write_arrays(path, self.arrays(), self.meta())

    @classmethod
    def load(cls, path, expected_hash=None) -> "CheckpointBundle":
        arrays, meta = read_arrays(path)
        if expected_hash is not None and meta["config_hash"] != expected_hash:
            raise ConfigMismatchError(
                f"checkpoint was written for config {meta['config_hash'][:12]}, not {expected_hash[:12]}")

        def grab(prefix):
            return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

        experts = {}
        for m in _ordered(meta["experts"], MODALITIES):
            em = meta["experts"][m]
            p = ExpertParams(**em)
            for k, v in grab(f"experts/{m}/").items():
                p.add(k, v)
            experts[m] = p
        fusion = FusionParams(**meta["fusion"])
        for k, v in grab("fusion/").items():
            fusion.add(k, v)
        sth = STHParams(**meta["sth"])
        for k, v in grab("sth/").items():
            sth.add(k, v)
        owners = dict(experts, fusion=fusion, sth=sth)
        optimizers = {}
        for name in _ordered(meta["optimizers"], MODALITIES + ("fusion", "sth")):
            om = meta["optimizers"][name]
            opt = AdamW(owners[name], lr=om["lr"], betas=tuple(om["betas"]),
                        weight_decay=om["weight_decay"], eps=om["eps"])
            st = grab(f"opt/{name}/")
            st["t"] = om["t"]
            opt.load_state(st)
            optimizers[name] = opt
        bank = MemoryBank.from_state(grab("bank/"))
        return cls(experts, fusion, sth, optimizers, bank, meta["config_hash"], meta["stage"],
                   meta["epochs"], meta["rng_state"])

    def equal(self, other: "CheckpointBundle") -> bool:
        a, b = self.arrays(), other.arrays()
        return (self.meta() == other.meta() and list(a) == list(b)
                and all(a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]) for k in a))
