"""Versioned binary model files.

Layout::

    b"DALIGNM\\n"                 magic, 8 bytes
    uint32 LE                     format version
    uint64 LE                     header length H
    H bytes                       UTF-8 JSON header (layer specs, modes, array table)
    float64 LE arrays             in header order
    32 bytes                      SHA-256 of everything above

Every real number (weights, alpha, eps, moving and frozen statistics) is
stored as raw float64 so that a round trip is bit-exact.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .. import dal
from ..errors import ChecksumError, ModelFormatError, VersionError
from ..net import DALayer, Dense, Network, ReLU, SoftmaxHead

MAGIC = b"DALIGNM\n"
VERSION = 1
_DIGEST = 32

_STATE_ARRAYS = ("moving_mu_s", "moving_var_s", "moving_mu_t", "moving_var_t")
_FROZEN_ARRAYS = ("mu_st", "var_st", "mu_ts", "var_ts")


def _collect(net: Network):
    layers, arrays = [], []
    for i, layer in enumerate(net.layers):
        entry = layer.spec()
        if isinstance(layer, Dense):
            arrays += [(f"{i}.W", layer.W), (f"{i}.b", layer.b)]
        elif isinstance(layer, DALayer):
            st = layer.state
            entry.update(mode=st.mode.value, ma_updates=st.ma_updates, frozen=st.frozen_stats is not None)
            arrays.append((f"{i}.scalars", np.array([st.alpha, st.eps, st.momentum_ma])))
            arrays += [(f"{i}.{name}", getattr(st, name)) for name in _STATE_ARRAYS]
            fs = st.frozen_stats
            if fs is not None:
                arrays.append((f"{i}.frozen_scalars", np.array([fs.eps, fs.alpha_used])))
                arrays += [(f"{i}.frozen_{name}", getattr(fs, name)) for name in _FROZEN_ARRAYS]
        layers.append(entry)
    return layers, arrays


def model_bytes(net: Network) -> bytes:
    layers, arrays = _collect(net)
    header = {
        "input_dim": net.input_dim,
        "layers": layers,
        "arrays": [[name, list(np.shape(a))] for name, a in arrays],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    blob = MAGIC + struct.pack("<IQ", VERSION, len(head)) + head + body
    return blob + hashlib.sha256(blob).digest()


def save_model(net: Network, path):
    Path(path).write_bytes(model_bytes(net))


def model_from_bytes(blob: bytes) -> Network:
    fixed = len(MAGIC) + 12
    if len(blob) < fixed + _DIGEST:
        raise ModelFormatError("file is truncated")
    if blob[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    payload, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError("checksum mismatch: file is corrupted or truncated")
    version, head_len = struct.unpack("<IQ", payload[len(MAGIC):fixed])
    if version != VERSION:
        raise VersionError(f"unsupported model format version {version} (expected {VERSION})")
    try:
        header = json.loads(payload[fixed:fixed + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable header: {exc}") from None

    arrays, offset = {}, fixed + head_len
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(payload):
            raise ModelFormatError("array data is truncated")
        arrays[name] = np.frombuffer(payload[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(payload):
        raise ModelFormatError("trailing bytes after array data")

    layers = []
    try:
        for i, entry in enumerate(header["layers"]):
            kind = entry["type"]
            if kind == "dense":
                layer = Dense(entry["in"], entry["out"])
                layer.W, layer.b = arrays[f"{i}.W"].copy(), arrays[f"{i}.b"].copy()
            elif kind == "relu":
                layer = ReLU()
            elif kind == "softmax":
                layer = SoftmaxHead(entry["classes"])
            elif kind == "dalayer":
                alpha, eps, momentum = (float(v) for v in arrays[f"{i}.scalars"])
                layer = DALayer(entry["channels"], alpha=alpha, trainable_alpha=entry["trainable_alpha"],
                                eps=eps, momentum_ma=momentum)
                st = layer.state
                for name in _STATE_ARRAYS:
                    setattr(st, name, arrays[f"{i}.{name}"].copy())
                st.ma_updates = int(entry["ma_updates"])
                st.mode = dal.Mode(entry["mode"])
                if entry["frozen"]:
                    f_eps, f_alpha = (float(v) for v in arrays[f"{i}.frozen_scalars"])
                    st.frozen_stats = dal.MixedStats(
                        *(arrays[f"{i}.frozen_{name}"].copy() for name in _FROZEN_ARRAYS),
                        eps=f_eps, alpha_used=f_alpha,
                    )
            else:
                raise ModelFormatError(f"unknown layer type {kind!r}")
            layers.append(layer)
        return Network(layers, header["input_dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"inconsistent model header: {exc}") from None


def load_model(path) -> Network:
    return model_from_bytes(Path(path).read_bytes())
