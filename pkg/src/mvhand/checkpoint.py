"""Binary checkpoint: magic, JSON header (version, config hash, tensor index), raw f64 payload."""
import json
import struct

import numpy as np

from .nn import ParamStore

MAGIC = b"MVHCKPT"
VERSION = 1


def save_checkpoint(params: ParamStore, path, config_hash="", extra=None):
    index, offset, blobs = [], 0, []
    for name in params.names():
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
        blobs.append(arr.tobytes())
    header = json.dumps({"version": VERSION, "config_hash": config_hash, "tensors": index,
                         "extra": extra or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Returns (ParamStore, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC) + 1)
        if magic[:len(MAGIC)] != MAGIC or magic[-1] != VERSION:
            raise ValueError(f"{path}: not a version-{VERSION} checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        payload = fh.read()
    params = ParamStore()
    for t in header["tensors"]:
        raw = payload[t["offset"]:t["offset"] + t["nbytes"]]
        params.arrays[t["name"]] = np.frombuffer(raw, dtype="<f8").reshape(t["shape"]).astype(np.float64)
    return params, header
