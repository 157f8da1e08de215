"""Binary model files.

Layout: magic ``DROMDL1\\n``, a version byte, a little-endian u32 header
length, a UTF-8 JSON header (encoder, dims, dropout, seed, projection
spec, feature source and the ordered parameter shapes), then each
parameter block as little-endian float32 in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from drosent.errors import DataFormatError
from drosent.netcore import ModelParams
from drosent.projections import ProjectionSpec

MAGIC = b"DROMDL1\n"
VERSION = 1


def save_model(params, path, features=None):
    spec = params.projection
    header = {
        "encoder": params.encoder,
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "dropout_rate": params.dropout_rate,
        "seed": params.seed,
        "projection": None if spec is None else {"kind": spec.kind, "radius": spec.radius, "p": spec.p},
        "features": features,
        "params": [[name, list(np.shape(w))] for name, w in params.weights.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<BI", VERSION, len(blob)))
        handle.write(blob)
        for w in params.weights.values():
            handle.write(np.asarray(w, dtype="<f4").tobytes())


def load_model(path):
    """Returns ``(params, feature_source_description)``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc.strerror})") from exc
    if not data.startswith(MAGIC):
        raise DataFormatError(f"{path}: not a model file (bad magic)")
    offset = len(MAGIC)
    try:
        version, size = struct.unpack_from("<BI", data, offset)
        offset += 5
        if version != VERSION:
            raise DataFormatError(f"{path}: unsupported model version {version}")
        header = json.loads(data[offset:offset + size].decode("utf-8"))
        offset += size
        spec = header["projection"]
        params = ModelParams(header["encoder"], header["input_dim"], header["hidden_dim"],
                             header["dropout_rate"],
                             None if spec is None else ProjectionSpec(spec["kind"], spec["radius"], spec["p"]),
                             header["seed"])
        for name, shape in header["params"]:
            count = int(np.prod(shape))
            if offset + 4 * count > len(data):
                raise DataFormatError(f"{path}: truncated parameter block {name}")
            block = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            params.weights[name] = block.astype(float).reshape(shape)
            offset += 4 * count
    except (struct.error, KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed model header ({exc})") from None
    if offset != len(data):
        raise DataFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return params, header.get("features")
