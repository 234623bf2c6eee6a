"""Binary model and code files.

Model file (``RRQ1``)::

    b"RRQ1" | u64 header length | header (canonical JSON) | sections

The header lists every payload section by name and shape. Each section is a
u64 byte length followed by little-endian float64 values in C order. Bytes
left over after the declared sections are rejected.

Codes file (``RRQC``)::

    b"RRQC" | u64 n_vectors | u32 L | L x u8 index width in bits |
    L planes of n_vectors indices (uint8 or little-endian uint16)
"""

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .rrq import CodebookLayer, RrqModel
from .transform import ImageGeometry, SubbandPartition, TransformModel, make_partition
from .vr_kmeans import Codebook

__all__ = [
    "CODES_MAGIC",
    "MODEL_MAGIC",
    "atomic_write",
    "codes_from_bytes",
    "codes_to_bytes",
    "index_width",
    "load_codes",
    "load_model",
    "model_from_bytes",
    "model_header",
    "model_to_bytes",
    "save_codes",
    "save_model",
]

MODEL_MAGIC = b"RRQ1"
CODES_MAGIC = b"RRQC"
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temporary sibling file, then rename it into place."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def _model_sections(model: RrqModel, tmodel: TransformModel | None):
    yield "mean", model.mean
    for l, layer in enumerate(model.layers):
        yield f"layer{l}/centroids", layer.centroids
        yield f"layer{l}/target_variances", layer.codebook.target_variances
    if tmodel is not None:
        for b, (R, mu) in enumerate(zip(tmodel.rotations, tmodel.band_means)):
            yield f"band{b}/rotation", R
            yield f"band{b}/mean", mu


def model_to_bytes(model: RrqModel, tmodel: TransformModel | None = None) -> bytes:
    if tmodel is not None and tmodel.n != model.n:
        raise FormatError("transform and quantizer dimensions differ")
    sections = list(_model_sections(model, tmodel))
    header = {
        "n": model.n,
        "L": model.L,
        "layers": [
            {
                "index": layer.index,
                "K": layer.K,
                "gamma": float(layer.gamma),
                "lambda": float(layer.lam),
                "active_set": [int(j) for j in layer.active_set],
            }
            for layer in model.layers
        ],
        "geometry": None,
        "num_bands": None,
        "sections": [{"name": name, "shape": list(arr.shape)} for name, arr in sections],
    }
    if tmodel is not None:
        header["geometry"] = {"height": tmodel.geometry.height, "width": tmodel.geometry.width}
        header["num_bands"] = tmodel.partition.num_bands
    head = _canonical_json(header)
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(_U64.pack(len(head)))
    buf.write(head)
    for _, arr in sections:
        payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        buf.write(_U64.pack(len(payload)))
        buf.write(payload)
    return buf.getvalue()


def _read_header(data: bytes, magic: bytes):
    if len(data) < 4 or data[:4] != magic:
        raise FormatError(f"bad magic: expected {magic!r}")


def model_header(data: bytes) -> dict:
    """Decode only the JSON header of a model file."""
    _read_header(data, MODEL_MAGIC)
    if len(data) < 12:
        raise FormatError("truncated model header")
    (hlen,) = _U64.unpack_from(data, 4)
    if 12 + hlen > len(data):
        raise FormatError("truncated model header")
    try:
        header = json.loads(data[12:12 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable model header: {exc}") from None
    if not isinstance(header, dict) or "sections" not in header:
        raise FormatError("model header lacks a section table")
    return header


def model_from_bytes(data: bytes):
    """Inverse of :func:`model_to_bytes`; returns ``(RrqModel, TransformModel | None)``."""
    header = model_header(data)
    (hlen,) = _U64.unpack_from(data, 4)
    pos = 12 + hlen
    arrays = {}
    try:
        for sec in header["sections"]:
            if pos + 8 > len(data):
                raise FormatError(f"truncated section {sec['name']}")
            (size,) = _U64.unpack_from(data, pos)
            pos += 8
            shape = tuple(int(s) for s in sec["shape"])
            if size != 8 * int(np.prod(shape, dtype=np.int64)) or pos + size > len(data):
                raise FormatError(f"section {sec['name']} has inconsistent length")
            arrays[sec["name"]] = np.frombuffer(data, dtype="<f8", count=size // 8,
                                                offset=pos).reshape(shape).astype(np.float64)
            pos += size
        if pos != len(data):
            raise FormatError(f"{len(data) - pos} unexpected trailing bytes after last section")

        n = int(header["n"])
        layers = []
        for l, meta in enumerate(header["layers"]):
            cb = Codebook(arrays[f"layer{l}/centroids"],
                          np.asarray(meta["active_set"], dtype=np.intp),
                          arrays[f"layer{l}/target_variances"])
            if cb.K != int(meta["K"]) or cb.n != n:
                raise FormatError(f"layer {l} shape disagrees with header")
            layers.append(CodebookLayer(cb, float(meta["gamma"]), float(meta["lambda"]),
                                        int(meta["index"])))
        model = RrqModel(arrays["mean"], layers)
        if len(layers) != int(header["L"]):
            raise FormatError("layer count disagrees with header")

        tmodel = None
        if header.get("geometry") is not None:
            geom = ImageGeometry(int(header["geometry"]["height"]), int(header["geometry"]["width"]))
            partition = make_partition(geom.n, int(header["num_bands"]))
            B = partition.num_bands
            tmodel = TransformModel(
                geom, partition,
                [arrays[f"band{b}/rotation"] for b in range(B)],
                [arrays[f"band{b}/mean"] for b in range(B)],
            )
            if tmodel.n != n:
                raise FormatError("transform geometry disagrees with model dimension")
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed model file: missing or invalid {exc}") from None
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(f"malformed model file: {exc}") from None
    return model, tmodel


def save_model(path, model: RrqModel, tmodel: TransformModel | None = None) -> None:
    atomic_write(path, model_to_bytes(model, tmodel))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())


def index_width(K: int) -> int:
    """Bits per stored index for a layer with ``K`` codewords."""
    if K <= 256:
        return 8
    if K <= 65536:
        return 16
    raise FormatError(f"K={K} does not fit a 16-bit index")


def codes_to_bytes(codes, widths) -> bytes:
    """Pack an ``L x N`` index matrix with per-layer widths (8 or 16)."""
    codes = np.asarray(codes)
    if codes.ndim == 1:
        codes = codes[:, None]
    L, N = codes.shape
    widths = [int(w) for w in widths]
    if len(widths) != L:
        raise FormatError("one index width per layer is required")
    buf = io.BytesIO()
    buf.write(CODES_MAGIC)
    buf.write(_U64.pack(N))
    buf.write(_U32.pack(L))
    buf.write(bytes(widths))
    for row, w in zip(codes, widths):
        dtype = {8: "u1", 16: "<u2"}.get(w)
        if dtype is None:
            raise FormatError(f"unsupported index width {w}")
        if row.size and (row.min() < 0 or row.max() >= 1 << w):
            raise FormatError(f"index does not fit in {w} bits")
        buf.write(row.astype(dtype).tobytes())
    return buf.getvalue()


def codes_from_bytes(data: bytes) -> np.ndarray:
    """Unpack a codes file into an ``L x N`` integer matrix."""
    _read_header(data, CODES_MAGIC)
    if len(data) < 16:
        raise FormatError("truncated codes header")
    (N,) = _U64.unpack_from(data, 4)
    (L,) = _U32.unpack_from(data, 12)
    pos = 16
    widths = list(data[pos:pos + L])
    if len(widths) != L:
        raise FormatError("truncated codes header")
    pos += L
    codes = np.empty((L, N), dtype=np.intp)
    for l, w in enumerate(widths):
        dtype = {8: "u1", 16: "<u2"}.get(w)
        if dtype is None:
            raise FormatError(f"unsupported index width {w}")
        size = N * w // 8
        if pos + size > len(data):
            raise FormatError("truncated index plane")
        codes[l] = np.frombuffer(data, dtype=dtype, count=N, offset=pos)
        pos += size
    if pos != len(data):
        raise FormatError("unexpected trailing bytes in codes file")
    return codes


def save_codes(path, codes, model: RrqModel) -> None:
    atomic_write(path, codes_to_bytes(codes, [index_width(layer.K) for layer in model.layers]))


def load_codes(path) -> np.ndarray:
    return codes_from_bytes(Path(path).read_bytes())
