"""Binary interchange: CTF1 tensors, binary PPM images and MCN1 model files.

CTF1 layout (little-endian)::

    offset 0   4 bytes   magic b"CTF1"
    offset 4   u8        dtype code (0 = f32, 1 = f64, 2 = u8)
    offset 5   u8        rank (<= 8)
    offset 6   u64*rank  dims
    ...        payload   prod(dims) * itemsize bytes, row-major

MCN1 layout::

    b"MCN1" | u32 header length | UTF-8 JSON header | f32 weights

The JSON header holds ``layers``, ``target_layer``, ``num_classes`` and
``input_shape``; weights follow in layer order (conv: W [out,in,kh,kw] then
bias [out]; fc: W [out,in] then bias [out]).
"""

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    BadMagicError,
    ContractError,
    FormatError,
    HeaderError,
    LengthMismatchError,
    RankOverflowError,
    TruncatedError,
    UnknownDtypeError,
    UnsupportedFormatError,
)
from .nn import LayerSpec, Model
from .tensor import bilinear_upsample

CTF_MAGIC = b"CTF1"
MCN_MAGIC = b"MCN1"
MAX_RANK = 8
MAX_ELEMENTS = 1 << 40

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


# ---------------------------------------------------------------------------
# CTF1


def encode_tensor(t):
    t = np.asarray(t)
    if t.dtype not in _CODES:
        t = t.astype(np.float64)
    if t.ndim > MAX_RANK:
        raise ContractError(f"rank {t.ndim} exceeds {MAX_RANK}")
    code = _CODES[t.dtype]
    head = CTF_MAGIC + struct.pack("<BB", code, t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)
    return head + np.ascontiguousarray(t, dtype=_DTYPES[code]).tobytes()


def decode_tensor(data, path=None):
    """Parse CTF1 bytes into a float64 array."""
    n = len(data)
    if data[:4] != CTF_MAGIC[: min(n, 4)]:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}, expected {CTF_MAGIC!r}", 0, path)
    if n < 6:
        raise TruncatedError("header truncated", n, path)
    code, rank = data[4], data[5]
    if code not in _DTYPES:
        raise UnknownDtypeError(f"unknown dtype code {code}", 4, path)
    if rank > MAX_RANK:
        raise RankOverflowError(f"rank {rank} exceeds {MAX_RANK}", 5, path)
    hdr = 6 + 8 * rank
    if n < hdr:
        raise TruncatedError("dims truncated", n, path)
    dims = struct.unpack_from(f"<{rank}Q", data, 6)
    count = math.prod(dims)
    if count > MAX_ELEMENTS:
        raise RankOverflowError(f"dims {dims} describe too many elements", 6, path)
    dtype = _DTYPES[code]
    expected = count * dtype.itemsize
    if n - hdr != expected:
        raise LengthMismatchError(
            f"payload has {n - hdr} bytes, dims {list(dims)} need {expected}", hdr, path)
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=hdr).astype(np.float64).reshape(dims)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise FormatError("non-finite value in payload", hdr + bad * dtype.itemsize, path)
    return arr


def write_tensor(path, t):
    Path(path).write_bytes(encode_tensor(t))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes(), path=str(path))


# ---------------------------------------------------------------------------
# PPM


@dataclass
class ImageRecord:
    id: str
    pixels: np.ndarray  # [3, H, W] in [0, 1]
    target: Optional[int] = None


def decode_ppm(data, path=None):
    """Parse a binary (P6, maxval 255) PPM into a ``[3, H, W]`` array in [0, 1]."""
    if data[:2] != b"P6":
        raise UnsupportedFormatError(f"only binary P6 PPM is supported, got {bytes(data[:2])!r}", 0, path)
    pos = 2
    fields = []
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            if pos >= n:
                raise TruncatedError("PPM header truncated", pos, path)
            raise FormatError(f"unexpected byte {data[pos:pos + 1]!r} in PPM header", pos, path)
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after PPM header", pos, path)
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedFormatError(f"maxval {maxval} unsupported (need 255)", pos, path)
    if width < 1 or height < 1:
        raise FormatError(f"bad PPM size {width}x{height}", pos, path)
    need = width * height * 3
    if n - pos != need:
        raise LengthMismatchError(f"PPM payload has {n - pos} bytes, expected {need}", pos, path)
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(height, width, 3)
    return raw.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_ppm(path):
    path = Path(path)
    return ImageRecord(id=path.stem, pixels=decode_ppm(path.read_bytes(), path=str(path)))


def encode_ppm(pixels):
    """``[3, H, W]`` floats in [0, 1] -> P6 bytes (rounded to 8 bits)."""
    p = np.asarray(pixels, dtype=np.float64)
    if p.ndim != 3 or p.shape[0] != 3:
        raise ContractError(f"PPM needs a [3,H,W] image, got {p.shape}")
    raw = np.clip(np.rint(p * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return b"P6\n%d %d\n255\n" % (p.shape[2], p.shape[1]) + raw.tobytes()


def write_ppm(path, pixels):
    Path(path).write_bytes(encode_ppm(pixels))


# ---------------------------------------------------------------------------
# preprocessing


def preprocess(img, target_h, target_w, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """Resize (shorter side to target, aspect kept), centre crop, normalize."""
    pixels = img.pixels if isinstance(img, ImageRecord) else img
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3:
        raise ContractError(f"expected a [C,H,W] image, got {pixels.shape}")
    c, h, w = pixels.shape
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (c,))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (c,))
    if np.any(std <= 0):
        raise ContractError("std entries must be positive")
    scale = max(target_h / h, target_w / w)
    new_h = max(target_h, int(round(h * scale)))
    new_w = max(target_w, int(round(w * scale)))
    if (new_h, new_w) != (h, w):
        pixels = bilinear_upsample(pixels, new_h, new_w)
    top = (new_h - target_h) // 2
    left = (new_w - target_w) // 2
    crop = pixels[:, top : top + target_h, left : left + target_w]
    return (crop - mean[:, None, None]) / std[:, None, None]


# ---------------------------------------------------------------------------
# MCN1 model files


def encode_model(model):
    header = {
        "layers": [layer.to_dict() for layer in model.layers],
        "target_layer": model.target_layer,
        "num_classes": model.num_classes,
        "input_shape": list(model.input_shape),
        "capture_after_relu": model.capture_after_relu,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MCN_MAGIC, struct.pack("<I", len(hb)), hb]
    for layer in model.layers:
        if layer.name in model.weights:
            for a in model.weights[layer.name]:
                parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_model(data, path=None):
    n = len(data)
    if data[:4] != MCN_MAGIC[: min(n, 4)]:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}, expected {MCN_MAGIC!r}", 0, path)
    if n < 8:
        raise TruncatedError("header truncated", n, path)
    (hlen,) = struct.unpack_from("<I", data, 4)
    if 8 + hlen > n:
        raise TruncatedError(f"JSON header claims {hlen} bytes", n, path)
    try:
        header = json.loads(bytes(data[8 : 8 + hlen]).decode("utf-8"))
        if not isinstance(header, dict):
            raise ValueError("header is not a JSON object")
        layers = [LayerSpec.from_dict(d) for d in header["layers"]]
        input_shape = tuple(header["input_shape"])
        num_classes = header["num_classes"]
        target = header["target_layer"]
        capture = header.get("capture_after_relu", True)
        if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in (*input_shape, num_classes)):
            raise ValueError("input_shape and num_classes must be positive integers")
        if not isinstance(capture, bool) or not isinstance(target, str):
            raise ValueError("bad target_layer / capture_after_relu")
    except (ValueError, KeyError, TypeError, AttributeError, RecursionError) as exc:
        raise HeaderError(f"invalid model header: {exc}", 8, path) from None
    shapes = [(layer, layer.weight_shapes()) for layer in layers]
    total = sum(math.prod(s) for _, ws in shapes for s in ws)
    pos = 8 + hlen
    if n - pos != 4 * total:
        raise LengthMismatchError(f"weight payload has {n - pos} bytes, layers need {4 * total}", pos, path)
    weights = {}
    for layer, ws in shapes:
        arrays = []
        for s in ws:
            cnt = math.prod(s)
            arrays.append(np.frombuffer(data, dtype="<f4", count=cnt, offset=pos).astype(np.float64).reshape(s))
            pos += 4 * cnt
        if arrays:
            weights[layer.name] = tuple(arrays)
    try:
        return Model(layers=layers, weights=weights, target_layer=target, num_classes=num_classes,
                     input_shape=input_shape, capture_after_relu=capture)
    except ContractError as exc:
        raise HeaderError(f"inconsistent model: {exc}", 8, path) from None


def write_model(path, model):
    Path(path).write_bytes(encode_model(model))


def read_model(path):
    return decode_model(Path(path).read_bytes(), path=str(path))
