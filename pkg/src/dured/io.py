"""Binary file formats, CSV reports and key=value config files.

Every binary file starts with one text line ``MAGIC {json header}\\n``
followed by a little-endian payload:

* ``CIMG1``: complex image, ``height*width`` interleaved float64 pairs.
* ``MASK1``: sampling mask, ``height*width`` bytes (0/1) then as many
  float64 weights. The header keeps the PDF parameters and seed so the
  payload can be regenerated.
* ``DNET1``: network checkpoint, every weight tensor as float64 in
  declaration order, optionally followed by the Adam moments.

All writes go to a temporary file in the destination directory that is
then renamed over the target.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from dataclasses import asdict, fields

import numpy as np

from .denoisers import ResidualConvNet
from .errors import FormatError
from .sampling import MaskDraw, SamplingPDF, draw_mask
from .unrolled import DuredConfig, DuredParams
from . import autodiff as ad

__all__ = [
    "atomic_write",
    "write_image",
    "read_image",
    "write_mask",
    "read_mask",
    "write_weights",
    "read_weights",
    "write_csv",
    "read_config",
    "write_pgm",
    "read_pgm",
    "export_viewable",
]

IMAGE_MAGIC = "CIMG1"
MASK_MAGIC = "MASK1"
NET_MAGIC = "DNET1"


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(magic: str, header: dict, payload: bytes) -> bytes:
    return f"{magic} {json.dumps(header, sort_keys=True)}\n".encode() + payload


def _unpack(path, magic: str):
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    line = blob[:nl].decode("utf-8", errors="replace")
    found, _, rest = line.partition(" ")
    if found != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {found!r}")
    try:
        header = json.loads(rest)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from None
    return header, blob[nl + 1 :]


def _expect_len(path, payload, n):
    if len(payload) != n:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {n}")


def write_image(path, img):
    img = np.asarray(img, dtype=np.complex128)
    if img.ndim != 2:
        raise ValueError("image must be 2D")
    h, w = img.shape
    header = {"height": h, "width": w, "dtype": "c64le"}
    atomic_write(path, _pack(IMAGE_MAGIC, header, img.astype("<c16").tobytes()))


def read_image(path) -> np.ndarray:
    header, payload = _unpack(path, IMAGE_MAGIC)
    try:
        h, w = int(header["height"]), int(header["width"])
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"{path}: header lacks height/width") from None
    if header.get("dtype") != "c64le":
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    _expect_len(path, payload, 16 * h * w)
    return np.frombuffer(payload, dtype="<c16").reshape(h, w).astype(np.complex128)


def write_mask(path, draw: MaskDraw):
    pdf = draw.pdf
    h, w = draw.mask.shape
    header = {
        "height": h,
        "width": w,
        "mu": pdf.mu,
        "alpha": pdf.alpha,
        "seed": draw.seed,
        "dim_mode": pdf.dim_mode,
        "p_min": pdf.p_min,
    }
    payload = draw.mask.astype(np.uint8).tobytes() + draw.weights.astype("<f8").tobytes()
    atomic_write(path, _pack(MASK_MAGIC, header, payload))


def read_mask(path, verify: bool = True) -> MaskDraw:
    """Load a mask file; with ``verify`` the payload must match a fresh redraw."""
    header, payload = _unpack(path, MASK_MAGIC)
    try:
        h, w = int(header["height"]), int(header["width"])
        pdf = SamplingPDF(
            float(header["mu"]), float(header["alpha"]), h, w, header["dim_mode"], float(header.get("p_min", 1e-4))
        )
        seed = int(header["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad mask header: {exc}") from None
    _expect_len(path, payload, 9 * h * w)
    mask = np.frombuffer(payload[: h * w], dtype=np.uint8).reshape(h, w).astype(bool)
    weights = np.frombuffer(payload[h * w :], dtype="<f8").reshape(h, w).astype(np.float64)
    draw = MaskDraw(mask, weights, seed, pdf)
    if verify:
        fresh = draw_mask(pdf, seed)
        if not (np.array_equal(fresh.mask, mask) and fresh.weights.tobytes() == weights.tobytes()):
            raise FormatError(f"{path}: payload does not match the mask regenerated from its header")
    return draw


def write_weights(path, params: DuredParams, cfg: DuredConfig | None = None, epoch=None, optimizer=False):
    """Serialize network weights, the two scalars and optionally Adam state."""
    plist = params.parameters()
    header = {
        "nets": [net.architecture() for net in params.nets],
        "lambda": float(params.lam.value),
        "beta": float(params.beta.value),
        "config": asdict(cfg) if cfg is not None else None,
        "epoch": epoch,
        "clamp_events": params.clamp_events,
        "optimizer": bool(optimizer),
    }
    chunks = [p.value.astype("<f8").tobytes() for p in plist[2:]]
    if optimizer:
        header["steps"] = [p.step_count for p in plist]
        chunks += [p.adam_m.astype("<f8").tobytes() for p in plist]
        chunks += [p.adam_v.astype("<f8").tobytes() for p in plist]
    atomic_write(path, _pack(NET_MAGIC, header, b"".join(chunks)))


def read_weights(path):
    """Return ``(params, cfg_or_None, header)``."""
    header, payload = _unpack(path, NET_MAGIC)
    try:
        nets = [ResidualConvNet.from_architecture(a) for a in header["nets"]]
        params = DuredParams(
            ad.Parameter(float(header["lambda"]), "lambda"), ad.Parameter(float(header["beta"]), "beta"), nets
        )
        params.clamp_events = int(header.get("clamp_events", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad network header: {exc}") from None
    plist = params.parameters()
    n_weights = sum(p.value.size for p in plist[2:])
    n_all = sum(p.value.size for p in plist)
    expected = 8 * (n_weights + (2 * n_all if header.get("optimizer") else 0))
    _expect_len(path, payload, expected)
    buf = np.frombuffer(payload, dtype="<f8")
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        out = buf[pos : pos + n].reshape(shape).astype(np.float64)
        pos += n
        return out

    for p in plist[2:]:
        p.value = take(p.value.shape)
    if header.get("optimizer"):
        for p, s in zip(plist, header["steps"]):
            p.step_count = int(s)
        for p in plist:
            p.adam_m = take(p.value.shape)
        for p in plist:
            p.adam_v = take(p.value.shape)
    cfg = None
    if header.get("config"):
        known = {f.name for f in fields(DuredConfig)}
        cfg = DuredConfig(**{k: v for k, v in header["config"].items() if k in known})
    return params, cfg, header


def write_csv(path, header, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    atomic_write(path, buf.getvalue().encode())


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Keys use underscores."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def magnitude_to_gray(img) -> np.ndarray:
    """Scale ``|img|`` linearly so its maximum maps to 255; all-zero stays black."""
    mag = np.abs(np.asarray(img))
    peak = mag.max()
    if peak == 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    return np.clip(np.rint(mag / peak * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, gray):
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    atomic_write(path, f"P5\n{w} {h}\n255\n".encode() + gray.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit graymap."""
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    data = blob[pos + 1 : pos + 1 + w * h]
    _expect_len(path, data, w * h)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def export_viewable(image_path, out_path):
    """Write the magnitude of a CIMG1 image as an 8-bit PGM."""
    write_pgm(out_path, magnitude_to_gray(read_image(image_path)))
