"""File formats: PPM/PGM/PNG images, Middlebury .flo flows, the GSLW
binary weights container, key-value experiment configs, CSV and run
manifests."""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .flow import FlowField

FLO_MAGIC = 202021.25
GSLW_MAGIC = b"GSLW"
GSLW_VERSION = 1


class FormatError(ValueError):
    pass


# ---- images --------------------------------------------------------------

def _read_pnm_header(data, magic):
    if not data.startswith(magic):
        raise FormatError(f"expected {magic.decode()} header")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1


def read_image(path):
    """Read PPM (P6), PGM (P5), or PNG into a float tensor in [0,1].

    Color images come back as (3,H,W); PGM masks as (H,W).
    """
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P6":
        w, h, maxval, off = _read_pnm_header(data, b"P6")
        if maxval != 255:
            raise FormatError(f"P6 maxval {maxval} unsupported (only 255)")
        payload = data[off:off + 3 * w * h]
        if len(payload) != 3 * w * h:
            raise FormatError("truncated P6 payload")
        arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
        return arr.transpose(2, 0, 1).astype(np.float64) / 255.0
    if data[:2] == b"P5":
        w, h, maxval, off = _read_pnm_header(data, b"P5")
        if maxval != 255:
            raise FormatError(f"P5 maxval {maxval} unsupported (only 255)")
        payload = data[off:off + w * h]
        if len(payload) != w * h:
            raise FormatError("truncated P5 payload")
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image
        img = Image.open(path).convert("RGB")
        arr = np.asarray(img, dtype=np.uint8)
        return arr.transpose(2, 0, 1).astype(np.float64) / 255.0
    raise FormatError(f"unrecognized image format in {path}")


def _quantize(arr):
    return np.clip(np.round(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, arr):
    """Write (3,H,W) as PPM/PNG or (H,W) as PGM, quantizing to 8 bits."""
    path = Path(path)
    arr = np.asarray(arr, dtype=np.float64)
    if path.suffix == ".png":
        from PIL import Image
        if arr.ndim != 3:
            raise FormatError("PNG writer expects a (3,H,W) image")
        Image.fromarray(_quantize(arr).transpose(1, 2, 0)).save(path)
        return
    if arr.ndim == 3:
        c, h, w = arr.shape
        if c != 3:
            raise FormatError("PPM writer expects 3 channels")
        header = f"P6\n{w} {h}\n255\n".encode()
        path.write_bytes(header + _quantize(arr).transpose(1, 2, 0).tobytes())
    elif arr.ndim == 2:
        h, w = arr.shape
        header = f"P5\n{w} {h}\n255\n".encode()
        path.write_bytes(header + _quantize(arr).tobytes())
    else:
        raise FormatError(f"cannot write array of ndim {arr.ndim}")


# ---- .flo ----------------------------------------------------------------

def read_flo(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError("flo file too short")
    magic, = struct.unpack("<f", data[:4])
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"bad flo magic {magic!r}, expected {FLO_MAGIC}")
    w, h = struct.unpack("<ii", data[4:12])
    expected = 12 + 8 * w * h
    if len(data) != expected:
        raise FormatError(f"flo payload is {len(data)} bytes, expected {expected}")
    uv = np.frombuffer(data[12:], dtype="<f4").reshape(h, w, 2)
    return FlowField(uv[:, :, 0].astype(np.float64), uv[:, :, 1].astype(np.float64))


def write_flo(path, flow):
    h, w = flow.shape
    uv = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    Path(path).write_bytes(struct.pack("<f", FLO_MAGIC) + struct.pack("<ii", w, h)
                           + uv.tobytes())


# ---- GSLW weights --------------------------------------------------------

def write_weights(path, tensors):
    """tensors: dict name -> numpy array. Stored as float32 little-endian."""
    names = list(tensors)
    if len(set(names)) != len(names):
        raise FormatError("duplicate tensor names")
    out = [GSLW_MAGIC, struct.pack("<II", GSLW_VERSION, len(names))]
    for name in names:
        arr = np.asarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    Path(path).write_bytes(b"".join(out))


def read_weights(path):
    data = Path(path).read_bytes()
    if data[:4] != GSLW_MAGIC:
        raise FormatError("bad weights magic")
    version, count = struct.unpack("<II", data[4:12])
    if version != GSLW_VERSION:
        raise FormatError(f"unsupported weights version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", data[pos:pos + 4]); pos += 4
        name = data[pos:pos + nlen].decode("utf-8"); pos += nlen
        (rank,) = struct.unpack("<I", data[pos:pos + 4]); pos += 4
        dims = struct.unpack(f"<{rank}I", data[pos:pos + 4 * rank]); pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        payload = data[pos:pos + 4 * n]
        if len(payload) != 4 * n:
            raise FormatError(f"truncated payload for tensor {name!r}")
        pos += 4 * n
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
    return out


# ---- config --------------------------------------------------------------

CONFIG_SCHEMA = {
    "seed": int,
    "epochs": int,
    "steps_per_epoch": int,
    "bptt_steps": int,
    "lr": float,
    "flips": bool,
    "lambda_c": float,
    "lambda_s": float,
    "lambda_t": float,
    "phase": str,
    "widths": str,          # comma-separated ints
    "n_residual": int,
    "frame_size": int,
    "patch": int,
    "search": int,
    "style": str,           # path
    "content": str,         # path
    "feature_seed": int,
}


def parse_config(text):
    """key = value config; '#' comments; unknown keys rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_SCHEMA:
            raise FormatError(f"config line {lineno}: unknown key {key!r}")
        typ = CONFIG_SCHEMA[key]
        if typ is bool:
            if value.lower() not in ("true", "false", "0", "1"):
                raise FormatError(f"config line {lineno}: bad boolean {value!r}")
            out[key] = value.lower() in ("true", "1")
        else:
            out[key] = typ(value)
    return out


def read_config(path):
    return parse_config(Path(path).read_text())


# ---- CSV + manifest ------------------------------------------------------

def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, config, artifacts, exclude_hash=()):
    """Record the run config, seed, and artifact hashes for reproducibility."""
    out_dir = Path(out_dir)
    manifest = {
        "config": config,
        "artifacts": {name: (None if name in exclude_hash else sha256_file(out_dir / name))
                      for name in artifacts},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
