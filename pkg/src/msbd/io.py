"""On-disk formats: MSBD1 containers, PGM images and atomic writes.

An MSBD1 file is::

    b"MSBD1\\n"  |  uint64 LE header length  |  UTF-8 JSON header  |  payload

The header names every array with its shape and whether it is complex.
The payload is the arrays in header order as little-endian float64, with
complex arrays stored as interleaved (re, im) pairs.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .fourier import Lattice
from .recovery import Alignment, RecoveryResult
from .synthesis import GroundTruthInstance, ObservationSet

__all__ = [
    "MAGIC",
    "FormatError",
    "atomic_write_bytes",
    "atomic_write_text",
    "write_container",
    "read_container",
    "save_instance",
    "load_instance",
    "save_recovery",
    "load_recovery",
    "write_pgm",
    "read_pgm",
    "read_image",
]

MAGIC = b"MSBD1\n"
_LEN = struct.Struct("<Q")


class FormatError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_container(path, header: dict, arrays: dict) -> None:
    """Write ``arrays`` (name -> ndarray) after a JSON ``header``."""
    specs = []
    chunks = []
    for name, a in arrays.items():
        a = np.asarray(a)
        cplx = bool(np.iscomplexobj(a))
        specs.append({"name": name, "shape": list(a.shape), "complex": cplx})
        data = np.ascontiguousarray(a, dtype="<c16" if cplx else "<f8")
        chunks.append(data.view("<f8").tobytes())
    head = dict(header)
    head["arrays"] = specs
    blob = json.dumps(_jsonable(head), sort_keys=True, separators=(",", ":")).encode("utf-8")
    atomic_write_bytes(path, MAGIC + _LEN.pack(len(blob)) + blob + b"".join(chunks))


def read_container(path):
    """Inverse of :func:`write_container`: returns ``(header, arrays)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not an MSBD1 file (bad magic)")
    off = len(MAGIC)
    if len(raw) < off + _LEN.size:
        raise FormatError(f"{path}: truncated header")
    (hlen,) = _LEN.unpack_from(raw, off)
    off += _LEN.size
    try:
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})")
    off += hlen
    arrays = {}
    for spec in header.get("arrays", []):
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64)) * (2 if spec["complex"] else 1)
        end = off + 8 * count
        if end > len(raw):
            raise FormatError(f"{path}: payload truncated in array {spec['name']!r}")
        flat = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        a = flat.view("<c16") if spec["complex"] else flat
        arrays[spec["name"]] = a.astype(np.complex128 if spec["complex"] else np.float64).reshape(shape)
        off = end
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return header, arrays


def save_instance(path, obs: ObservationSet, gt: Optional[GroundTruthInstance] = None,
                  sigma: float = 0.0, meta: Optional[dict] = None) -> None:
    """Write observations, and the ground truth when available."""
    header = {
        "kind": "instance",
        "lattice": list(obs.lat.dims),
        "N": obs.N,
        "theta": obs.theta_hint if gt is None else gt.theta,
        "field": obs.field,
        "seed": None if gt is None else gt.seed,
        "sigma": float(sigma),
        "kappa": None if gt is None else gt.kappa,
        "meta": {**(gt.meta if gt is not None else {}), **(meta or {})},
    }
    arrays = {}
    if gt is not None:
        arrays["f"] = gt.f
        arrays["X"] = gt.X
    arrays["Y"] = obs.Y
    write_container(path, header, arrays)


def load_instance(path):
    """Returns ``(obs, gt_or_None, header)``."""
    header, arrays = read_container(path)
    if header.get("kind") != "instance":
        raise FormatError(f"{path}: expected an instance file, found {header.get('kind')!r}")
    lat = Lattice(tuple(header["lattice"]))
    obs = ObservationSet(arrays["Y"], lat, header["field"], header.get("theta"))
    gt = None
    if "f" in arrays:
        gt = GroundTruthInstance(
            arrays["f"], arrays["X"], lat, header["field"], header["theta"],
            header.get("seed") or 0, header.get("kappa"), dict(header.get("meta") or {}),
        )
    return obs, gt, header


def save_recovery(path, result: RecoveryResult, h, meta: Optional[dict] = None) -> None:
    header = {
        "kind": "recovery",
        "lattice": list(result.lat.dims),
        "N": int(result.x_hat.shape[0]),
        "residual": result.residual,
        "accuracy": result.accuracy,
        "meta": {**result.meta, **(meta or {})},
    }
    if result.alignment is not None:
        al = result.alignment
        header["alignment"] = {"sign": al.sign, "shift": al.shift, "signal_error": al.signal_error}
    arrays = {"h": np.asarray(h), "f_hat": result.f_hat, "x_hat": result.x_hat}
    if result.alignment is not None:
        arrays["channel_errors"] = result.alignment.channel_errors
    write_container(path, header, arrays)


def load_recovery(path):
    """Returns ``(result, h, header)``."""
    header, arrays = read_container(path)
    if header.get("kind") != "recovery":
        raise FormatError(f"{path}: expected a recovery file, found {header.get('kind')!r}")
    lat = Lattice(tuple(header["lattice"]))
    alignment = None
    if "alignment" in header:
        al = header["alignment"]
        shift = al["shift"] if lat.ndim == 1 else tuple(al["shift"])
        alignment = Alignment(al["sign"], shift, arrays["channel_errors"], al["signal_error"])
    result = RecoveryResult(arrays["f_hat"], arrays["x_hat"], lat, header["residual"],
                            header.get("accuracy"), alignment, dict(header.get("meta") or {}))
    return result, arrays["h"], header


def write_pgm(path, img) -> None:
    """8-bit binary PGM, min-max normalized (a constant image maps to 0)."""
    a = np.real(np.asarray(img, dtype=complex if np.iscomplexobj(img) else float))
    if a.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {a.shape}")
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros(a.shape) if hi == lo else (a - lo) / (hi - lo)
    px = np.round(scaled * 255).astype(np.uint8)
    rows, cols = a.shape
    atomic_write_bytes(path, f"P5\n{cols} {rows}\n255\n".encode("ascii") + px.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5, 8- or 16-bit) as floats in ``[0, 1]``."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: only binary PGM (P5) is supported")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    if len(raw) - pos < rows * cols * np.dtype(dtype).itemsize:
        raise FormatError(f"{path}: truncated PGM pixel data")
    px = np.frombuffer(raw, dtype=dtype, count=rows * cols, offset=pos)
    return px.reshape(rows, cols).astype(float) / maxval


def read_image(path) -> np.ndarray:
    """Load a 2-D image from ``.pgm`` or ``.npy``."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        a = np.load(path, allow_pickle=False)
        if a.ndim != 2:
            raise ValueError(f"{path}: expected a 2-D array, got shape {a.shape}")
        return np.asarray(a, dtype=float)
    return read_pgm(path)
