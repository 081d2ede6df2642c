"""Stable on-disk formats for field samples.

CSV: optional ``# ossf-field {json}`` metadata comment, a header row
``x1,...,xd,X1,...,Xm``, then one node per row in row-major axis order with
17-significant-digit decimals (lossless for float64).

Binary: magic ``OSSF1``, little-endian u32 d, u32 m, d x u32 per-axis
counts, then per node d+m float64 values in the same row order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ValidationError
from .synthesis import FieldMeta, FieldSample, GridSpec

_MAGIC = b"OSSF1"
_META_PREFIX = "# ossf-field "


def _meta_to_json(meta):
    return json.dumps({
        "representation": meta.representation,
        "seed": meta.seed,
        "E": [list(row) for row in meta.e_matrix],
        "D": [list(row) for row in meta.d_matrix],
        "H": meta.h,
        "params": meta.params,
        "fingerprint": meta.fingerprint,
    }, separators=(",", ":"))


def _meta_from_json(text):
    obj = json.loads(text)
    return FieldMeta(
        representation=obj["representation"],
        seed=int(obj["seed"]),
        e_matrix=tuple(tuple(float(v) for v in row) for row in obj["E"]),
        d_matrix=tuple(tuple(float(v) for v in row) for row in obj["D"]),
        h=float(obj["H"]),
        params=dict(obj["params"]),
        fingerprint=obj["fingerprint"],
    )


def write_csv(field, path):
    d, m = field.d, field.m
    header = ",".join([f"x{i + 1}" for i in range(d)] + [f"X{i + 1}" for i in range(m)])
    rows = np.concatenate([field.points, field.values], axis=1)
    with open(path, "w", encoding="ascii") as fh:
        if field.meta is not None:
            fh.write(_META_PREFIX + _meta_to_json(field.meta) + "\n")
        if field.grid is not None:
            fh.write("# grid " + json.dumps(list(field.grid.points_per_axis)) + "\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_csv(path):
    meta = None
    grid = None
    header = None
    data = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith(_META_PREFIX):
                try:
                    meta = _meta_from_json(line[len(_META_PREFIX):])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValidationError(
                        f"{path}:{lineno}: malformed field metadata: {exc}"
                    ) from exc
                continue
            if line.startswith("# grid "):
                try:
                    grid = GridSpec(tuple(json.loads(line[len("# grid "):])))
                except (json.JSONDecodeError, ValidationError) as exc:
                    raise ValidationError(
                        f"{path}:{lineno}: malformed grid comment: {exc}"
                    ) from exc
                continue
            if line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if not header or not header[0].startswith("x"):
                    raise ValidationError(f"{path}:{lineno}: malformed header row")
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise ValidationError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(parts)}"
                )
            try:
                data.append([float(v) for v in parts])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: unparsable number") from exc
    if header is None or not data:
        raise ValidationError(f"{path}: no data rows found")
    d = sum(1 for h in header if h.startswith("x"))
    m = len(header) - d
    if m < 1:
        raise ValidationError(f"{path}: header has no value columns")
    arr = np.asarray(data)
    field = FieldSample(points=arr[:, :d], values=arr[:, d:], meta=meta, grid=grid)
    if grid is not None and grid.n_nodes != arr.shape[0]:
        raise ValidationError(
            f"{path}: grid comment promises {grid.n_nodes} rows, found {arr.shape[0]}"
        )
    return field


def write_binary(field, path):
    d, m = field.d, field.m
    if field.grid is None:
        raise ValidationError("binary format requires a grid-based sample")
    counts = field.grid.points_per_axis
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", d, m))
        fh.write(struct.pack(f"<{len(counts)}I", *counts))
        rows = np.ascontiguousarray(
            np.concatenate([field.points, field.values], axis=1), dtype="<f8"
        )
        fh.write(rows.tobytes())


def read_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != _MAGIC:
        raise ValidationError(f"{path}: missing OSSF1 magic at offset 0")
    off = 5
    try:
        d, m = struct.unpack_from("<II", blob, off)
        off += 8
        counts = struct.unpack_from(f"<{d}I", blob, off)
        off += 4 * d
    except struct.error as exc:
        raise ValidationError(f"{path}: truncated header at offset {off}") from exc
    n = int(np.prod(counts))
    need = n * (d + m) * 8
    payload = blob[off:]
    if len(payload) < need:
        raise ValidationError(
            f"{path}: truncated payload at offset {off + len(payload)}, "
            f"expected {need} bytes"
        )
    rows = np.frombuffer(payload[:need], dtype="<f8").reshape(n, d + m)
    grid = GridSpec(tuple(int(c) for c in counts)) if len(counts) == d else None
    return FieldSample(points=rows[:, :d].copy(), values=rows[:, d:].copy(),
                       meta=None, grid=grid)


def sniff_and_read(path):
    """Read a field file in either format, detected from the leading bytes."""
    with open(path, "rb") as fh:
        head = fh.read(5)
    if head == _MAGIC:
        return read_binary(path)
    return read_csv(path)
