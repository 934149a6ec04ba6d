"""Tensor files, annotation/detection JSON and heatmap images.

Tensor file layout (all little-endian)::

    offset  size  field
    0       4     magic b"PMAP"
    4       2     version (u16, currently 1)
    6       2     n_maps (u16)
    8       4     height (u32)
    12      4     width (u32)
    16      ...   n_maps * height * width float32, map-major, row-major

Any array dump converts with a few lines, e.g. from numpy::

    header = struct.pack("<4sHHII", b"PMAP", 1, n, h, w)
    open(path, "wb").write(header + arr.astype("<f4").tobytes())
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .contours import DetectionBoundary
from .errors import (BadMagic, IoError, NonFiniteValue, TruncatedPayload, ValidationError, ValueOutOfRange,
                     VersionUnsupported)
from .geometry import Grid, TextPolygon
from .probmap import ProbabilityMap, ProbabilityStack

MAGIC = b"PMAP"
VERSION = 1
HEADER = struct.Struct("<4sHHII")
RANGE_TOLERANCE = 1e-6


def default_alphas(n: int) -> tuple[float, ...]:
    return tuple(float(3 * i + 1) for i in range(n))


def write_stack(stack: ProbabilityStack, path) -> None:
    n, h, w = stack.values.shape
    payload = np.ascontiguousarray(stack.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, n, h, w))
        fh.write(payload.tobytes())


def read_stack(path, alphas=None) -> ProbabilityStack:
    """Load a tensor file; ``alphas`` defaults to ``1, 4, 7, ...``."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, version, n, h, w = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} not supported (expected {VERSION})")
    expected = n * h * w * 4
    got = len(data) - HEADER.size
    if got < expected:
        raise TruncatedPayload(f"{path}: payload has {got} bytes, header needs {expected}")
    if got > expected:
        raise TruncatedPayload(f"{path}: {got - expected} unexpected trailing bytes after payload")
    if n == 0 or h == 0 or w == 0:
        raise ValidationError(f"{path}: empty stack ({n}x{h}x{w})")
    values = np.frombuffer(data, dtype="<f4", count=n * h * w, offset=HEADER.size).reshape(n, h, w)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: payload contains NaN or infinity")
    lo, hi = float(values.min()), float(values.max())
    if lo < -RANGE_TOLERANCE or hi > 1 + RANGE_TOLERANCE:
        raise ValueOutOfRange(f"{path}: values span [{lo}, {hi}], outside [0, 1]")
    values = np.clip(values.astype(np.float64), 0.0, 1.0)
    if alphas is None:
        alphas = default_alphas(n)
    return ProbabilityStack(tuple(alphas), values)


def stack_payload(stack: ProbabilityStack) -> bytes:
    return np.ascontiguousarray(stack.values, dtype="<f4").tobytes()


def _read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc


def parse_annotation(doc: dict, source: str = "<annotation>"):
    """``(image, grid, polygons)`` from an annotation document."""
    try:
        image = dict(doc["image"])
        grid = Grid(int(image["width"]), int(image["height"]))
        polys = []
        for i, inst in enumerate(doc.get("instances", [])):
            try:
                polys.append(TextPolygon(inst["points"], id=inst.get("id", str(i)),
                                         ignore=inst.get("ignore", False)))
            except ValidationError as exc:
                raise ValidationError(f"{source}: instance {i}: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{source}: malformed annotation: missing or bad field {exc}") from exc
    return image, grid, polys


def load_annotation(path):
    return parse_annotation(_read_json(path), str(path))


def annotation_doc(image: dict, polys) -> dict:
    return {
        "image": image,
        "instances": [{"id": p.id, "ignore": p.ignore, "points": p.to_list()} for p in polys],
    }


def save_annotation(path, image: dict, polys) -> None:
    Path(path).write_text(json.dumps(annotation_doc(image, polys)))


def detections_doc(image: dict, boundaries) -> dict:
    return {"image": image, "detections": [b.to_json() for b in boundaries]}


def save_detections(path, image: dict, boundaries) -> None:
    Path(path).write_text(json.dumps(detections_doc(image, boundaries)))


def parse_detections(doc: dict, source: str = "<detections>"):
    try:
        out = []
        for i, det in enumerate(doc.get("detections", [])):
            try:
                poly = TextPolygon(det["points"], id=str(i))
            except ValidationError as exc:
                raise ValidationError(f"{source}: detection {i}: {exc}") from exc
            out.append(DetectionBoundary(poly, float(det.get("score", 1.0)), det.get("mode", "polygon")))
        return dict(doc.get("image", {})), out
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{source}: malformed detections: missing or bad field {exc}") from exc


def load_detections(path):
    return parse_detections(_read_json(path), str(path))


def _collection_files(path) -> dict:
    path = Path(path)
    if path.is_dir():
        return {p.stem: p for p in sorted(path.glob("*.json"))}
    if path.is_file():
        return {None: path}
    raise ValidationError(f"{path}: no such file or directory")


def load_collections(gt_path, det_path) -> tuple[dict, dict]:
    """Ground truths and detections keyed by image.

    Directories pair files by stem. Two single files are paired directly.
    """
    gt_files, det_files = _collection_files(gt_path), _collection_files(det_path)
    if None in gt_files and None in det_files:
        gt_files, det_files = {"image": gt_files[None]}, {"image": det_files[None]}
    else:
        for files in (gt_files, det_files):
            if None in files:
                p = files.pop(None)
                files[p.stem] = p
    gts = {k: load_annotation(p)[2] for k, p in gt_files.items()}
    dets = {k: load_detections(p)[1] for k, p in det_files.items()}
    return gts, dets


def heatmap_array(source, colormap: str = "gray") -> np.ndarray:
    """8-bit raster of a map or of a whole stack (maps side by side)."""
    if isinstance(source, ProbabilityStack):
        values = np.concatenate(list(source.values), axis=1)
    elif isinstance(source, ProbabilityMap):
        values = source.values
    else:
        values = np.asarray(source, dtype=np.float64)
        if values.ndim == 3:
            values = np.concatenate(list(values), axis=1)
    gray = np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    if colormap in ("gray", "grey", None):
        return gray
    from matplotlib import colormaps

    try:
        cmap = colormaps[colormap]
    except KeyError as exc:
        raise ValidationError(f"unknown colormap {colormap!r}") from exc
    lut = np.round(cmap(np.linspace(0.0, 1.0, 256))[:, :3] * 255.0).astype(np.uint8)
    return lut[gray]


def export_heatmap(source, path, colormap: str = "gray") -> np.ndarray:
    from PIL import Image

    raster = heatmap_array(source, colormap)
    try:
        Image.fromarray(raster).save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"{path}: cannot write image: {exc}") from exc
    return raster


def raster_checksum(raster: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(str(raster.shape).encode())
    h.update(np.ascontiguousarray(raster).tobytes())
    return h.hexdigest()
