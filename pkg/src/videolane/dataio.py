"""File formats: line-delimited annotations, binary tensor checkpoints,
PNG frames, and metric reports.

Annotations are one JSON object per line in canonical form (sorted keys, no
spaces), so write-then-read round-trips byte-identically and files diff
cleanly.  Checkpoints are a flat named-tensor container with a version
header; everything is written atomically (temp file + rename).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IoError, ParseError, SchemaError
from .geometry import LanePolyline, SampleGrid

TENSOR_MAGIC = b"VLNT"
TENSOR_VERSION = 1


# -- atomic writes ----------------------------------------------------------


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as e:
        raise IoError(f"writing {path}: {e}") from e


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# -- annotations ------------------------------------------------------------


@dataclass
class LaneRecord:
    track_id: int
    xs: np.ndarray
    valid: np.ndarray

    def polyline(self) -> LanePolyline:
        return LanePolyline(self.xs.copy(), self.valid.copy())


@dataclass
class AnnotationRecord:
    """Lanes of one frame, with the sampling grid they live on."""

    video: str
    frame: int
    grid: SampleGrid
    lanes: list


def _grid_to_obj(grid: SampleGrid) -> dict:
    return {
        "n": grid.n,
        "y_top": grid.y_top,
        "y_bottom": grid.y_bottom,
        "h": grid.h,
        "w": grid.w,
    }


def _grid_from_obj(obj: dict) -> SampleGrid:
    return SampleGrid(
        n=int(obj["n"]),
        y_top=float(obj["y_top"]),
        y_bottom=float(obj["y_bottom"]),
        h=int(obj["h"]),
        w=int(obj["w"]),
    )


def record_to_line(rec: AnnotationRecord) -> str:
    obj = {
        "video": rec.video,
        "frame": rec.frame,
        "grid": _grid_to_obj(rec.grid),
        "lanes": [
            {
                "track_id": int(l.track_id),
                "xs": [float(x) for x in l.xs],
                "valid": [bool(v) for v in l.valid],
            }
            for l in rec.lanes
        ],
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_annotations(path, records: list):
    atomic_write_text(path, "".join(record_to_line(r) + "\n" for r in records))


def parse_annotations(path) -> list:
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such annotation file: {path}")
    records = []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:{ln}: {e}") from e
        try:
            grid = _grid_from_obj(obj["grid"])
            lanes = []
            for l in obj["lanes"]:
                xs = np.asarray(l["xs"], dtype=np.float64)
                valid = np.asarray(l["valid"], dtype=bool)
                if xs.shape != (grid.n,) or valid.shape != (grid.n,):
                    raise SchemaError(
                        f"{path}:{ln}: lane has {xs.size} xs / {valid.size} valid, "
                        f"grid declares n={grid.n}"
                    )
                lanes.append(LaneRecord(int(l["track_id"]), xs, valid))
            records.append(
                AnnotationRecord(str(obj["video"]), int(obj["frame"]), grid, lanes)
            )
        except SchemaError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}:{ln}: {e}") from e
    _check_contiguous_frames(records, path)
    return records


def _check_contiguous_frames(records: list, path):
    seen = {}
    for rec in records:
        seen.setdefault(rec.video, []).append(rec.frame)
    for video, frames in seen.items():
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise SchemaError(f"{path}: frames of video {video} not contiguous: {frames}")


# -- named tensor checkpoints -----------------------------------------------


def tensors_to_bytes(tensors: dict) -> bytes:
    out = [TENSOR_MAGIC, struct.pack("<II", TENSOR_VERSION, len(tensors))]
    for name, arr in tensors.items():
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(arr, dtype=np.float64, order="C")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_tensors(path, tensors: dict):
    atomic_write_bytes(path, tensors_to_bytes(tensors))


def load_tensors(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such checkpoint: {path}")
    buf = path.read_bytes()
    if buf[:4] != TENSOR_MAGIC:
        raise SchemaError(f"{path}: not a tensor container")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != TENSOR_VERSION:
        raise SchemaError(f"{path}: unsupported container version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}q", buf, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as e:
        raise SchemaError(f"{path}: truncated container: {e}") from e
    if pos != len(buf):
        raise SchemaError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


# -- frames -----------------------------------------------------------------


def save_frame(path, frame: np.ndarray):
    """(3, H, W) float in [0,1] -> 8-bit RGB PNG."""
    arr = np.clip(np.asarray(frame), 0.0, 1.0)
    img = (arr * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        Image.fromarray(img, mode="RGB").save(tmp, format="PNG")
        tmp.replace(path)
    except OSError as e:
        raise IoError(f"writing {path}: {e}") from e


def load_frame(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such frame: {path}")
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return img.transpose(2, 0, 1) / 255.0


# -- metric reports ---------------------------------------------------------


def write_report(path, fields: dict):
    lines = [f"{k}: {json.dumps(v)}" for k, v in fields.items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def parse_report(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such report: {path}")
    out = {}
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, val = line.partition(": ")
        if not sep:
            raise ParseError(f"{path}:{ln}: expected 'key: value'")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:{ln}: {e}") from e
    return out


# -- manifests --------------------------------------------------------------


def write_manifest(path, manifest: dict):
    atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such manifest: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e


@dataclass
class ClipData:
    """One benchmark clip in memory: frames plus its annotation records."""

    id: str
    frames: list
    records: list


def load_benchmark(root) -> tuple[dict, list]:
    """Load a generated dataset directory back into memory.

    Returns (manifest, clips); each clip's records are its frames'
    AnnotationRecords in frame order.
    """
    root = Path(root)
    manifest = load_manifest(root / "manifest.json")
    records = parse_annotations(root / manifest["annotations"])
    by_video = {}
    for rec in records:
        by_video.setdefault(rec.video, []).append(rec)
    clips = []
    for entry in manifest["clips"]:
        frames = [load_frame(root / rel) for rel in entry["frames"]]
        recs = by_video.get(entry["id"], [])
        if len(recs) != len(frames):
            raise SchemaError(
                f"{root}: clip {entry['id']} has {len(frames)} frames "
                f"but {len(recs)} annotation records"
            )
        clips.append(ClipData(entry["id"], frames, recs))
    return manifest, clips
