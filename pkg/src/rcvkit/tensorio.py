"""File formats shared across the pipeline: NPY tensors, measure CSVs, manifests.

All numeric payloads travel as NPY v1.0 files (little-endian f4 or f8,
C order). In-memory math is always float64 regardless of the on-disk width.
Sample alignment between activation files and measure tables is carried by an
explicit ordered manifest, never by filename sorting.
"""

from __future__ import annotations

import ast
import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCR = {"<f4", "<f8", ">f4", ">f8", "|f4", "|f8", "=f4", "=f8"}


class TensorFormatError(ValueError):
    """Malformed or unsupported tensor file."""


class NonFiniteError(ValueError):
    """NaN or Inf encountered where finite values are required."""


class MeasureTableError(ValueError):
    """Malformed measure CSV (duplicates, bad values, missing columns)."""


class AlignmentError(ValueError):
    """Sample identifiers of two artifacts do not line up."""


def read_tensor(path, allow_nonfinite: bool = False) -> np.ndarray:
    """Read an NPY v1.0 file into a float64 C-order array.

    Accepts 32- or 64-bit floats in either byte order; rejects NaN/Inf
    payloads unless ``allow_nonfinite`` is set.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:6] != _MAGIC:
        raise TensorFormatError(f"{path}: not an NPY file (bad magic)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise TensorFormatError(f"{path}: unsupported NPY version {major}.{minor}")
    (hlen,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + hlen
    if len(raw) < header_end:
        raise TensorFormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise TensorFormatError(f"{path}: unparsable header") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise TensorFormatError(f"{path}: header keys invalid")
    descr = header["descr"]
    if descr not in _SUPPORTED_DESCR:
        raise TensorFormatError(f"{path}: unsupported dtype {descr!r}")
    if header["fortran_order"]:
        raise TensorFormatError(f"{path}: fortran_order arrays not supported")
    shape = tuple(header["shape"])
    if not all(isinstance(d, int) and d >= 0 for d in shape):
        raise TensorFormatError(f"{path}: invalid shape {shape!r}")
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    data = np.frombuffer(raw[header_end:], dtype=np.dtype(descr), count=-1)
    if data.size != count:
        raise TensorFormatError(
            f"{path}: payload has {data.size} elements, header says {count}"
        )
    out = data.astype(np.float64).reshape(shape)
    if not allow_nonfinite and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{path}: non-finite values in payload")
    return out


def write_tensor(arr, path, dtype: str = "f8", allow_nonfinite: bool = False) -> None:
    """Write an array as NPY v1.0, little-endian ``f4`` or ``f8``."""
    if dtype not in ("f4", "f8"):
        raise TensorFormatError(f"unsupported on-disk dtype {dtype!r}")
    arr = np.asarray(arr, dtype=np.float64)
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise NonFiniteError("refusing to write non-finite values")
    header = {
        "descr": "<" + dtype,
        "fortran_order": False,
        "shape": arr.shape,
    }
    body = ("{'descr': %r, 'fortran_order': False, 'shape': %r, }"
            % (header["descr"], tuple(arr.shape)))
    # Total header (magic + version + length + dict + padding) is a multiple
    # of 64 and ends in newline, per the NPY v1.0 layout.
    base = len(_MAGIC) + 2 + 2
    pad = 64 - (base + len(body) + 1) % 64
    header_bytes = (body + " " * pad + "\n").encode("latin1")
    payload = np.ascontiguousarray(arr, dtype=np.dtype("<" + dtype)).tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


@dataclass
class ConceptMeasures:
    """Continuous measures of one concept over an ordered set of samples."""

    concept_name: str
    sample_ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.sample_ids) != self.values.size:
            raise AlignmentError("sample_ids and values length mismatch")


@dataclass
class MeasureTable:
    """Rows of (sample_id, concept, value) with unique keys and finite values."""

    rows: list[tuple[str, str, float]] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for sid, concept, value in self.rows:
            key = (sid, concept)
            if key in seen:
                raise MeasureTableError(f"duplicate entry for {key}")
            seen.add(key)
            if not np.isfinite(value):
                raise MeasureTableError(f"non-finite value for {key}")

    @property
    def concepts(self) -> list[str]:
        out = []
        for _, concept, _ in self.rows:
            if concept not in out:
                out.append(concept)
        return out

    def concept(self, name: str, sample_order: list[str] | None = None) -> ConceptMeasures:
        """Values of one concept, ordered by ``sample_order`` (manifest) if given."""
        by_id = {sid: v for sid, c, v in self.rows if c == name}
        if not by_id:
            raise MeasureTableError(f"unknown concept {name!r}")
        if sample_order is None:
            sample_order = [sid for sid, c, _ in self.rows if c == name]
        missing = [sid for sid in sample_order if sid not in by_id]
        if missing:
            raise AlignmentError(f"concept {name!r} missing samples {missing[:5]}")
        values = np.array([by_id[sid] for sid in sample_order])
        return ConceptMeasures(name, list(sample_order), values)


def read_measures(path) -> MeasureTable:
    """Parse a measure CSV with header ``sample_id,concept,value``."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"sample_id", "concept", "value"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise MeasureTableError(f"{path}: header must contain {sorted(required)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                value = float(rec["value"])
            except (TypeError, ValueError) as exc:
                raise MeasureTableError(f"{path}:{lineno}: non-numeric value") from exc
            rows.append((rec["sample_id"], rec["concept"], value))
    return MeasureTable(rows)


def write_measures(table: MeasureTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "concept", "value"])
        for sid, concept, value in table.rows:
            writer.writerow([sid, concept, repr(value)])


def read_manifest(path) -> list[str]:
    """One sample_id per line; order defines sample alignment everywhere."""
    with open(path, encoding="utf-8") as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if len(set(ids)) != len(ids):
        raise AlignmentError(f"{path}: duplicate sample ids in manifest")
    return ids


def write_manifest(sample_ids: list[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sample_ids:
            fh.write(sid + "\n")


@dataclass
class MaskedImageSet:
    """Grayscale patches paired with integer instance masks (0 = background)."""

    images: list[np.ndarray]
    masks: list[np.ndarray]
    sample_ids: list[str]

    def __post_init__(self):
        if not (len(self.images) == len(self.masks) == len(self.sample_ids)):
            raise AlignmentError("images, masks, sample_ids length mismatch")
        for sid, img, mask in zip(self.sample_ids, self.images, self.masks):
            if img.shape != mask.shape:
                raise AlignmentError(f"{sid}: image/mask shape mismatch")
            if np.any(mask < 0):
                raise ValueError(f"{sid}: negative mask labels")


def load_grayscale_image(path) -> np.ndarray:
    """8/16-bit grayscale PNG or NPY tensor patch as an integer array."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        return np.rint(read_tensor(path)).astype(np.int64)
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in ("L", "I", "I;16"):
            img = img.convert("L")
        return np.asarray(img, dtype=np.int64)


def load_masked_images(image_paths, mask_paths, sample_ids=None) -> MaskedImageSet:
    if sample_ids is None:
        sample_ids = [Path(p).stem for p in image_paths]
    images = [load_grayscale_image(p) for p in image_paths]
    masks = [load_grayscale_image(p) for p in mask_paths]
    return MaskedImageSet(images, masks, list(sample_ids))
