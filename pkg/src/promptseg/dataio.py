"""NPY v1.0 / NPZ containers for case archives, predictions and checkpoints."""

from __future__ import annotations

import ast
import logging
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CheckpointError, FormatError, ValidationError

logger = logging.getLogger(__name__)

MAGIC = b"\x93NUMPY"
_DTYPES = {
    "<f4": np.float32,
    "<f8": np.float64,
    "|u1": np.uint8,
    "<i8": np.int64,
    "<i4": np.int32,
    "<u2": np.uint16,
    "<i2": np.int16,
    "|b1": np.bool_,
}
_DESCR = {np.dtype(v): k for k, v in _DTYPES.items()}
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


# -- NPY ------------------------------------------------------------------------

def write_npy(arr) -> bytes:
    arr = np.asarray(arr)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    descr = _DESCR.get(np.dtype(dtype))
    if descr is None:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    shape = repr(tuple(int(n) for n in arr.shape))
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}"
    total = len(MAGIC) + 4 + len(header) + 1
    header += " " * ((-total) % 64) + "\n"
    payload = np.ascontiguousarray(arr, dtype=np.dtype(_DTYPES[descr]).newbyteorder("<")).tobytes()
    return MAGIC + b"\x01\x00" + struct.pack("<H", len(header)) + header.encode("latin1") + payload


def read_npy(data: bytes) -> np.ndarray:
    if data[:6] != MAGIC:
        raise FormatError("bad NPY magic", offset=0)
    if len(data) < 10:
        raise FormatError("truncated NPY preamble", offset=len(data))
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"unsupported NPY version {major}.{minor}", offset=6)
    (hlen,) = struct.unpack("<H", data[8:10])
    start = 10 + hlen
    if len(data) < start:
        raise FormatError(f"truncated NPY header: expected {start} bytes, got {len(data)}", offset=len(data))
    try:
        header = ast.literal_eval(data[10:start].decode("latin1"))
        descr, fortran, shape = header["descr"], header["fortran_order"], tuple(header["shape"])
    except (ValueError, SyntaxError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed NPY header: {exc}", offset=10) from None
    if fortran:
        raise FormatError("fortran_order arrays are not supported", offset=10)
    if descr not in _DTYPES:
        raise FormatError(f"unsupported dtype {descr!r}", offset=10)
    dtype = np.dtype(_DTYPES[descr]).newbyteorder("<")
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = len(data) - start
    if actual != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes, got {actual}", offset=start)
    arr = np.frombuffer(data, dtype=dtype, count=expected // dtype.itemsize, offset=start)
    return arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True)


# -- NPZ ------------------------------------------------------------------------

def write_npz(path, arrays: Dict[str, np.ndarray], texts: Optional[Dict[str, str]] = None):
    """Write a STORED zip with entries in sorted order and fixed timestamps."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, write_npy(arrays[name]))
        for name in sorted(texts or {}):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, texts[name].encode("utf-8"))


def read_npz(path) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """Return (arrays keyed without the .npy suffix, other entries as text)."""
    arrays, texts = {}, {}
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path}: not a zip archive ({exc})") from None
    with zf:
        names = zf.namelist()
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise FormatError(f"{path}: duplicate entries {dupes}")
        for name in names:
            raw = zf.read(name)
            if name.endswith(".npy"):
                try:
                    arrays[name[:-4]] = read_npy(raw)
                except FormatError as exc:
                    raise FormatError(f"{path}:{name}: {exc}") from None
            else:
                texts[name] = raw.decode("utf-8")
    return arrays, texts


# -- cases ----------------------------------------------------------------------

@dataclass
class CaseRecord:
    image: np.ndarray
    gts: Optional[np.ndarray] = None
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))
    z_ranges: Optional[np.ndarray] = None  # (n, 2) inclusive slice range per box for 3D cases
    spacing: Optional[np.ndarray] = None
    extras: Dict[str, np.ndarray] = field(default_factory=dict)
    case_id: str = ""
    clipped_boxes: int = 0

    @property
    def is_3d(self):
        return self.image.ndim == 3 and self.image.shape[-1] != 3

    @property
    def spatial_shape(self):
        return self.image.shape[:2] if not self.is_3d and self.image.ndim == 3 else self.image.shape

    @property
    def hw(self):
        return self.image.shape[1:3] if self.is_3d else self.image.shape[:2]


def validate_case(case: CaseRecord) -> CaseRecord:
    img = case.image
    if img.ndim not in (2, 3):
        raise ValidationError(f"image must be HxW, HxWx3 or DxHxW, got shape {img.shape}")
    if case.gts is not None and case.gts.shape != case.spatial_shape:
        raise ValidationError(f"gts shape {case.gts.shape} != image spatial shape {case.spatial_shape}")
    h, w = case.hw
    boxes = np.asarray(case.boxes, dtype=np.float64).reshape(-1, 4)
    clipped = np.stack([np.clip(boxes[:, 0], 0, w), np.clip(boxes[:, 1], 0, h),
                        np.clip(boxes[:, 2], 0, w), np.clip(boxes[:, 3], 0, h)], axis=1) if len(boxes) else boxes
    n_clipped = int(np.any(clipped != boxes, axis=1).sum()) if len(boxes) else 0
    if n_clipped:
        logger.warning("%s: clipped %d box(es) to image bounds", case.case_id or "case", n_clipped)
    for b in clipped:
        if not (b[0] < b[2] and b[1] < b[3]):
            raise ValidationError(f"degenerate box {tuple(b.tolist())}")
    case.boxes = clipped
    case.clipped_boxes += n_clipped
    return case


def read_case_npz(path) -> CaseRecord:
    arrays, _ = read_npz(path)
    if "imgs" not in arrays:
        raise FormatError(f"{path}: missing required entry 'imgs'")
    image = arrays.pop("imgs")
    gts = arrays.pop("gts", None)
    boxes = arrays.pop("boxes", np.zeros((0, 4)))
    spacing = arrays.pop("spacing", None)
    boxes = np.atleast_2d(np.asarray(boxes))
    z_ranges = None
    if boxes.size and boxes.shape[1] == 6:
        # x_min, y_min, z_min, x_max, y_max, z_max
        z_ranges = boxes[:, [2, 5]].astype(np.int64)
        boxes = boxes[:, [0, 1, 3, 4]]
    elif boxes.size and boxes.shape[1] != 4:
        raise FormatError(f"{path}: boxes must have 4 or 6 columns, got shape {boxes.shape}")
    case = CaseRecord(image=image, gts=gts, boxes=boxes.reshape(-1, 4), z_ranges=z_ranges,
                      spacing=spacing, extras=arrays, case_id=Path(path).stem)
    return validate_case(case)


def write_case_npz(path, case: CaseRecord):
    arrays = {"imgs": case.image, "boxes": np.asarray(case.boxes)}
    if case.gts is not None:
        arrays["gts"] = case.gts
    if case.spacing is not None:
        arrays["spacing"] = case.spacing
    arrays.update(case.extras)
    write_npz(path, arrays)


def list_cases(directory) -> List[Path]:
    return sorted(Path(directory).glob("*.npz"))


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, model, extra_texts: Optional[Dict[str, str]] = None):
    arrays = {name: t.data.astype(np.float32) for name, t in model.params.items()}
    arrays.update({name: b.astype(np.float32) for name, b in model.buffers.items()})
    texts = {"config": model.cfg.to_json()}
    texts.update(extra_texts or {})
    write_npz(path, arrays, texts)


def load_checkpoint(path):
    from .config import ModelConfig
    from .model import SegModel, buffer_specs, param_specs
    from .tensor import Tensor

    arrays, texts = read_npz(path)
    if "config" not in texts:
        raise CheckpointError(f"{path}: checkpoint has no 'config' entry")
    cfg = ModelConfig.from_json(texts["config"])
    specs, bspecs = param_specs(cfg), buffer_specs(cfg)
    missing = sorted((set(specs) | set(bspecs)) - set(arrays))
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise CheckpointError(f"{path}: missing {len(missing)} parameters: {shown}")
    params = {n: Tensor(arrays[n], requires_grad=specs[n].trainable) for n in sorted(specs)}
    buffers = {n: arrays[n] for n in sorted(bspecs)}
    return SegModel(cfg, params=params, buffers=buffers)
