"""Dense flow sequences: the MSCF file format, region grids and direction bins.

An MSCF file is little-endian::

    magic  b"MSCF"
    u32    version (= 1)
    u32    width
    u32    height
    u32    frame_count
    f32    frame_count * height * width * (u, v), row-major

Flow is stored as 32-bit floats and promoted to float64 on read.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MSCF"
VERSION = 1
HEADER = struct.Struct("<4sIIII")
STATIC = -1
# refuse headers whose payload would not fit in memory on any sane machine
MAX_PAYLOAD_BYTES = 1 << 40


class FlowFileError(ValueError):
    """Base class for malformed MSCF files."""


class BadMagicError(FlowFileError):
    pass


class UnsupportedVersionError(FlowFileError):
    pass


class TruncatedFlowError(FlowFileError):
    pass


class DimensionOverflowError(FlowFileError):
    pass


@dataclass
class FlowSequence:
    """Per-pixel flow for a run of frames, shaped ``(frames, height, width, 2)``."""

    frames: np.ndarray

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[-1] != 2:
            raise ValueError(f"flow must be (T, H, W, 2), got {frames.shape}")
        if min(frames.shape[:3]) < 1:
            raise ValueError(f"flow needs at least one frame and pixel, got {frames.shape}")
        self.frames = frames

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


def write_flow_file(path: str | Path, seq: FlowSequence) -> None:
    t, h, w, _ = seq.frames.shape
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, w, h, t))
        fh.write(payload)


def read_flow_file(path: str | Path) -> FlowSequence:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an MSCF file (magic {data[:4]!r})")
    if len(data) < HEADER.size:
        raise TruncatedFlowError(f"{path}: header truncated at {len(data)} bytes")
    _, version, w, h, t = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported MSCF version {version}")
    if w < 1 or h < 1 or t < 1:
        raise DimensionOverflowError(f"{path}: degenerate dimensions {w}x{h}x{t}")
    expected = t * h * w * 8
    if expected > MAX_PAYLOAD_BYTES:
        raise DimensionOverflowError(
            f"{path}: header declares {w}x{h}x{t} frames ({expected} bytes), over the "
            f"{MAX_PAYLOAD_BYTES}-byte limit"
        )
    got = len(data) - HEADER.size
    if got < expected:
        frames_present = got // (h * w * 8)
        raise TruncatedFlowError(
            f"{path}: header declares {t} frames but payload holds {frames_present} "
            f"({got} of {expected} bytes)"
        )
    if got > expected:
        raise FlowFileError(f"{path}: {got - expected} trailing bytes after payload")
    raw = np.frombuffer(data, dtype="<f4", count=expected // 4, offset=HEADER.size)
    return FlowSequence(raw.reshape(t, h, w, 2).astype(np.float64))


def read_labels(path: str | Path) -> np.ndarray:
    labels = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        token = line.strip()
        if token not in ("0", "1"):
            raise ValueError(f"{path}:{lineno}: expected 0 or 1, got {token!r}")
        labels.append(int(token))
    return np.asarray(labels, dtype=np.int64)


def write_labels(path: str | Path, labels) -> None:
    Path(path).write_text("".join(f"{int(x)}\n" for x in labels), encoding="utf-8")


@dataclass(frozen=True)
class ScaleSpec:
    """Region partition of a frame at scale factor ``s``.

    The 1x grid uses square regions of ``region_px`` pixels; an sx region
    groups ``s x s`` 1x regions. Right and bottom regions may be partial.
    """

    scale_factor: int
    region_px: int
    frame_w: int
    frame_h: int

    def __post_init__(self) -> None:
        if self.scale_factor < 1:
            raise ValueError(f"scale factor must be >= 1, got {self.scale_factor}")
        if self.region_px < 1:
            raise ValueError(f"region size must be >= 1, got {self.region_px}")
        if self.frame_w < 1 or self.frame_h < 1:
            raise ValueError(f"bad frame size {self.frame_w}x{self.frame_h}")

    @property
    def base_regions_w(self) -> int:
        return math.ceil(self.frame_w / self.region_px)

    @property
    def base_regions_h(self) -> int:
        return math.ceil(self.frame_h / self.region_px)

    @property
    def regions_w(self) -> int:
        return math.ceil(self.base_regions_w / self.scale_factor)

    @property
    def regions_h(self) -> int:
        return math.ceil(self.base_regions_h / self.scale_factor)

    @property
    def n_regions(self) -> int:
        return self.regions_w * self.regions_h

    @property
    def cell_px(self) -> int:
        return self.region_px * self.scale_factor

    def x_edges(self) -> np.ndarray:
        """Pixel boundaries of region columns, length ``regions_w + 1``."""
        return np.minimum(np.arange(self.regions_w + 1) * self.cell_px, self.frame_w)

    def y_edges(self) -> np.ndarray:
        return np.minimum(np.arange(self.regions_h + 1) * self.cell_px, self.frame_h)

    def region_index_map(self) -> np.ndarray:
        """``(H, W)`` array of row-major region ids for every pixel."""
        ry = np.arange(self.frame_h) // self.cell_px
        rx = np.arange(self.frame_w) // self.cell_px
        return ry[:, None] * self.regions_w + rx[None, :]

    def to_dict(self) -> dict:
        return {
            "scale_factor": self.scale_factor,
            "region_px": self.region_px,
            "frame_w": self.frame_w,
            "frame_h": self.frame_h,
        }


def build_scale_specs(frame_w: int, frame_h: int, shoulder_px: float, scale_factors) -> list[ScaleSpec]:
    if shoulder_px < 1:
        raise ValueError(f"shoulder_px must be >= 1, got {shoulder_px}")
    if shoulder_px > min(frame_w, frame_h):
        raise ValueError(f"shoulder_px {shoulder_px} exceeds frame size {frame_w}x{frame_h}")
    factors = list(scale_factors)
    if not factors:
        raise ValueError("need at least one scale factor")
    # nearest integer, halves go down
    side = math.ceil(shoulder_px - 0.5)
    return [ScaleSpec(int(s), side, frame_w, frame_h) for s in factors]


@dataclass
class VelocityGrid:
    spec: ScaleSpec
    frame_index: int
    cells: np.ndarray  # (regions_h, regions_w, 2)
    counts: np.ndarray  # (regions_h, regions_w)


def region_means(frames: np.ndarray, spec: ScaleSpec) -> np.ndarray:
    """Mean flow per region for one ``(H, W, 2)`` frame or a ``(T, H, W, 2)`` stack."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-3:-1] != (spec.frame_h, spec.frame_w):
        raise ValueError(
            f"frame is {frames.shape[-2]}x{frames.shape[-3]}, spec expects "
            f"{spec.frame_w}x{spec.frame_h}"
        )
    ye, xe = spec.y_edges(), spec.x_edges()
    sums = np.add.reduceat(frames, ye[:-1], axis=-3)
    sums = np.add.reduceat(sums, xe[:-1], axis=-2)
    counts = np.diff(ye)[:, None] * np.diff(xe)[None, :]
    return sums / counts[..., None]


def average_velocity_grid(frame: np.ndarray, spec: ScaleSpec, frame_index: int = 0) -> VelocityGrid:
    cells = region_means(frame, spec)
    counts = np.diff(spec.y_edges())[:, None] * np.diff(spec.x_edges())[None, :]
    return VelocityGrid(spec, frame_index, cells, counts)


def quantize_directions(vectors: np.ndarray, D: int, eps_static: float) -> np.ndarray:
    """Direction class of each 2-vector along the last axis; ``STATIC`` below ``eps_static``.

    Bins are ``2*pi/D`` sectors with bin 0 centred on +x; a vector exactly on a
    sector boundary goes to the lower-index bin.
    """
    if D < 2:
        raise ValueError(f"need at least 2 direction classes, got {D}")
    v = np.asarray(vectors, dtype=np.float64)
    u, w = v[..., 0], v[..., 1]
    t = np.arctan2(w, u) * (D / (2 * np.pi)) - 0.5
    k = np.ceil(t).astype(np.int64)
    # -pi/D exactly is the boundary between bin D-1 and bin 0
    k = np.where(k < 0, np.where(t == -1.0, 0, k + D), k) % D
    return np.where(np.hypot(u, w) < eps_static, STATIC, k)


def quantize_direction(v, D: int, eps_static: float) -> int:
    return int(quantize_directions(np.asarray(v, dtype=np.float64), D, eps_static))


@dataclass
class DirectionHistogram:
    bins: np.ndarray
    static_count: int
    total: int

    @property
    def moving(self) -> int:
        return self.total - self.static_count


def direction_histogram(vectors: np.ndarray, D: int, eps_static: float) -> DirectionHistogram:
    classes = quantize_directions(np.asarray(vectors).reshape(-1, 2), D, eps_static)
    moving = classes[classes != STATIC]
    bins = np.bincount(moving, minlength=D)
    return DirectionHistogram(bins, int(classes.size - moving.size), int(classes.size))
