"""Dense optical flow, the Middlebury .flo format and direction-binned sampling.

Angle convention: image y grows downward and directions are measured
counter-clockwise from +x with y negated, so a vector pointing up on screen
has direction 90 degrees.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import EmptyRegionError, FlowFormatError, InvalidInputError, ValidationError

FLO_MAGIC = b"PIEH"
MIN_FRAME_SIDE = 16
DEFAULT_MAGNITUDE_CAP = 10.0


@dataclass(frozen=True)
class Frame:
    """Grayscale frame with intensities in [0, 1], indexed ``pixels[y, x]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValidationError(f"frame must be 2-D, got shape {px.shape}")
        h, w = px.shape
        if h < MIN_FRAME_SIDE or w < MIN_FRAME_SIDE:
            raise ValidationError(f"frame {w}x{h} is smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("frame intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.pixels * 255.0).astype(np.uint8)

    @classmethod
    def from_uint8(cls, img: np.ndarray) -> "Frame":
        return cls(np.asarray(img, dtype=np.float64) / 255.0)


def load_frame(path: str | Path) -> Frame:
    """Read an 8-bit grayscale PNG or PGM file."""
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise FileNotFoundError(f"cannot read frame {path}")
    return Frame.from_uint8(img)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement ``vectors[y, x] = (dx, dy)`` in pixels/frame."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise ValidationError(f"flow must have shape (H, W, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("flow contains non-finite components")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def dx(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def dy(self) -> np.ndarray:
        return self.vectors[..., 1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx, self.dy)

    def __add__(self, other: "FlowField") -> "FlowField":
        if self.vectors.shape != other.vectors.shape:
            raise InvalidInputError("flow fields differ in shape")
        return FlowField(self.vectors + other.vectors)

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width, 2)))


@dataclass(frozen=True)
class FlowParams:
    """Pyramid/polynomial settings for the Farneback estimator."""

    levels: int = 3
    scale: float = 0.5
    window: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def __post_init__(self):
        if self.levels < 1 or self.window < 3 or self.iterations < 1:
            raise InvalidInputError("levels, iterations must be >= 1 and window >= 3")
        if not 0 < self.scale < 1:
            raise InvalidInputError("pyramid scale must lie in (0, 1)")
        if self.poly_n not in (5, 7) or not self.poly_sigma > 0:
            raise InvalidInputError("poly_n must be 5 or 7 and poly_sigma > 0")


def compute_flow(prev: Frame, nxt: Frame, params: FlowParams = FlowParams()) -> FlowField:
    """Dense two-frame Farneback flow from ``prev`` to ``nxt``.

    Frames are replicate-padded before estimation so that every output pixel
    sees a full polynomial window; the padding is cropped from the result.
    """
    if (prev.width, prev.height) != (nxt.width, nxt.height):
        raise InvalidInputError(
            f"frame size mismatch: {prev.width}x{prev.height} vs {nxt.width}x{nxt.height}"
        )
    pad = max(params.window, 2 * params.poly_n) * 2
    a = cv2.copyMakeBorder(prev.to_uint8(), pad, pad, pad, pad, cv2.BORDER_REPLICATE)
    b = cv2.copyMakeBorder(nxt.to_uint8(), pad, pad, pad, pad, cv2.BORDER_REPLICATE)
    flow = cv2.calcOpticalFlowFarneback(
        a, b, None, params.scale, params.levels, params.window,
        params.iterations, params.poly_n, params.poly_sigma, 0,
    )
    return FlowField(flow[pad:-pad, pad:-pad])


def write_flo(flow: FlowField) -> bytes:
    """Serialize to Middlebury .flo (components stored as float32)."""
    header = FLO_MAGIC + struct.pack("<ii", flow.width, flow.height)
    return header + flow.vectors.astype("<f4").tobytes()


def read_flo(data: bytes) -> FlowField:
    if len(data) < 12 or data[:4] != FLO_MAGIC:
        raise FlowFormatError("missing PIEH magic")
    width, height = struct.unpack("<ii", data[4:12])
    if width <= 0 or height <= 0:
        raise FlowFormatError(f"invalid dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(data) != expected:
        raise FlowFormatError(f"payload is {len(data)} bytes, expected {expected}")
    vec = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width, 2)
    try:
        return FlowField(vec)
    except ValidationError as exc:
        raise FlowFormatError(str(exc)) from exc


def directions_deg(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Direction in [0, 360) with 'up on screen' at 90 degrees."""
    ang = np.degrees(np.arctan2(-np.asarray(dy), np.asarray(dx)))
    ang = np.mod(ang, 360.0)
    # mod can return exactly 360.0 for tiny negative angles
    return np.where(ang >= 360.0, 0.0, ang)


def direction_bins(dx: np.ndarray, dy: np.ndarray, bins: int) -> np.ndarray:
    width = 360.0 / bins
    idx = np.floor(directions_deg(dx, dy) / width).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


@dataclass(frozen=True)
class RegionHistogram:
    """Samples ``(bin, magnitude)`` of one square region; zero-motion pixels omitted."""

    bins: int
    bin_index: np.ndarray
    magnitude: np.ndarray
    pixel_count: int = field(default=0, compare=False)

    def __post_init__(self):
        b = np.asarray(self.bin_index, dtype=np.int64)
        m = np.asarray(self.magnitude, dtype=np.float64)
        if b.shape != m.shape or b.ndim != 1:
            raise ValidationError("bin_index and magnitude must be equal-length 1-D arrays")
        if b.size and (b.min() < 0 or b.max() >= self.bins):
            raise ValidationError("bin index out of range")
        if m.size and m.min() < 0:
            raise ValidationError("negative magnitude")
        object.__setattr__(self, "bin_index", b)
        object.__setattr__(self, "magnitude", m)

    def __len__(self) -> int:
        return int(self.bin_index.size)


def region_bounds(center: tuple[float, float], side: int) -> tuple[int, int, int, int]:
    """Pixel bounds ``(x0, y0, x1, y1)`` (end-exclusive) of a square region."""
    cx, cy = center
    x0 = int(np.floor(cx - side / 2.0 + 0.5))
    y0 = int(np.floor(cy - side / 2.0 + 0.5))
    return x0, y0, x0 + side, y0 + side


def clip_bounds(bounds, width: int, height: int):
    x0, y0, x1, y1 = bounds
    cx0, cy0, cx1, cy1 = max(x0, 0), max(y0, 0), min(x1, width), min(y1, height)
    if cx0 >= cx1 or cy0 >= cy1:
        raise EmptyRegionError(f"region {bounds} does not intersect the {width}x{height} field")
    return cx0, cy0, cx1, cy1


def sample_region(
    flow: FlowField,
    center: tuple[float, float],
    side: int,
    bins: int,
    magnitude_cap: float = DEFAULT_MAGNITUDE_CAP,
) -> RegionHistogram:
    if bins < 4:
        raise InvalidInputError("at least 4 direction bins are required")
    if side < 1:
        raise InvalidInputError("region side must be >= 1 pixel")
    x0, y0, x1, y1 = clip_bounds(region_bounds(center, side), flow.width, flow.height)
    v = flow.vectors[y0:y1, x0:x1].reshape(-1, 2)
    mag = np.hypot(v[:, 0], v[:, 1])
    moving = mag > 0
    return RegionHistogram(
        bins=bins,
        bin_index=direction_bins(v[moving, 0], v[moving, 1], bins),
        magnitude=np.minimum(mag[moving], magnitude_cap),
        pixel_count=int(mag.size),
    )
