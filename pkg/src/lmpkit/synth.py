"""Synthetic frames, flow fields and datasets with known ground truth."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import SpecError
from .flowfield import FlowField, Frame

KINDS = ("uniform-translation", "gaussian-blob", "diverging", "random-noise", "rotated-copy")


@dataclass(frozen=True)
class SynthSpec:
    """Description of a synthetic flow field.

    ``direction`` is in degrees (90 = up on screen). For ``rotated-copy``,
    ``base`` is the field to copy and ``direction`` the rotation applied to
    its vectors.
    """

    kind: str
    direction: float = 0.0
    magnitude: float = 1.0
    center: tuple[float, float] | None = None
    sigma: float = 5.0
    seed: int = 0
    base: "SynthSpec | None" = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown synth kind {self.kind!r}")
        if self.magnitude < 0:
            raise SpecError("magnitude must be >= 0")
        if self.kind == "gaussian-blob" and not self.sigma > 0:
            raise SpecError("sigma must be > 0 for a blob")
        if self.kind == "rotated-copy" and self.base is None:
            raise SpecError("rotated-copy needs a base spec")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base"] = self.base.to_dict() if self.base is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if d.get("base") is not None:
            d["base"] = cls.from_dict(d["base"])
        if d.get("center") is not None:
            d["center"] = tuple(d["center"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        return cls.from_dict(json.loads(text))


def unit_vector(direction_deg: float) -> tuple[float, float]:
    """(dx, dy) of unit length for an on-screen direction."""
    t = np.radians(direction_deg)
    return float(np.cos(t)), float(-np.sin(t))


def rotate_flow(flow: FlowField, degrees: float) -> FlowField:
    """Rotate every vector counter-clockwise on screen; positions are unchanged."""
    t = np.radians(degrees)
    c, s = np.cos(t), np.sin(t)
    u, v = flow.dx, -flow.dy
    return FlowField(np.stack([c * u - s * v, -(s * u + c * v)], axis=-1))


def snap_to_bin_centers(flow: FlowField, bins: int) -> FlowField:
    """Move every nonzero vector's direction to the center of its nearest bin."""
    width = 2 * np.pi / bins
    ang = np.arctan2(-flow.dy, flow.dx)
    snapped = (np.floor(ang / width) + 0.5) * width
    mag = flow.magnitude()
    return FlowField(np.stack([mag * np.cos(snapped), -mag * np.sin(snapped)], axis=-1))


def make_flow(spec: SynthSpec, width: int, height: int) -> FlowField:
    cx, cy = spec.center if spec.center is not None else ((width - 1) / 2.0, (height - 1) / 2.0)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    ux, uy = unit_vector(spec.direction)
    if spec.kind == "uniform-translation":
        vec = np.empty((height, width, 2))
        vec[..., 0] = spec.magnitude * ux
        vec[..., 1] = spec.magnitude * uy
    elif spec.kind == "gaussian-blob":
        g = spec.magnitude * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * spec.sigma**2))
        vec = np.stack([g * ux, g * uy], axis=-1)
    elif spec.kind == "diverging":
        rx, ry = xx - cx, yy - cy
        r = np.hypot(rx, ry)
        safe = np.where(r > 0, r, 1.0)
        vec = np.stack([spec.magnitude * rx / safe, spec.magnitude * ry / safe], axis=-1)
        vec[r == 0] = 0.0
    elif spec.kind == "random-noise":
        rng = np.random.default_rng(spec.seed)
        ang = rng.uniform(0.0, 2 * np.pi, size=(height, width))
        mag = rng.uniform(0.0, spec.magnitude, size=(height, width))
        vec = np.stack([mag * np.cos(ang), -mag * np.sin(ang)], axis=-1)
    else:  # rotated-copy
        return rotate_flow(make_flow(spec.base, width, height), spec.direction)
    return FlowField(vec)


def texture(width: int, height: int, seed: int, blur: float = 1.5) -> np.ndarray:
    """Band-limited noise in [0, 1]: blurred white noise, min-max stretched."""
    rng = np.random.default_rng(seed)
    img = gaussian_filter(rng.random((height, width)), blur, mode="reflect")
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo)


def make_frame_pair(
    shift: tuple[int, int], texture_seed: int = 0, width: int = 96, height: int = 80
) -> tuple[Frame, Frame, tuple[int, int]]:
    """Textured frame and its copy shifted by an integer ``(dx, dy)``.

    The second frame samples the first at ``p - shift`` with clamped edges,
    so the true flow from the first to the second is ``shift`` everywhere
    away from the borders.
    """
    sx, sy = shift
    if int(sx) != sx or int(sy) != sy:
        raise SpecError(f"frame pairs need integer shifts, got {shift}")
    sx, sy = int(sx), int(sy)
    a = texture(width, height, texture_seed)
    ys = np.clip(np.arange(height) - sy, 0, height - 1)
    xs = np.clip(np.arange(width) - sx, 0, width - 1)
    b = a[np.ix_(ys, xs)]
    return Frame(a), Frame(b), (sx, sy)


def warp_frame(frame: Frame, flow: FlowField) -> Frame:
    """Approximate next frame for a smooth displacement field.

    Backward-maps ``next(p) = frame(p - d(p))``, accurate to first order when
    the field varies slowly compared to its own magnitude.
    """
    h, w = frame.height, frame.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    map_x = xx - flow.dx.astype(np.float32)
    map_y = yy - flow.dy.astype(np.float32)
    out = cv2.remap(
        frame.pixels.astype(np.float32), map_x, map_y, cv2.INTER_CUBIC, borderMode=cv2.BORDER_REPLICATE
    )
    return Frame(np.clip(out, 0.0, 1.0).astype(np.float64))


def make_dataset(
    n_classes: int,
    per_class: int,
    dim: int,
    separation: float,
    seed: int = 0,
    n_subjects: int = 5,
    sigma: float = 1.0,
):
    """Gaussian class blobs whose centers are ``separation * sigma`` apart.

    With ``dim >= n_classes`` the centers are scaled basis vectors and all
    pairwise distances are equal; otherwise they sit on a regular polygon in
    the first two dimensions with adjacent centers that far apart. Subjects
    are assigned round-robin over the generated order.
    """
    from .classify import LabeledSample

    rng = np.random.default_rng(seed)
    dist = separation * sigma
    centers = np.zeros((n_classes, dim))
    if dim >= n_classes:
        centers[np.arange(n_classes), np.arange(n_classes)] = dist / np.sqrt(2.0)
    else:
        if dim < 2:
            raise SpecError("need dim >= 2 when dim < n_classes")
        radius = dist / (2 * np.sin(np.pi / n_classes))
        t = 2 * np.pi * np.arange(n_classes) / n_classes
        centers[:, 0] = radius * np.cos(t)
        centers[:, 1] = radius * np.sin(t)
    samples = []
    for i in range(n_classes * per_class):
        label = i % n_classes
        x = centers[label] + rng.normal(0.0, sigma, size=dim)
        samples.append(
            LabeledSample(features=x, label=label, subject=f"s{i % n_subjects:02d}", sequence=f"seq{i:04d}")
        )
    return samples


# --- synthetic expression corpus ------------------------------------------------

# class name -> (landmark index, motion direction in degrees) per moving spot
EXPRESSION_PATTERNS = {
    "smile": ((48, 135.0), (54, 45.0)),
    "brow_raise": ((19, 90.0), (24, 90.0)),
    "frown": ((21, 315.0), (22, 225.0)),
}


def expression_flow(geometry, pattern, magnitude: float, sigma: float, width: int, height: int) -> FlowField:
    """Sum of Gaussian blobs, one per ``(landmark, direction)`` spot."""
    total = FlowField.zeros(width, height)
    for idx, direction in pattern:
        cx, cy = geometry.landmarks[idx]
        spec = SynthSpec("gaussian-blob", direction=direction, magnitude=magnitude, center=(cx, cy), sigma=sigma)
        total = total + make_flow(spec, width, height)
    return total


def make_expression_sequence(
    geometry, pattern, n_frames: int, magnitude: float, sigma: float,
    width: int, height: int, texture_seed: int, noise: float = 0.0,
) -> list[Frame]:
    """Frames of a textured face whose spots move ``magnitude`` px per frame."""
    base = Frame(texture(width, height, texture_seed))
    rng = np.random.default_rng(texture_seed + 1)
    frames = []
    for t in range(n_frames):
        f = warp_frame(base, expression_flow(geometry, pattern, magnitude * t, sigma, width, height))
        if noise > 0:
            f = Frame(np.clip(f.pixels + rng.normal(0.0, noise, f.pixels.shape), 0.0, 1.0))
        frames.append(f)
    return frames


def make_expression_corpus(out_dir, per_class: int = 20, seed: int = 0, n_frames: int = 4,
                           scale: float = 2.0, n_subjects: int = 10):
    """Write a labeled corpus of synthetic expression sequences.

    Each class moves a different pair of facial spots (see
    ``EXPRESSION_PATTERNS``); magnitude, spread, direction and texture vary
    per sequence. Returns the path of the manifest CSV.
    """
    from pathlib import Path

    from .cli import ManifestEntry, write_manifest
    from .face import FaceGeometry, canonical_face, save_landmarks

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = canonical_face()
    geo = FaceGeometry(base.landmarks * scale)
    width, height = int(200 * scale), int(240 * scale)
    lm_path = out / "landmarks.txt"
    save_landmarks(geo, lm_path)
    rng = np.random.default_rng(seed)
    entries = []
    for n in range(per_class):
        for label, pattern in EXPRESSION_PATTERNS.items():
            seq = f"{label}_{n:03d}"
            jittered = tuple((idx, d + rng.uniform(-10, 10)) for idx, d in pattern)
            frames = make_expression_sequence(
                geo, jittered, n_frames,
                magnitude=rng.uniform(1.2, 2.5), sigma=rng.uniform(0.10, 0.16) * geo.inter_ocular,
                width=width, height=height, texture_seed=int(rng.integers(1 << 30)), noise=0.004,
            )
            seq_dir = out / seq
            seq_dir.mkdir(exist_ok=True)
            for t, f in enumerate(frames):
                cv2.imwrite(str(seq_dir / f"frame_{t:03d}.png"), f.to_uint8())
            entries.append(ManifestEntry(seq, seq_dir, lm_path, label, f"subj{len(entries) % n_subjects:02d}"))
    manifest = out / "manifest.csv"
    write_manifest(entries, manifest)
    return manifest
