"""Landmark-driven face geometry: derived points, ROI partition, eye alignment
and per-class motion heat maps."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import shapely

from .config import LmpConfig
from .errors import LandmarkFormatError, SpecError, ValidationError
from .flowfield import FlowField, Frame, compute_flow
from .lmp import RegionAnalyzer, propagate

N_LANDMARKS = 68
N_ROIS = 25
RIGHT_EYE = slice(36, 42)
LEFT_EYE = slice(42, 48)
# eyebrow anchors of the forehead points A..F
FOREHEAD_ANCHORS = {"A": 17, "B": 19, "C": 21, "D": 22, "E": 24, "F": 26}
FACE_SIZE_PER_IOD = 2.4
HEATMAP_COLS, HEATMAP_ROWS = 20, 30


def _data_path(name: str):
    return resources.files("lmpkit").joinpath("data").joinpath(name)


def eye_centers(landmarks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centers of the image-left and image-right eye."""
    return landmarks[RIGHT_EYE].mean(axis=0), landmarks[LEFT_EYE].mean(axis=0)


def derive_points(landmarks: np.ndarray) -> dict[str, np.ndarray]:
    """Forehead points A..F and the lower-cheek point Q.

    Each forehead point lies above its eyebrow anchor, perpendicular to the
    eye axis, at a quarter of the nose length (landmarks 27 to 33). Q is the
    midpoint of landmarks 10 and 55.
    """
    lm = np.asarray(landmarks, dtype=np.float64)
    e1, e2 = eye_centers(lm)
    axis = e2 - e1
    iod = np.linalg.norm(axis)
    if iod <= 1e-9:
        raise ValidationError("eye centers coincide")
    ux, uy = axis / iod
    up = np.array([uy, -ux])  # (0, -1) for a level face: up on screen
    offset = np.linalg.norm(lm[27] - lm[33]) / 4.0
    pts = {name: lm[idx] + offset * up for name, idx in FOREHEAD_ANCHORS.items()}
    pts["Q"] = (lm[10] + lm[55]) / 2.0
    return pts


@dataclass(frozen=True)
class FaceGeometry:
    landmarks: np.ndarray
    derived: dict[str, np.ndarray] = field(default_factory=dict, compare=False)
    frame_size: tuple[int, int] | None = None

    def __post_init__(self):
        lm = np.array(self.landmarks, dtype=np.float64)
        if lm.shape != (N_LANDMARKS, 2):
            raise ValidationError(f"expected {N_LANDMARKS} landmarks, got shape {lm.shape}")
        if not np.all(np.isfinite(lm)):
            raise ValidationError("landmarks contain non-finite coordinates")
        if self.frame_size is not None:
            w, h = self.frame_size
            if lm[:, 0].min() < 0 or lm[:, 1].min() < 0 or lm[:, 0].max() > w - 1 or lm[:, 1].max() > h - 1:
                raise ValidationError(f"landmarks fall outside the {w}x{h} frame")
        lm.setflags(write=False)
        object.__setattr__(self, "landmarks", lm)
        object.__setattr__(self, "derived", derive_points(lm))

    @property
    def inter_ocular(self) -> float:
        e1, e2 = eye_centers(self.landmarks)
        return float(np.linalg.norm(e2 - e1))

    @property
    def face_size(self) -> float:
        """Scale used for region sizes: 2.4 inter-ocular distances."""
        return FACE_SIZE_PER_IOD * self.inter_ocular

    @property
    def center(self) -> np.ndarray:
        return self.landmarks.mean(axis=0)

    def point(self, pid) -> np.ndarray:
        if isinstance(pid, (int, np.integer)) and not isinstance(pid, bool):
            if not 0 <= pid < N_LANDMARKS:
                raise SpecError(f"landmark index {pid} out of range")
            return self.landmarks[pid]
        if pid in self.derived:
            return self.derived[pid]
        raise SpecError(f"unknown point id {pid!r}")

    def all_points(self) -> np.ndarray:
        return np.vstack([self.landmarks, np.array(list(self.derived.values()))])

    def transformed(self, matrix: np.ndarray, frame_size=None) -> "FaceGeometry":
        m = np.asarray(matrix, dtype=np.float64)
        lm = self.landmarks @ m[:, :2].T + m[:, 2]
        return FaceGeometry(lm, frame_size=frame_size)


def parse_landmarks(text: str) -> np.ndarray:
    """Parse plain "x y" lines or the ibug .pts format."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if lines and lines[0].lower().startswith("version"):
        try:
            start = lines.index("{") + 1
            end = lines.index("}")
        except ValueError:
            raise LandmarkFormatError("pts file lacks braces") from None
        lines = lines[start:end]
    pts = []
    for ln in lines:
        parts = ln.replace(",", " ").split()
        if len(parts) != 2:
            raise LandmarkFormatError(f"malformed landmark line: {ln!r}")
        try:
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise LandmarkFormatError(f"malformed landmark line: {ln!r}") from None
    if len(pts) != N_LANDMARKS:
        raise LandmarkFormatError(f"expected {N_LANDMARKS} points, found {len(pts)}")
    return np.array(pts)


def load_landmarks(path: str | Path, frame_size: tuple[int, int] | None = None) -> FaceGeometry:
    return FaceGeometry(parse_landmarks(Path(path).read_text()), frame_size=frame_size)


def save_landmarks(geometry: FaceGeometry, path: str | Path) -> None:
    Path(path).write_text("".join(f"{x:.6f} {y:.6f}\n" for x, y in geometry.landmarks))


def canonical_face() -> FaceGeometry:
    """Synthetic frontal face shipped with the package (frame 200x240)."""
    return FaceGeometry(parse_landmarks(_data_path("canonical_face.txt").read_text()), frame_size=(200, 240))


# --- ROI partition -------------------------------------------------------------


@dataclass(frozen=True)
class RoiSpec:
    """Declarative partition: extra points as affine combinations, regions as
    ordered point-id lists."""

    points: dict
    regions: dict

    @classmethod
    def from_dict(cls, d: dict) -> "RoiSpec":
        if "regions" not in d:
            raise SpecError("ROI spec has no 'regions'")
        regions = {}
        for key, ids in d["regions"].items():
            try:
                rid = int(key)
            except ValueError:
                raise SpecError(f"region id {key!r} is not an integer") from None
            regions[rid] = list(ids)
        if sorted(regions) != list(range(1, N_ROIS + 1)):
            raise SpecError(f"ROI spec must define regions 1..{N_ROIS}, got {len(regions)}")
        for rid, ids in regions.items():
            if len(ids) < 3:
                raise SpecError(f"region {rid} has fewer than 3 vertices")
        return cls(points=dict(d.get("points", {})), regions=regions)

    @classmethod
    def from_json(cls, text: str) -> "RoiSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def default(cls) -> "RoiSpec":
        return cls.from_json(_data_path("default_rois.json").read_text())


def _resolve_spec_points(geometry: FaceGeometry, spec: RoiSpec) -> dict:
    pts = dict(geometry.derived)

    def get(pid):
        if isinstance(pid, str) and pid in pts:
            return pts[pid]
        return geometry.point(pid)

    for name, rule in spec.points.items():
        if not isinstance(rule, dict) or len(rule) != 1:
            raise SpecError(f"point {name!r} needs exactly one rule")
        (op, args), = rule.items()
        if op == "mid":
            a, b = args
            pts[name] = (get(a) + get(b)) / 2.0
        elif op == "lerp":
            a, b, t = args
            pts[name] = get(a) + float(t) * (get(b) - get(a))
        else:
            raise SpecError(f"unknown point rule {op!r}")
    return pts


@dataclass(frozen=True)
class RoiPartition:
    polygons: dict[int, np.ndarray]

    def __len__(self):
        return len(self.polygons)

    def __getitem__(self, rid: int) -> np.ndarray:
        return self.polygons[rid]

    def shape(self, rid: int) -> shapely.Polygon:
        return shapely.Polygon(self.polygons[rid])

    def overlap_area(self, a: int, b: int) -> float:
        return float(self.shape(a).intersection(self.shape(b)).area)


def build_rois(geometry: FaceGeometry, spec: RoiSpec | None = None) -> RoiPartition:
    spec = spec or RoiSpec.default()
    pts = _resolve_spec_points(geometry, spec)
    polys = {}
    for rid, ids in sorted(spec.regions.items()):
        verts = []
        for pid in ids:
            verts.append(pts[pid] if isinstance(pid, str) and pid in pts else geometry.point(pid))
        polys[rid] = np.array(verts, dtype=np.float64)
    return RoiPartition(polys)


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    if abs(a) < 1e-12:
        raise ValidationError("degenerate polygon has no centroid")
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


# --- alignment -------------------------------------------------------------------


@dataclass(frozen=True)
class Similarity:
    """``p' = scale * R(rotation) p + (tx, ty)`` in image coordinates."""

    scale: float
    rotation_deg: float
    tx: float
    ty: float

    @property
    def matrix(self) -> np.ndarray:
        t = np.radians(self.rotation_deg)
        c, s = self.scale * np.cos(t), self.scale * np.sin(t)
        return np.array([[c, -s, self.tx], [s, c, self.ty]])

    @classmethod
    def from_pairs(cls, src: Sequence[np.ndarray], dst: Sequence[np.ndarray]) -> "Similarity":
        p1, p2 = (complex(*p) for p in src)
        q1, q2 = (complex(*q) for q in dst)
        if abs(p2 - p1) < 1e-12:
            raise ValidationError("source points coincide")
        a = (q2 - q1) / (p2 - p1)
        b = q1 - a * p1
        return cls(abs(a), float(np.degrees(np.angle(a))), b.real, b.imag)


def align_by_eyes(
    frames: Sequence[Frame], landmarks: Sequence[FaceGeometry]
) -> tuple[list[Frame], list[FaceGeometry], list[Similarity]]:
    """Warp each frame so its eye centers land on those of the first frame."""
    if not frames:
        raise ValidationError("no frames to align")
    if len(landmarks) != len(frames) or any(g is None for g in landmarks):
        raise ValidationError("every frame needs landmarks")
    ref = eye_centers(landmarks[0].landmarks)
    out_frames, out_geo, transforms = [], [], []
    for frame, geo in zip(frames, landmarks):
        sim = Similarity.from_pairs(eye_centers(geo.landmarks), ref)
        m = sim.matrix
        if np.allclose(m, [[1, 0, 0], [0, 1, 0]], atol=1e-9):
            warped = frame
        else:
            img = cv2.warpAffine(
                frame.pixels.astype(np.float32), m.astype(np.float32), (frame.width, frame.height),
                flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE,
            )
            warped = Frame(np.clip(img, 0.0, 1.0).astype(np.float64))
        out_frames.append(warped)
        out_geo.append(geo.transformed(m))
        transforms.append(sim)
    return out_frames, out_geo, transforms


# --- heat maps -------------------------------------------------------------------


@dataclass(frozen=True)
class HeatMap:
    """Coherent-motion frequency over a 20-column by 30-row face grid."""

    values: np.ndarray  # shape (rows, cols)
    label: str

    def to_png(self, path: str | Path) -> None:
        cv2.imwrite(str(path), np.rint(self.values * 255).astype(np.uint8))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


def block_centers(geometry: FaceGeometry) -> np.ndarray:
    """Centers of the 30x20 block grid spanning the face bounding box,
    shape ``(rows, cols, 2)``."""
    pts = geometry.all_points()
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    cx = x0 + (np.arange(HEATMAP_COLS) + 0.5) * (x1 - x0) / HEATMAP_COLS
    cy = y0 + (np.arange(HEATMAP_ROWS) + 0.5) * (y1 - y0) / HEATMAP_ROWS
    gx, gy = np.meshgrid(cx, cy)
    return np.stack([gx, gy], axis=-1)


def coherence_mask(flow: FlowField, geometry: FaceGeometry, cfg: LmpConfig) -> np.ndarray:
    """Boolean block grid: True where an LMP centered on the block is coherent."""
    centers = block_centers(geometry)
    analyzer = RegionAnalyzer(flow, cfg, cfg.region_side(geometry.face_size))
    mask = np.zeros((HEATMAP_ROWS, HEATMAP_COLS), dtype=bool)
    for r in range(HEATMAP_ROWS):
        for c in range(HEATMAP_COLS):
            x, y = centers[r, c]
            if 0 <= x < flow.width and 0 <= y < flow.height:
                mask[r, c] = propagate(flow, (x, y), cfg, geometry.face_size, analyzer).coherent
    return mask


def sequence_mask(flows: Sequence[FlowField], geometry: FaceGeometry, cfg: LmpConfig) -> np.ndarray:
    """Any-frame coherence over a sequence of flows."""
    mask = np.zeros((HEATMAP_ROWS, HEATMAP_COLS), dtype=bool)
    for flow in flows:
        mask |= coherence_mask(flow, geometry, cfg)
    return mask


def sequence_flows(frames: Sequence[Frame], landmarks) -> tuple[list[FlowField], FaceGeometry]:
    """Flows between consecutive (eye-aligned) frames, plus the reference geometry.

    ``landmarks`` is either one geometry for the whole sequence or one per frame.
    """
    if isinstance(landmarks, FaceGeometry):
        ref = landmarks
    else:
        frames, geos, _ = align_by_eyes(frames, list(landmarks))
        ref = geos[0]
    return [compute_flow(a, b) for a, b in zip(frames[:-1], frames[1:])], ref


def heat_map_from_masks(masks: Sequence[np.ndarray], label: str) -> HeatMap:
    if not len(masks):
        raise ValidationError("no sequence masks to merge")
    return HeatMap(np.mean(np.asarray(masks, dtype=np.float64), axis=0), label)


def build_heat_map(sequences, cfg: LmpConfig) -> HeatMap:
    """Heat map of one class from ``(frames, landmarks, label)`` triples."""
    if not sequences:
        raise ValidationError("no sequences")
    labels = {str(s[2]) for s in sequences}
    if len(labels) != 1:
        raise ValidationError(f"sequences mix classes {sorted(labels)}")
    masks = []
    for frames, landmarks, _ in sequences:
        flows, ref = sequence_flows(frames, landmarks)
        masks.append(sequence_mask(flows, ref, cfg))
    return heat_map_from_masks(masks, labels.pop())


def build_heat_maps(sequences, cfg: LmpConfig) -> dict[str, HeatMap]:
    by_class: dict[str, list] = {}
    for seq in sequences:
        by_class.setdefault(str(seq[2]), []).append(seq)
    return {label: build_heat_map(seqs, cfg) for label, seqs in sorted(by_class.items())}
