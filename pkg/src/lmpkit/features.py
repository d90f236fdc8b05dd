"""Per-ROI motion distributions, their temporal accumulation (GMD) and
optional geometric shape features."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import shapely

from .config import LmpConfig
from .errors import GeometryError, ValidationError
from .face import (
    N_ROIS,
    FaceGeometry,
    RoiPartition,
    RoiSpec,
    build_rois,
    eye_centers,
    polygon_area,
    polygon_centroid,
    sequence_flows,
)
from .flowfield import FlowField
from .lmp import RegionAnalyzer, propagate

GEO_PER_ROI = 3


def roi_motion(
    flow: FlowField,
    roi: np.ndarray,
    cfg: LmpConfig,
    face_size: float,
    analyzer: RegionAnalyzer | None = None,
) -> np.ndarray:
    """LMP distribution seeded at the ROI centroid, restricted to regions
    whose centers lie inside the ROI."""
    roi = np.asarray(roi, dtype=np.float64)
    if polygon_area(roi) <= 1e-9:
        raise GeometryError("ROI polygon has zero area")
    cx, cy = polygon_centroid(roi)
    lmp = propagate(flow, (cx, cy), cfg, face_size, analyzer)
    out = np.zeros(cfg.bins)
    if not lmp.coherent:
        return out
    poly = shapely.Polygon(roi)
    centers = np.array([r.center for r in lmp.regions])
    inside = shapely.intersects_xy(poly, centers[:, 0], centers[:, 1])
    for region, keep in zip(lmp.regions, inside):
        if keep:
            out += region.fdmh
    return out


def frame_distributions(
    flow: FlowField, rois: RoiPartition, cfg: LmpConfig, face_size: float
) -> np.ndarray:
    """``(25, B)`` per-ROI distributions for one flow field."""
    analyzer = RegionAnalyzer(flow, cfg, cfg.region_side(face_size))
    return np.stack([roi_motion(flow, rois[k], cfg, face_size, analyzer) for k in sorted(rois.polygons)])


@dataclass(frozen=True)
class GmdVector:
    """Global motion distribution: per-ROI sums over time, concatenated
    ROI-major (all bins of ROI 1, then ROI 2, ...)."""

    values: np.ndarray
    bins: int
    frames: int
    sequence_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_ROIS * self.bins,):
            raise ValidationError(f"GMD must have {N_ROIS * self.bins} values, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0:
            raise ValidationError("GMD values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    def roi(self, k: int) -> np.ndarray:
        """Accumulated distribution of ROI ``k`` (1-based)."""
        return self.values[(k - 1) * self.bins : k * self.bins]


def accumulate(per_frame: Iterable[np.ndarray], sequence_id: str = "") -> GmdVector:
    frames = [np.asarray(f, dtype=np.float64) for f in per_frame]
    if not frames:
        raise ValidationError("no frames to accumulate")
    shape = frames[0].shape
    if len(shape) != 2 or shape[0] != N_ROIS:
        raise ValidationError(f"per-frame distributions must have shape ({N_ROIS}, B), got {shape}")
    if any(f.shape != shape for f in frames):
        raise ValidationError("per-frame distributions differ in shape")
    total = np.sum(frames, axis=0)
    return GmdVector(total.reshape(-1), bins=shape[1], frames=len(frames), sequence_id=sequence_id)


def geo_features(apex: FaceGeometry, rois: RoiPartition) -> np.ndarray:
    """Shape descriptor of the ROIs at the apex frame, 3 values per ROI.

    Centroid offsets from the landmark mean are expressed along and across
    the eye axis in inter-ocular units; areas are divided by the squared face
    size. The result is invariant to rotation, scale and translation of the
    landmark set.
    """
    e1, e2 = eye_centers(apex.landmarks)
    iod = apex.inter_ocular
    u = (e2 - e1) / iod
    n = np.array([-u[1], u[0]])
    face_area = apex.face_size**2
    out = []
    for k in sorted(rois.polygons):
        poly = rois[k]
        d = polygon_centroid(poly) - apex.center
        out.extend([d @ u / iod, d @ n / iod, polygon_area(poly) / face_area])
    return np.array(out)


def fuse(gmd: GmdVector, geo: np.ndarray) -> np.ndarray:
    geo = np.asarray(geo, dtype=np.float64)
    if geo.shape != (N_ROIS * GEO_PER_ROI,):
        raise ValidationError(f"geometric vector must have {N_ROIS * GEO_PER_ROI} values")
    return np.concatenate([gmd.values, geo])


def extract_sequence(
    frames,
    landmarks,
    cfg: LmpConfig,
    sequence_id: str = "",
    spec: RoiSpec | None = None,
    with_geo: bool = False,
) -> np.ndarray:
    """Feature vector of one activation sequence (caller trims onset..apex).

    ``landmarks`` is a single geometry or one per frame; with per-frame
    landmarks the frames are eye-aligned first and the last frame's
    geometry serves as the apex shape.
    """
    flows, ref = sequence_flows(frames, landmarks)
    gmd = gmd_from_flows(flows, ref, cfg, sequence_id, spec)
    if not with_geo:
        return gmd.values
    apex = landmarks if isinstance(landmarks, FaceGeometry) else landmarks[-1]
    return fuse(gmd, geo_features(apex, build_rois(apex, spec)))


def gmd_from_flows(
    flows: Sequence[FlowField],
    geometry: FaceGeometry,
    cfg: LmpConfig,
    sequence_id: str = "",
    spec: RoiSpec | None = None,
) -> GmdVector:
    if not flows:
        raise ValidationError("a sequence needs at least two frames")
    rois = build_rois(geometry, spec)
    return accumulate((frame_distributions(f, rois, cfg, geometry.face_size) for f in flows), sequence_id)


# --- CSV contract: id, label, subject, f0..fN -------------------------------------


@dataclass(frozen=True)
class FeatureRow:
    sequence: str
    label: str
    subject: str
    values: np.ndarray


def write_features_csv(rows: Sequence[FeatureRow], path: str | Path) -> None:
    if not rows:
        raise ValidationError("no feature rows to write")
    dim = len(rows[0].values)
    if any(len(r.values) != dim for r in rows):
        raise ValidationError("feature rows differ in length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "subject"] + [f"f{i}" for i in range(dim)])
        for r in rows:
            w.writerow([r.sequence, r.label, r.subject] + [repr(float(v)) for v in r.values])


def read_features_csv(path: str | Path) -> list[FeatureRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["id", "label", "subject"]:
            raise ValidationError(f"{path}: expected header id,label,subject,f0..")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                values = np.array([float(v) for v in rec[3:]])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric feature") from None
            rows.append(FeatureRow(rec[0], rec[1], rec[2], values))
    if not rows:
        raise ValidationError(f"{path}: no feature rows")
    return rows
