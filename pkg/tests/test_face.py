import json

import numpy as np
import pytest

from lmpkit.config import preset
from lmpkit.errors import LandmarkFormatError, SpecError, ValidationError
from lmpkit.face import (
    HEATMAP_COLS,
    HEATMAP_ROWS,
    N_ROIS,
    FaceGeometry,
    RoiSpec,
    Similarity,
    align_by_eyes,
    block_centers,
    build_heat_map,
    build_heat_maps,
    build_rois,
    canonical_face,
    derive_points,
    eye_centers,
    load_landmarks,
    parse_landmarks,
    save_landmarks,
)
from lmpkit.flowfield import Frame
from lmpkit.synth import SynthSpec, make_flow, texture, warp_frame


def _similar(geo, scale=1.0, deg=0.0, t=(0.0, 0.0), about=None):
    c = np.asarray(about if about is not None else geo.center)
    th = np.radians(deg)
    R = scale * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    return (geo.landmarks - c) @ R.T + c + np.asarray(t)


def test_canonical_fixture():
    geo = canonical_face()
    assert geo.landmarks.shape == (68, 2)
    assert geo.inter_ocular == pytest.approx(60.0)
    assert geo.face_size == pytest.approx(144.0)


def test_landmark_parsing(tmp_path):
    geo = canonical_face()
    path = tmp_path / "lm.txt"
    save_landmarks(geo, path)
    np.testing.assert_allclose(load_landmarks(path).landmarks, geo.landmarks, atol=1e-6)
    pts = "version: 1\nn_points: 68\n{\n" + "".join(f"{x} {y}\n" for x, y in geo.landmarks) + "}\n"
    np.testing.assert_array_equal(parse_landmarks(pts), geo.landmarks)
    with pytest.raises(LandmarkFormatError):
        parse_landmarks("".join(f"{x} {y}\n" for x, y in geo.landmarks[:67]))
    with pytest.raises(LandmarkFormatError):
        parse_landmarks("1 2 3\n" * 68)
    with pytest.raises(ValidationError):
        FaceGeometry(geo.landmarks, frame_size=(100, 100))


def test_derived_point_arithmetic():
    lm = canonical_face().landmarks.copy()
    lm[10], lm[55] = (10, 90), (60, 70)
    lm[27], lm[33] = (50, 40), (50, 80)
    d = derive_points(lm)
    np.testing.assert_array_equal(d["Q"], [35, 80])
    e1, e2 = eye_centers(lm)
    assert e1[1] == pytest.approx(e2[1])  # fixture eyes are level
    np.testing.assert_allclose(d["A"], lm[17] + [0, -10], atol=1e-12)


def test_degenerate_eyes():
    lm = canonical_face().landmarks.copy()
    lm[36:48] = lm[36]
    with pytest.raises(ValidationError):
        FaceGeometry(lm)


def test_derived_points_rotate_with_face():
    geo = canonical_face()
    moved = FaceGeometry(_similar(geo, deg=10.0))
    th = np.radians(10.0)
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    for name, p in geo.derived.items():
        np.testing.assert_allclose(moved.derived[name], (p - geo.center) @ R.T + geo.center, atol=1e-6)


def test_default_partition():
    rois = build_rois(canonical_face())
    assert len(rois) == N_ROIS
    for k in range(1, N_ROIS + 1):
        poly = rois.shape(k)
        assert poly.is_valid and poly.area > 0
    assert rois.overlap_area(19, 18) > 0 and rois.overlap_area(22, 23) > 0


def test_partition_scales():
    geo = canonical_face()
    a = build_rois(geo)
    b = build_rois(FaceGeometry(geo.landmarks * 2))
    for k in range(1, N_ROIS + 1):
        np.testing.assert_allclose(b[k], 2 * a[k], atol=1e-9)


def test_roi_spec_errors():
    from importlib import resources

    d = json.loads(resources.files("lmpkit").joinpath("data").joinpath("default_rois.json").read_text())
    short = dict(d, regions={k: v for k, v in d["regions"].items() if k != "25"})
    with pytest.raises(SpecError):
        RoiSpec.from_dict(short)
    bad = dict(d, regions=dict(d["regions"], **{"1": [0, 1, "ZZ"]}))
    with pytest.raises(SpecError):
        build_rois(canonical_face(), RoiSpec.from_dict(bad))
    bad = dict(d, regions=dict(d["regions"], **{"1": [0, 1, 99]}))
    with pytest.raises(SpecError):
        build_rois(canonical_face(), RoiSpec.from_dict(bad))


# --- alignment -------------------------------------------------------------------


def _frames(n=1, seed=0):
    return [Frame(texture(200, 240, seed + i)) for i in range(n)]


def test_align_identity_and_idempotent():
    geo = canonical_face()
    frames = _frames(3)
    out, geos, sims = align_by_eyes(frames, [geo] * 3)
    for s in sims:
        np.testing.assert_allclose(s.matrix, [[1, 0, 0], [0, 1, 0]], atol=1e-6)
    out2, geos2, sims2 = align_by_eyes(out, geos)
    for a, b in zip(geos, geos2):
        np.testing.assert_allclose(a.landmarks, b.landmarks, atol=1e-6)


def test_align_recovers_rotation_and_scale():
    geo = canonical_face()
    rotated = FaceGeometry(_similar(geo, deg=5.0))
    scaled = FaceGeometry(_similar(geo, scale=1.1))
    _, geos, sims = align_by_eyes(_frames(3), [geo, rotated, scaled])
    assert sims[1].rotation_deg == pytest.approx(-5.0, abs=0.1)
    assert sims[2].scale == pytest.approx(1 / 1.1, abs=1e-3)
    for g in geos[1:]:
        for a, b in zip(eye_centers(g.landmarks), eye_centers(geo.landmarks)):
            np.testing.assert_allclose(a, b, atol=1e-6)


def test_align_requires_landmarks():
    with pytest.raises(ValidationError):
        align_by_eyes(_frames(2), [canonical_face()])
    with pytest.raises(ValidationError):
        align_by_eyes(_frames(2), [canonical_face(), None])


def test_similarity_from_pairs():
    s = Similarity(1.3, 20.0, 4.0, -2.0)
    src = [np.array([10.0, 5.0]), np.array([40.0, 12.0])]
    dst = [s.matrix[:, :2] @ p + s.matrix[:, 2] for p in src]
    back = Similarity.from_pairs(src, dst)
    np.testing.assert_allclose(back.matrix, s.matrix, atol=1e-9)


# --- heat maps -------------------------------------------------------------------


def _mouth_sequence(seed, moving=True):
    geo = canonical_face()
    base = Frame(texture(200, 240, seed))
    if not moving:
        return [base, base], geo, "smile"
    blob = SynthSpec("gaussian-blob", direction=135.0, magnitude=2.0, center=tuple(geo.landmarks[48]), sigma=8.0)
    return [base, warp_frame(base, make_flow(blob, 200, 240))], geo, "smile"


def _cell_of(geo, point):
    centers = block_centers(geo)
    d = np.linalg.norm(centers - point, axis=-1)
    return np.unravel_index(np.argmin(d), d.shape)


def test_heat_map_blob_and_mixing():
    cfg = preset("ck+")
    geo = canonical_face()
    hm = build_heat_map([_mouth_sequence(1), _mouth_sequence(2)], cfg)
    assert hm.values.shape == (HEATMAP_ROWS, HEATMAP_COLS)
    assert 0 <= hm.values.min() and hm.values.max() <= 1
    r, c = _cell_of(geo, geo.landmarks[48])
    assert hm.values[r, c] == 1.0
    assert hm.values[:5].max() == 0.0  # forehead rows stay still
    mixed = build_heat_map([_mouth_sequence(1), _mouth_sequence(3, moving=False)], cfg)
    assert mixed.values[r, c] == 0.5
    reordered = build_heat_map([_mouth_sequence(3, moving=False), _mouth_sequence(1)], cfg)
    np.testing.assert_array_equal(reordered.values, mixed.values)


def test_heat_map_zero_motion_and_export(tmp_path):
    cfg = preset("ck+")
    maps = build_heat_maps([_mouth_sequence(4, moving=False), _mouth_sequence(5, moving=False)], cfg)
    hm = maps["smile"]
    assert not hm.values.any()
    hm.to_png(tmp_path / "h.png")
    hm.to_csv(tmp_path / "h.csv")
    import cv2

    assert cv2.imread(str(tmp_path / "h.png"), cv2.IMREAD_GRAYSCALE).shape == (30, 20)
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 30
    with pytest.raises(ValidationError):
        build_heat_map([_mouth_sequence(1), (_mouth_sequence(2)[0], canonical_face(), "frown")], cfg)
