import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmpkit.config import LmpConfig, preset
from lmpkit.errors import GeometryError, InvalidInputError
from lmpkit.flowfield import FlowField, RegionHistogram
from lmpkit.lmp import (
    RegionAnalyzer,
    analyze_region,
    bhattacharyya,
    build_layers,
    coherent_runs,
    cumulative_triple,
    filter_dmh,
    max_regions,
    propagate,
    ring_cells,
    weighted_dmh,
)
from lmpkit.synth import SynthSpec, make_flow
from oracles import brute_bhattacharyya, brute_coherent_runs, brute_layers

LAYERS = LmpConfig(ml_count="layers")
FACE = 240.0


def hist(pairs, bins=9):
    b, m = zip(*pairs)
    return RegionHistogram(bins, np.array(b), np.array(m, dtype=float))


# --- layering ----------------------------------------------------------------------


def test_single_direction_layers():
    bank = build_layers(hist([(2, 1.0)] * 100), LAYERS)
    assert bank.n_layers == 51
    np.testing.assert_array_equal(bank.shares[:6, 2], 1.0)
    assert not bank.shares[6:].any()


def test_min_share_boundary():
    kept = build_layers(hist([(2, 1.0)] * 90 + [(5, 1.0)] * 10), LAYERS)
    assert kept.shares[0, 5] == pytest.approx(0.10)
    dropped = build_layers(hist([(2, 1.0)] * 90 + [(5, 1.0)] * 9), LAYERS)
    assert dropped.shares[0, 5] == 0.0


def test_layers_by_hand():
    bank = build_layers(hist([(0, 0.1), (1, 5.0), (2, 9.9)]), LAYERS)
    members = bank.band_counts.sum(axis=0) > 0
    assert members[0, :3].tolist() == [True, True, True]
    assert members[25, :3].tolist() == [False, True, True]  # n = 5.0
    assert members[49, :3].tolist() == [False, False, True]  # n = 9.8
    # bin 0 carries 0.1 / 15 of the layer-0 mass, under the 10% floor
    assert bank.survive[0, :3].tolist() == [False, True, True]


def test_triple_layer_counts():
    ml = cumulative_triple(build_layers(hist([(2, 1.0)] * 100), LAYERS), LAYERS)
    assert ml[:, 2].tolist() == [6, 0, 0]
    ml = cumulative_triple(build_layers(hist([(0, 9.0)] * 7), LAYERS), LAYERS)
    assert ml[:, 0].tolist() == [0, 0, 46]


def test_triple_occurrence_counts():
    cfg = LmpConfig()
    ml = cumulative_triple(build_layers(hist([(2, 1.0)] * 100), cfg), cfg)
    assert ml[:, 2].tolist() == [600, 0, 0]


def test_empty_histogram_rejected():
    with pytest.raises(InvalidInputError):
        build_layers(RegionHistogram(9, np.array([], dtype=int), np.array([])), LAYERS)
    with pytest.raises(InvalidInputError):
        build_layers(hist([(0, 1.0)], bins=12), LAYERS)


def test_magnitudes_clamped_to_cap():
    a = cumulative_triple(build_layers(hist([(3, 50.0)] * 4), LAYERS), LAYERS)
    b = cumulative_triple(build_layers(hist([(3, 10.0)] * 4), LAYERS), LAYERS)
    np.testing.assert_array_equal(a, b)
    assert a[2, 3] == 51


samples = st.lists(st.tuples(st.integers(0, 8), st.floats(0.0, 12.0)), min_size=1, max_size=60)


@settings(max_examples=150, deadline=None)
@given(samples, st.sampled_from(["occurrences", "layers"]))
def test_layering_oracle_property(pairs, mode):
    cfg = LmpConfig(ml_count=mode)
    h = hist(pairs)
    np.testing.assert_array_equal(cumulative_triple(build_layers(h, cfg), cfg), brute_layers(h.bin_index, h.magnitude, cfg))


@settings(max_examples=100, deadline=None)
@given(samples)
def test_layer_mode_dmh_bound(pairs):
    dmh = weighted_dmh(cumulative_triple(build_layers(hist(pairs), LAYERS), LAYERS), LAYERS)
    assert dmh.max() <= LAYERS.n_layers * sum(LAYERS.weights)
    assert dmh.min() >= 0


@settings(max_examples=100, deadline=None)
@given(samples)
def test_surviving_shares_respect_threshold(pairs):
    bank = build_layers(hist(pairs), LAYERS)
    nz = bank.shares[bank.shares > 0]
    assert np.all(nz >= 0.1 - 1e-12)


# --- DMH and runs ------------------------------------------------------------------


def test_weighted_dmh():
    ml = np.zeros((3, 9))
    ml[:, 2] = [3, 1, 0]
    ml[2, 0] = 46
    dmh = weighted_dmh(ml, LAYERS)
    assert dmh[2] == 13 and dmh[0] == 4600
    assert not weighted_dmh(np.zeros((3, 9)), LAYERS).any()


def test_runs_examples():
    cfg = LmpConfig(intensity_e=200, density_m=3, variation_v=9)
    dmh = np.zeros(9)
    dmh[[2, 3]] = 300
    assert coherent_runs(dmh, cfg) == [(2, 3)]
    wrap = np.zeros(9)
    wrap[[8, 0]] = 300
    assert coherent_runs(wrap, cfg) == [(8, 0)]
    long = np.zeros(9)
    long[2:6] = 300
    assert coherent_runs(long, cfg) == []


def test_runs_smoothness():
    cfg = LmpConfig(intensity_e=100, density_m=4, variation_v=5)
    assert coherent_runs(np.array([0, 1000, 600, 0, 0, 0]), cfg) == [(1, 2)]
    assert coherent_runs(np.array([0, 1000, 400, 0, 0, 0]), cfg) == []  # step 600 >= 0.5 * 1000
    assert coherent_runs(np.array([0, 1000, 500, 0, 0, 0]), cfg) == []


def test_all_bins_above():
    cfg = LmpConfig(bins=9, density_m=9)
    assert coherent_runs(np.full(9, 500.0), cfg) == []
    assert coherent_runs(np.full(9, 500.0), cfg.with_(density_m=9, intensity_e=1)) == []


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=4, max_size=12), st.integers(1, 6), st.floats(0.5, 10))
def test_runs_property_oracle(values, s, v):
    cfg = LmpConfig(bins=len(values), density_m=min(s, len(values)), variation_v=v)
    dmh = np.array(values, dtype=float)
    runs = coherent_runs(dmh, cfg)
    assert sorted(runs) == sorted(brute_coherent_runs(values, cfg.intensity_e, cfg.density_m, v))
    support = [i for r in runs for i in r]
    assert len(support) == len(set(support))
    fd = filter_dmh(dmh, runs)
    assert np.all((fd == 0) | (fd > cfg.intensity_e))
    # runs are maximal, so no two are circularly adjacent
    n = len(values)
    for r in runs:
        assert (r[0] - 1) % n not in support or len(r) == n
        assert (r[-1] + 1) % n not in support or len(r) == n


def test_filter_dmh_union():
    dmh = np.arange(9, dtype=float) * 100
    fd = filter_dmh(dmh, [(1, 2), (5,)])
    assert fd.tolist() == [0, 100, 200, 0, 0, 500, 0, 0, 0]
    assert not filter_dmh(dmh, []).any()


# --- Bhattacharyya -----------------------------------------------------------------


def test_bhattacharyya_cases():
    assert bhattacharyya([0.5, 0.5], [0.25, 0.75]) == pytest.approx(np.sqrt(0.125) + np.sqrt(0.375), abs=1e-12)
    assert bhattacharyya([0, 0], [1, 1]) == 0.0
    with pytest.raises(InvalidInputError):
        bhattacharyya([1, 2], [1, 2, 3])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e4), min_size=9, max_size=9), st.lists(st.floats(0, 1e4), min_size=9, max_size=9))
def test_bhattacharyya_oracle(a, b):
    got = bhattacharyya(a, b)
    assert got == pytest.approx(min(brute_bhattacharyya(a, b), 1.0), abs=1e-12)
    assert got == bhattacharyya(b, a)
    assert 0.0 <= got <= 1.0


# --- regions and propagation -------------------------------------------------------


def test_analyze_region_cases():
    cfg = preset("casme2")
    right = make_flow(SynthSpec("uniform-translation", direction=50.0, magnitude=1.0), 64, 64)
    fd = analyze_region(right, (32, 32), cfg, FACE)
    assert np.flatnonzero(fd).tolist() == [1]  # 50 deg falls in [40, 80)
    assert analyze_region(FlowField.zeros(64, 64), (32, 32), cfg, FACE) is None


def test_noise_regions_mostly_incoherent():
    cfg = preset("casme2")
    coherent = sum(
        analyze_region(make_flow(SynthSpec("random-noise", magnitude=1.0, seed=s), 48, 48), (24, 24), cfg, FACE) is not None
        for s in range(100)
    )
    assert coherent <= 5


def test_max_regions_values():
    assert [max_regions(b) for b in (0, 1, 6)] == [1, 9, 169]
    assert max_regions(2, 4) == 13
    with pytest.raises(InvalidInputError):
        max_regions(-1)


def test_ring_cells():
    for i in range(4):
        cells = ring_cells(i)
        assert len(cells) == (8 * i if i else 1)
        assert all(max(abs(x), abs(y)) == i for x, y in cells)


def test_propagate_uniform_beta_one_and_zero():
    cfg = preset("casme2").with_(beta=1)
    flow = make_flow(SynthSpec("uniform-translation", direction=200.0, magnitude=1.0), 80, 80)
    lmp = propagate(flow, (40, 40), cfg, FACE)
    assert lmp.count == 9 and lmp.coherent
    np.testing.assert_array_equal(lmp.distribution, 9 * lmp.regions[0].fdmh)
    zero = propagate(flow, (40, 40), cfg.with_(beta=0), FACE)
    assert zero.count == 1
    np.testing.assert_array_equal(zero.distribution, lmp.regions[0].fdmh)


def test_propagate_incoherent_and_errors():
    cfg = preset("casme2")
    out = propagate(FlowField.zeros(40, 40), (20, 20), cfg, FACE)
    assert not out.coherent and out.count == 0 and not out.distribution.any()
    with pytest.raises(GeometryError):
        propagate(FlowField.zeros(40, 40), (40, 5), cfg, FACE)


def _blob_with_floor(seed=0):
    blob = make_flow(SynthSpec("gaussian-blob", direction=120.0, magnitude=3.0, center=(64, 64), sigma=6.0), 128, 128)
    return blob + make_flow(SynthSpec("random-noise", magnitude=0.05, seed=seed), 128, 128)


def test_localized_blob_stays_local():
    cfg = preset("casme2")
    lmp = propagate(_blob_with_floor(), (64, 64), cfg, FACE)
    assert lmp.coherent
    assert 1 <= lmp.count < max_regions(cfg.beta)
    spacing = cfg.region_side(FACE) * (1 - cfg.overlap)
    assert max(max(abs(g[0]), abs(g[1])) for g in (r.grid for r in lmp.regions)) * spacing < 40


def test_propagation_structure_recomputed():
    cfg = preset("casme2")
    flow = _blob_with_floor(3)
    lmp = propagate(flow, (64, 64), cfg, FACE)
    analyzer = RegionAnalyzer(flow, cfg, cfg.region_side(FACE))
    grids = {r.grid: r for r in lmp.regions}
    np.testing.assert_array_equal(lmp.distribution, np.sum([r.fdmh for r in lmp.regions], axis=0))
    assert lmp.count == len(grids) <= max_regions(cfg.beta)
    for r in lmp.regions:
        np.testing.assert_array_equal(r.fdmh, analyze_region(flow, r.center, cfg, FACE))
        if r.parent is None:
            assert r.grid == (0, 0)
            continue
        ring = max(abs(r.grid[0]), abs(r.grid[1]))
        parent = grids[r.parent]
        assert max(abs(parent.grid[0]), abs(parent.grid[1])) == ring - 1
        assert max(abs(parent.grid[0] - r.grid[0]), abs(parent.grid[1] - r.grid[1])) == 1
        assert bhattacharyya(r.fdmh, parent.fdmh) >= cfg.rho - 1e-9
    assert analyzer.analyze((64, 64)) is not None


def test_rho_one_still_propagates():
    cfg = preset("ck+")
    flow = make_flow(SynthSpec("uniform-translation", direction=10.0, magnitude=2.0), 96, 96)
    assert propagate(flow, (48, 48), cfg, FACE).count == max_regions(cfg.beta)


def test_analyzer_mismatch_rejected():
    cfg = preset("casme2")
    flow = FlowField.zeros(40, 40)
    with pytest.raises(InvalidInputError):
        propagate(flow, (20, 20), cfg, FACE, RegionAnalyzer(flow, cfg, 3))
