"""Local motion pattern (LMP) filter.

A square region around an epicenter is reduced to a direction histogram
weighted by how persistently each direction survives successive magnitude
layers. Regions whose histogram has a compact, smooth main direction are
locally coherent; coherence is then propagated ring by ring to overlapping
neighbours, gated by the Bhattacharyya overlap with the parent region.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import LmpConfig
from .errors import EmptyRegionError, GeometryError, InvalidInputError
from .flowfield import (
    FlowField,
    RegionHistogram,
    clip_bounds,
    direction_bins,
    region_bounds,
    sample_region,
)

# Absolute slack (in layer units) for magnitudes sitting exactly on a layer threshold.
_LAYER_EPS = 1e-9
_SHARE_EPS = 1e-12
_BHATT_EPS = 1e-9


def layer_index(magnitude: np.ndarray, cfg: LmpConfig) -> np.ndarray:
    """Index of the highest layer ``n = k * step`` a magnitude reaches."""
    k = np.floor(np.asarray(magnitude, dtype=np.float64) / cfg.layer_step + _LAYER_EPS)
    return np.clip(k.astype(np.int64), 0, cfg.n_layers - 1)


def band_index(magnitude: np.ndarray, cfg: LmpConfig) -> np.ndarray:
    """Magnitude band: 0 for [0, cap/3], 1 for (cap/3, 2cap/3], 2 above."""
    m = np.asarray(magnitude, dtype=np.float64)
    third = cfg.mag_cap / 3.0
    return np.where(m <= third, 0, np.where(m <= 2.0 * third, 1, 2)).astype(np.int64)


@dataclass(frozen=True)
class LayerBank:
    """Per-layer normalized direction shares after the minimum-share filter.

    ``shares[k, b]`` is bin ``b``'s share of the layer-``k`` magnitude mass
    (zero when filtered out); ``band_counts[p, k, b]`` counts the samples of
    layer ``k`` and bin ``b`` whose magnitude lies in band ``p``.
    """

    shares: np.ndarray
    band_counts: np.ndarray

    @property
    def survive(self) -> np.ndarray:
        return self.shares > 0

    @property
    def n_layers(self) -> int:
        return self.shares.shape[0]


def build_layers(h: RegionHistogram, cfg: LmpConfig) -> LayerBank:
    if len(h) == 0:
        raise InvalidInputError("cannot build layers from an empty histogram")
    if h.bins != cfg.bins:
        raise InvalidInputError(f"histogram has {h.bins} bins, config expects {cfg.bins}")
    n_layers, bins = cfg.n_layers, cfg.bins
    mag = np.minimum(h.magnitude, cfg.mag_cap)
    top = layer_index(mag, cfg)
    band = band_index(mag, cfg)

    # a sample reaching layer `top` belongs to layers 0..top: reverse cumsum
    mass = np.bincount(top * bins + h.bin_index, weights=mag, minlength=n_layers * bins)
    mass = np.cumsum(mass.reshape(n_layers, bins)[::-1], axis=0)[::-1]
    counts = np.bincount(
        (band * n_layers + top) * bins + h.bin_index, minlength=3 * n_layers * bins
    )
    counts = np.cumsum(counts.reshape(3, n_layers, bins)[:, ::-1], axis=1)[:, ::-1]

    total = mass.sum(axis=1, keepdims=True)
    shares = np.divide(mass, total, out=np.zeros_like(mass), where=total > 0)
    shares[shares < cfg.min_bin_fraction - _SHARE_EPS] = 0.0
    return LayerBank(shares=shares, band_counts=counts)


def cumulative_triple(bank: LayerBank, cfg: LmpConfig) -> np.ndarray:
    """The three band histograms, shape ``(3, B)``.

    Only layers where the bin survived the share filter contribute. In
    ``occurrences`` mode each contributing layer adds its number of samples
    in the band; in ``layers`` mode it adds one if there is any.
    """
    present = bank.band_counts * bank.survive[None, :, :]
    if cfg.ml_count == "layers":
        return (present > 0).sum(axis=1)
    return present.sum(axis=1)


def weighted_dmh(ml: np.ndarray, cfg: LmpConfig) -> np.ndarray:
    ml = np.asarray(ml, dtype=np.float64)
    w = np.asarray(cfg.weights, dtype=np.float64)
    return w @ ml


def _above_runs(above: np.ndarray) -> list[tuple[int, ...]]:
    """Maximal circular runs of True entries."""
    n = above.size
    if not above.any():
        return []
    if above.all():
        return [tuple(range(n))]
    start = int(np.argmin(above))  # a False slot, so no run crosses the scan origin
    runs, cur = [], []
    for step in range(1, n + 1):
        i = (start + step) % n
        if above[i]:
            cur.append(i)
        elif cur:
            runs.append(tuple(cur))
            cur = []
    if cur:
        runs.append(tuple(cur))
    return sorted(runs)


def coherent_runs(dmh: np.ndarray, cfg: LmpConfig) -> list[tuple[int, ...]]:
    """Main directions of a DMH that are intense, compact and smooth.

    Runs are listed in circular bin order starting at their first bin, so a
    run crossing the 0/360 seam looks like ``(8, 0)``.
    """
    dmh = np.asarray(dmh, dtype=np.float64)
    kept = []
    for run in _above_runs(dmh > cfg.intensity_e):
        if len(run) >= cfg.density_m:
            continue
        vals = dmh[list(run)]
        tol = cfg.variation_v / 10.0 * vals.max()
        if len(run) > 1 and np.any(np.abs(np.diff(vals)) >= tol):
            continue
        kept.append(run)
    return kept


def filter_dmh(dmh: np.ndarray, runs) -> np.ndarray:
    dmh = np.asarray(dmh, dtype=np.float64)
    out = np.zeros_like(dmh)
    for run in runs:
        idx = list(run)
        out[idx] = dmh[idx]
    return out


def bhattacharyya(a: np.ndarray, b: np.ndarray) -> float:
    """Overlap of two histograms after normalizing each to unit sum."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError("histograms differ in length")
    sa, sb = a.sum(), b.sum()
    if sa <= 0 or sb <= 0:
        return 0.0
    bc = float(np.sum(np.sqrt((a / sa) * (b / sb))))
    return min(max(bc, 0.0), 1.0)


def fdmh_from_histogram(h: RegionHistogram, cfg: LmpConfig) -> np.ndarray | None:
    """Filtered DMH of one region, or None when the region is incoherent."""
    if len(h) == 0:
        return None
    dmh = weighted_dmh(cumulative_triple(build_layers(h, cfg), cfg), cfg)
    runs = coherent_runs(dmh, cfg)
    if not runs:
        return None
    return filter_dmh(dmh, runs)


def analyze_region(
    flow: FlowField, center: tuple[float, float], cfg: LmpConfig, face_size: float
) -> np.ndarray | None:
    side = cfg.region_side(face_size)
    h = sample_region(flow, center, side, cfg.bins, cfg.mag_cap)
    return fdmh_from_histogram(h, cfg)


class RegionAnalyzer:
    """Memoized region analysis over one flow field.

    Direction bins and clamped magnitudes are computed once for the whole
    field, so analysing the many overlapping regions of several LMPs on the
    same frame only slices arrays.
    """

    def __init__(self, flow: FlowField, cfg: LmpConfig, side: int):
        self.flow, self.cfg, self.side = flow, cfg, side
        mag = flow.magnitude()
        self._moving = mag > 0
        self._mag = np.minimum(mag, cfg.mag_cap)
        self._bin = direction_bins(flow.dx, flow.dy, cfg.bins)
        self._memo: dict[tuple[int, int], np.ndarray | None] = {}

    def histogram(self, center) -> RegionHistogram:
        x0, y0, x1, y1 = clip_bounds(
            region_bounds(center, self.side), self.flow.width, self.flow.height
        )
        sel = self._moving[y0:y1, x0:x1]
        return RegionHistogram(
            bins=self.cfg.bins,
            bin_index=self._bin[y0:y1, x0:x1][sel],
            magnitude=self._mag[y0:y1, x0:x1][sel],
            pixel_count=sel.size,
        )

    def analyze(self, center) -> np.ndarray | None:
        """FDMH of the region at ``center``; None if incoherent or off-field."""
        key = region_bounds(center, self.side)[:2]
        if key not in self._memo:
            try:
                self._memo[key] = fdmh_from_histogram(self.histogram(center), self.cfg)
            except EmptyRegionError:
                self._memo[key] = None
        return self._memo[key]


def max_regions(beta: int, connectivity: int = 8) -> int:
    if beta < 0 or connectivity < 1:
        raise InvalidInputError("beta must be >= 0 and connectivity >= 1")
    if beta == 0:
        return 1
    return 1 + connectivity * beta * (beta + 1) // 2


def ring_cells(i: int) -> list[tuple[int, int]]:
    """Grid offsets ``(gx, gy)`` at Chebyshev distance ``i``, row-major order."""
    if i == 0:
        return [(0, 0)]
    return [
        (gx, gy)
        for gy in range(-i, i + 1)
        for gx in range(-i, i + 1)
        if max(abs(gx), abs(gy)) == i
    ]


@dataclass(frozen=True)
class AcceptedRegion:
    grid: tuple[int, int]
    center: tuple[float, float]
    parent: tuple[int, int] | None
    fdmh: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class LmpDistribution:
    """Summed FDMH of all regions coherently connected to the epicenter."""

    epicenter: tuple[float, float]
    distribution: np.ndarray
    count: int
    coherent: bool
    regions: tuple[AcceptedRegion, ...] = ()


def propagate(
    flow: FlowField,
    epicenter: tuple[float, float],
    cfg: LmpConfig,
    face_size: float,
    analyzer: RegionAnalyzer | None = None,
) -> LmpDistribution:
    """Grow an LMP from ``epicenter`` over ``cfg.beta`` rings of neighbours.

    A ring-``i`` region is evaluated only if one of its 8-neighbours on ring
    ``i-1`` was accepted; the nearest such neighbour (ties by row-major grid
    position) is its parent. It is accepted when it is locally coherent and
    its Bhattacharyya overlap with the parent's FDMH reaches ``cfg.rho``.
    """
    ex, ey = epicenter
    if not (0 <= ex < flow.width and 0 <= ey < flow.height):
        raise GeometryError(f"epicenter {epicenter} lies outside the {flow.width}x{flow.height} field")
    side = cfg.region_side(face_size)
    if analyzer is None:
        analyzer = RegionAnalyzer(flow, cfg, side)
    elif analyzer.side != side or analyzer.cfg != cfg or analyzer.flow is not flow:
        raise InvalidInputError("analyzer was built for a different flow/config/side")
    spacing = side * (1.0 - cfg.overlap)
    epicenter = (float(ex), float(ey))
    empty = np.zeros(cfg.bins)

    root = analyzer.analyze(epicenter)
    if root is None:
        return LmpDistribution(epicenter, empty, 0, False)
    accepted = [AcceptedRegion((0, 0), epicenter, None, root)]
    frontier = {(0, 0): root}

    for i in range(1, cfg.beta + 1):
        reached = {}
        for gx, gy in ring_cells(i):
            parents = [p for p in frontier if max(abs(p[0] - gx), abs(p[1] - gy)) <= 1]
            if not parents:
                continue
            parent = min(parents, key=lambda p: ((p[0] - gx) ** 2 + (p[1] - gy) ** 2, p[1], p[0]))
            center = (ex + spacing * gx, ey + spacing * gy)
            fdmh = analyzer.analyze(center)
            if fdmh is None:
                continue
            if bhattacharyya(fdmh, frontier[parent]) >= cfg.rho - _BHATT_EPS:
                reached[(gx, gy)] = fdmh
                accepted.append(AcceptedRegion((gx, gy), center, parent, fdmh))
        if not reached:
            break
        frontier = reached

    md = np.sum([r.fdmh for r in accepted], axis=0)
    return LmpDistribution(epicenter, md, len(accepted), True, tuple(accepted))
