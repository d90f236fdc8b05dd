"""Filter parameters, JSON (de)serialization and per-dataset presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .errors import SpecError

ML_COUNT_MODES = ("occurrences", "layers")


@dataclass(frozen=True)
class LmpConfig:
    """All parameters of the local-motion-pattern filter.

    Field names double as the JSON keys. ``intensity_e`` is the DMH intensity
    threshold, ``density_m`` the exclusive upper bound on bins per main
    direction and ``variation_v`` the tolerated adjacent-bin step, expressed
    in tenths of the run maximum.
    """

    lambda_frac: float = 0.04
    overlap: float = 0.5
    rho: float = 0.75
    intensity_e: float = 100.0
    density_m: int = 4
    variation_v: float = 5.0
    beta: int = 6
    bins: int = 9
    weights: tuple[float, float, float] = (1.0, 10.0, 100.0)
    layer_step: float = 0.2
    mag_cap: float = 10.0
    min_bin_fraction: float = 0.10
    connectivity: int = 8
    # "occurrences": count (layer, sample) pairs per band; "layers": count layers only
    ml_count: str = "occurrences"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        problems = []
        if not 0.0 < self.lambda_frac <= 0.10:
            problems.append("lambda_frac must be in (0, 0.10]")
        if not 0.0 <= self.overlap < 1.0:
            problems.append("overlap must be in [0, 1)")
        if not 0.0 <= self.rho <= 1.0:
            problems.append("rho must be in [0, 1]")
        if not self.intensity_e > 0:
            problems.append("intensity_e must be > 0")
        if not 4 <= self.bins <= 36:
            problems.append("bins must be in 4..36")
        if not 1 <= self.density_m <= self.bins:
            problems.append("density_m must be in 1..bins")
        if not self.variation_v > 0:
            problems.append("variation_v must be > 0")
        if self.beta < 0:
            problems.append("beta must be >= 0")
        if len(self.weights) != 3 or not self.weights[0] < self.weights[1] < self.weights[2]:
            problems.append("weights must be three strictly increasing values")
        if not self.layer_step > 0 or not self.mag_cap > 0:
            problems.append("layer_step and mag_cap must be > 0")
        if not 0.0 <= self.min_bin_fraction < 1.0:
            problems.append("min_bin_fraction must be in [0, 1)")
        if self.connectivity != 8:
            problems.append("only 8-connectivity propagation is supported")
        if self.ml_count not in ML_COUNT_MODES:
            problems.append(f"ml_count must be one of {ML_COUNT_MODES}")
        if problems:
            raise SpecError("; ".join(problems))

    @property
    def n_layers(self) -> int:
        """Number of magnitude layers, including the n = 0 layer."""
        return int(self.mag_cap / self.layer_step + 1e-9) + 1

    def region_side(self, face_size: float) -> int:
        """Side in pixels of one motion region for a face of ``face_size`` px."""
        return max(2, int(round(self.lambda_frac * face_size)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LmpConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LmpConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise SpecError("config JSON must be an object")
        return cls.from_dict(d)

    def with_(self, **changes) -> "LmpConfig":
        return replace(self, **changes)


def load_config(path: str | Path) -> LmpConfig:
    return LmpConfig.from_json(Path(path).read_text())


# lambda (%), overlap, rho, E, M, V, beta, bins
_TABLE = {
    "casme2": (4, 0.5, 0.75, 100, 4, 5, 6, 9),
    "smic-hs": (3, 0.5, 0.75, 100, 3, 5, 6, 9),
    "smic-vis": (5, 0.5, 0.75, 100, 4, 5, 3, 9),
    "smic-nir": (4, 0.5, 0.75, 100, 3, 5, 3, 12),
    "ck+": (3, 0.5, 1.0, 100, 4, 5, 3, 12),
    "mmi": (3, 0.5, 1.0, 100, 4, 5, 6, 12),
    "casia-vl": (4, 0.5, 1.0, 100, 5, 5, 3, 6),
    "casia-ni": (5, 0.5, 0.75, 100, 5, 5, 6, 9),
}

PRESETS: dict[str, LmpConfig] = {
    name: LmpConfig(
        lambda_frac=lam / 100.0, overlap=ov, rho=rho, intensity_e=float(e),
        density_m=m, variation_v=float(v), beta=beta, bins=b,
    )
    for name, (lam, ov, rho, e, m, v, beta, b) in _TABLE.items()
}


def preset(name: str) -> LmpConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise SpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
