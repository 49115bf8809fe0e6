"""Synthetic radio field for exercising fingerprinting without Wi-Fi hardware.

Each AP follows a log-distance path-loss law,
``rssi = P0 - 10 * n * log10(max(d, 1)) + N(0, sigma)``, and is heard at
distance ``d`` with probability ``p(d) = clamp(1 - (d / max_range) ** shape, 0, 1)``
(``max_range=None`` means always heard).

Randomness is keyed on ``(seed, position, realization)``: scanning the same
spot twice under the same config yields the same fingerprint. Coordinates
are planar meters; radio-map entries reuse latitude for y and longitude
for x.
"""

from __future__ import annotations

import json
import math
import random
import statistics
from dataclasses import asdict, dataclass, field
from os import PathLike
from typing import Any, Sequence

from .errors import EmptyFingerprint, EmptyRadioMap, OutOfBounds
from .fingerprint import (
    DEFAULT_FLOOR,
    RSSI_MAX,
    RSSI_MIN,
    ApObservation,
    Fingerprint,
    KnnConfig,
    RadioMapEntry,
    canonical_mac,
    knn_locate,
)


@dataclass(frozen=True)
class ApSite:
    bssid: str
    x: float
    y: float
    tx_power_dbm: float = -30.0
    path_loss_exponent: float = 2.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "bssid", canonical_mac(self.bssid))
        if not 1.5 <= self.path_loss_exponent <= 6.0:
            raise ValueError(f"path loss exponent {self.path_loss_exponent} outside [1.5, 6]")
        if not -50.0 <= self.tx_power_dbm <= -20.0:
            raise ValueError(f"reference power {self.tx_power_dbm} dBm outside [-50, -20]")


def grid_sites(width: float, height: float, per_side: int = 3, tx_power_dbm: float = -30.0,
               path_loss_exponent: float = 2.5) -> list[ApSite]:
    """``per_side``² APs spread evenly over the area, inset half a cell from the edges."""
    sites = []
    for j in range(per_side):
        for i in range(per_side):
            x = width * (i + 0.5) / per_side
            y = height * (j + 0.5) / per_side
            n = j * per_side + i
            sites.append(ApSite(f"02-00-00-00-{n >> 8:02X}-{n & 0xFF:02X}", x, y,
                                tx_power_dbm, path_loss_exponent))
    return sites


@dataclass(frozen=True)
class SimConfig:
    width: float = 45.0
    height: float = 45.0
    sites: tuple[ApSite, ...] = field(default_factory=lambda: tuple(grid_sites(45.0, 45.0)))
    grid_spacing: float = 5.0
    sigma: float = 2.0
    max_range: float | None = 80.0
    shape: float = 4.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "sites", tuple(self.sites))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("area width and height must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.max_range is not None and self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if self.shape <= 0:
            raise ValueError("shape must be positive")

    def to_json(self) -> dict[str, Any]:
        out = asdict(self)
        out["sites"] = [asdict(s) for s in self.sites]
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> SimConfig:
        data = dict(data)
        if "sites" in data:
            data["sites"] = tuple(ApSite(**s) for s in data["sites"])
        elif "width" in data or "height" in data:
            data["sites"] = tuple(grid_sites(data.get("width", 45.0), data.get("height", 45.0)))
        return cls(**data)


def load_sim_config(path: str | PathLike[str]) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return SimConfig.from_json(json.load(fh))


def detection_probability(d: float, max_range: float | None, shape: float) -> float:
    """Chance an AP at distance ``d`` shows up in one scan; never increases with ``d``."""
    if max_range is None:
        return 1.0
    ratio = max(d, 0.0) / max_range
    if ratio >= 1.0:
        return 0.0
    return min(1.0, max(0.0, 1.0 - ratio ** shape))


def mean_rssi(site: ApSite, d: float) -> float:
    return site.tx_power_dbm - 10.0 * site.path_loss_exponent * math.log10(max(d, 1.0))


def _rng(cfg: SimConfig, x: float, y: float, realization: int) -> random.Random:
    return random.Random(f"ctxqr-sim:{cfg.seed}:{x!r}:{y!r}:{realization}")


def simulate_scan(position: tuple[float, float], cfg: SimConfig, realization: int = 0) -> Fingerprint:
    """One synthetic scan at ``position``; may be empty if no AP is heard.

    Readings below -120 dBm are dropped as undetectable; readings above
    0 dBm are clipped to 0.
    """
    x, y = float(position[0]), float(position[1])
    if not (0.0 <= x <= cfg.width and 0.0 <= y <= cfg.height):
        raise OutOfBounds(f"position ({x}, {y}) outside the {cfg.width} x {cfg.height} m area")
    rng = _rng(cfg, x, y, realization)
    observations = []
    for site in cfg.sites:
        d = math.hypot(x - site.x, y - site.y)
        # both draws happen for every site so outcomes never shift between sites
        heard = rng.random() < detection_probability(d, cfg.max_range, cfg.shape)
        noise = rng.gauss(0.0, cfg.sigma) if cfg.sigma > 0 else 0.0
        if not heard:
            continue
        rssi = round(mean_rssi(site, d) + noise)
        if rssi < RSSI_MIN:
            continue
        observations.append(ApObservation(site.bssid, min(rssi, RSSI_MAX)))
    return Fingerprint(tuple(observations))


def grid_points(cfg: SimConfig) -> list[tuple[float, float]]:
    if cfg.grid_spacing <= 0:
        raise ValueError("grid spacing must be positive")
    nx = int(math.floor(cfg.width / cfg.grid_spacing + 1e-9)) + 1
    ny = int(math.floor(cfg.height / cfg.grid_spacing + 1e-9)) + 1
    if nx * ny < 1:
        raise ValueError("grid has no points")
    return [(i * cfg.grid_spacing, j * cfg.grid_spacing) for j in range(ny) for i in range(nx)]


def generate_radio_map(cfg: SimConfig) -> list[RadioMapEntry]:
    """One entry per grid point; latitude holds y and longitude holds x, in meters."""
    return [
        RadioMapEntry(simulate_scan((x, y), cfg), y, x, f"grid-{x:g}-{y:g}")
        for x, y in grid_points(cfg)
    ]


@dataclass(frozen=True)
class AccuracyReport:
    mean_err: float
    median_err: float
    p95_err: float
    n_queries: int
    n_located: int
    k: int

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _percentile(sorted_values: Sequence[float], q: float) -> float:
    # linear interpolation between closest ranks
    pos = (len(sorted_values) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_values) - 1)
    return sorted_values[lo] + (sorted_values[hi] - sorted_values[lo]) * (pos - lo)


def query_positions(cfg: SimConfig, n_queries: int) -> list[tuple[float, float]]:
    rng = random.Random(f"ctxqr-queries:{cfg.seed}")
    return [(rng.uniform(0.0, cfg.width), rng.uniform(0.0, cfg.height)) for _ in range(n_queries)]


def eval_accuracy(
    radio_map: Sequence[RadioMapEntry],
    n_queries: int,
    cfg: SimConfig,
    k: int = 4,
    floor: float = DEFAULT_FLOOR,
    positions: Sequence[tuple[float, float]] | None = None,
) -> AccuracyReport:
    """Localization error statistics, in meters, over simulated query scans.

    Queries are drawn uniformly over the area unless ``positions`` is given.
    Queries that hear no AP are skipped and reported through ``n_located``.
    """
    if not radio_map:
        raise EmptyRadioMap("radio map has no entries")
    if positions is None:
        positions = query_positions(cfg, n_queries)
    knn = KnnConfig(k, floor)
    errors = []
    for x, y in positions:
        scan = simulate_scan((x, y), cfg)
        try:
            est = knn_locate(scan, radio_map, knn)
        except EmptyFingerprint:
            continue
        errors.append(math.hypot(est.longitude - x, est.latitude - y))
    if not errors:
        raise EmptyFingerprint("no query heard any access point")
    errors.sort()
    return AccuracyReport(
        mean_err=statistics.fmean(errors),
        median_err=statistics.median(errors),
        p95_err=_percentile(errors, 0.95),
        n_queries=len(positions),
        n_located=len(errors),
        k=k,
    )
