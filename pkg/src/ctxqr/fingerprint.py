"""Wi-Fi fingerprints, signal-space comparison metrics and k-NN localization.

A fingerprint is the set of access points heard in one scan, each with its
received signal strength. Three comparisons are offered: Euclidean distance
over RSSI values, Spearman correlation over RSSI ranks, and Jaccard overlap
of the visible AP sets.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime
from os import PathLike
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .errors import (
    DegenerateRanks,
    EmptyFingerprint,
    EmptyRadioMap,
    InsufficientOverlap,
    InvalidMac,
    InvalidObservation,
    InvalidRadioMap,
)

RSSI_MIN = -120
RSSI_MAX = 0
DEFAULT_FLOOR = -100
DEFAULT_K = 4

_MAC_SEPARATED = re.compile(r"^[0-9A-Fa-f]{2}([:-])[0-9A-Fa-f]{2}(\1[0-9A-Fa-f]{2}){4}$")
_MAC_BARE = re.compile(r"^[0-9A-Fa-f]{12}$")
_MAC_CANONICAL = re.compile(r"^[0-9A-F]{2}(-[0-9A-F]{2}){5}$")


def canonical_mac(text: str) -> str:
    """Return ``text`` as uppercase, hyphen-separated MAC (``AA-BB-CC-DD-EE-FF``).

    Accepts colon- or hyphen-separated octets (one separator style per
    address) and bare 12-digit hex.
    """
    if not isinstance(text, str):
        raise InvalidMac(f"MAC address must be text, got {type(text).__name__}")
    raw = text.strip()
    if _MAC_SEPARATED.match(raw):
        octets = re.split(r"[:-]", raw)
    elif _MAC_BARE.match(raw):
        octets = [raw[i:i + 2] for i in range(0, 12, 2)]
    else:
        raise InvalidMac(f"not a 6-octet MAC address: {text!r}")
    return "-".join(o.upper() for o in octets)


def is_canonical_mac(text: str) -> bool:
    return bool(_MAC_CANONICAL.match(text))


@dataclass(frozen=True)
class ApObservation:
    """One access point heard in a scan."""

    bssid: str
    rssi: int
    ssid: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "bssid", canonical_mac(self.bssid))
        if isinstance(self.rssi, bool) or not isinstance(self.rssi, int):
            raise InvalidObservation(f"RSSI must be an integer dBm value, got {self.rssi!r}")
        if not RSSI_MIN <= self.rssi <= RSSI_MAX:
            raise InvalidObservation(f"RSSI {self.rssi} outside [{RSSI_MIN}, {RSSI_MAX}] dBm")
        if self.ssid is not None and not isinstance(self.ssid, str):
            raise InvalidObservation(f"SSID must be text, got {self.ssid!r}")


def _order_key(obs: ApObservation) -> tuple[int, str]:
    return (-obs.rssi, obs.bssid)


@dataclass(frozen=True)
class Fingerprint:
    """The APs visible from one place at one moment, at most one entry per BSSID.

    Observations are kept ordered by descending RSSI, then BSSID, so two
    fingerprints with the same content compare and serialize identically.
    ``captured_at`` is metadata and does not take part in equality.
    """

    observations: tuple[ApObservation, ...] = ()
    captured_at: datetime | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        obs = tuple(sorted(self.observations, key=_order_key))
        seen: set[str] = set()
        for o in obs:
            if o.bssid in seen:
                raise InvalidObservation(f"duplicate BSSID {o.bssid} in fingerprint")
            seen.add(o.bssid)
        object.__setattr__(self, "observations", obs)

    @classmethod
    def from_rssi(cls, rssi: Mapping[str, int], captured_at: datetime | None = None) -> Fingerprint:
        """Build from a ``{bssid: rssi}`` mapping."""
        return cls(tuple(ApObservation(b, r) for b, r in rssi.items()), captured_at)

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self) -> Iterator[ApObservation]:
        return iter(self.observations)

    def __contains__(self, bssid: object) -> bool:
        if not isinstance(bssid, str):
            return False
        try:
            return canonical_mac(bssid) in self.rssi_map()
        except InvalidMac:
            return False

    @property
    def bssids(self) -> frozenset[str]:
        return frozenset(o.bssid for o in self.observations)

    def rssi_map(self) -> dict[str, int]:
        return {o.bssid: o.rssi for o in self.observations}

    def get(self, bssid: str) -> ApObservation | None:
        key = canonical_mac(bssid)
        for o in self.observations:
            if o.bssid == key:
                return o
        return None

    def restricted_to(self, bssids: Iterable[str]) -> Fingerprint:
        keep = set(bssids)
        return Fingerprint(tuple(o for o in self.observations if o.bssid in keep), self.captured_at)

    def strongest(self, n: int) -> Fingerprint:
        return Fingerprint(self.observations[:n], self.captured_at)


def normalize_fingerprint(raw: Iterable[ApObservation], captured_at: datetime | None = None) -> Fingerprint:
    """Collapse duplicate BSSIDs (keeping the strongest reading) into a Fingerprint."""
    best: dict[str, ApObservation] = {}
    for obs in raw:
        held = best.get(obs.bssid)
        if held is None or obs.rssi > held.rssi:
            best[obs.bssid] = obs
    if not best:
        raise EmptyFingerprint("cannot build a fingerprint from zero observations")
    return Fingerprint(tuple(best.values()), captured_at)


def euclidean_distance(a: Fingerprint, b: Fingerprint, floor: float = DEFAULT_FLOOR) -> float:
    """Signal-space Euclidean distance over the union of both AP sets.

    An AP heard in only one fingerprint is compared against ``floor`` dBm on
    the other side.
    """
    if not len(a) and not len(b):
        raise EmptyFingerprint("both fingerprints are empty")
    ra, rb = a.rssi_map(), b.rssi_map()
    total = 0.0
    for bssid in sorted(ra.keys() | rb.keys()):
        diff = float(ra.get(bssid, floor)) - float(rb.get(bssid, floor))
        total += diff * diff
    return math.sqrt(total)


@dataclass(frozen=True)
class RankVector:
    """Per-BSSID rank of signal strength; rank 1 is the strongest AP."""

    ranks: Mapping[str, float]

    def __len__(self) -> int:
        return len(self.ranks)

    def __getitem__(self, bssid: str) -> float:
        return self.ranks[bssid]


def rank_values(values: Mapping[str, float]) -> RankVector:
    """Rank arbitrary per-BSSID signal values, largest first, ties averaged.

    Works on any monotone rescaling of RSSI (linear power, calibrated
    scores) since only the order of the values matters.
    """
    if not values:
        raise EmptyFingerprint("cannot rank an empty set of values")
    items = sorted(values.items(), key=lambda kv: (-kv[1], kv[0]))
    ranks: dict[str, float] = {}
    i = 0
    while i < len(items):
        j = i
        while j + 1 < len(items) and items[j + 1][1] == items[i][1]:
            j += 1
        # positions i..j (0-based) span ranks i+1..j+1
        shared = (i + j + 2) / 2.0
        for bssid, _ in items[i:j + 1]:
            ranks[bssid] = shared
        i = j + 1
    return RankVector(ranks)


def rank_transform(fp: Fingerprint) -> RankVector:
    """Replace RSSI values by their rank, strongest first; ties share the mean rank."""
    if not len(fp):
        raise EmptyFingerprint("cannot rank an empty fingerprint")
    return rank_values(fp.rssi_map())


def rank_correlation(r: Sequence[float], r_prime: Sequence[float]) -> float:
    """Pearson correlation of two aligned rank sequences.

    This is the Spearman coefficient once both sequences hold ranks.
    """
    n = len(r)
    if n != len(r_prime):
        raise ValueError("rank sequences must have equal length")
    if n < 2:
        raise InsufficientOverlap(f"need at least 2 paired ranks, got {n}")
    mean = sum(r) / n
    mean_prime = sum(r_prime) / n
    num = 0.0
    ss = 0.0
    ss_prime = 0.0
    for x, y in zip(r, r_prime):
        dx = x - mean
        dy = y - mean_prime
        num += dx * dy
        ss += dx * dx
        ss_prime += dy * dy
    if ss == 0.0 or ss_prime == 0.0:
        raise DegenerateRanks("rank vector has zero variance (all values tied)")
    # one sqrt of the product: exact whenever the deviations are half-integers
    value = num / math.sqrt(ss * ss_prime)
    return max(-1.0, min(1.0, value))


def spearman_correlation(a: Fingerprint, b: Fingerprint) -> float:
    """Spearman rank correlation over the APs both fingerprints share.

    Both fingerprints are cut down to the shared BSSIDs and re-ranked there.
    """
    shared = sorted(a.bssids & b.bssids)
    if len(shared) < 2:
        raise InsufficientOverlap(f"fingerprints share {len(shared)} AP(s), need at least 2")
    ra = rank_transform(a.restricted_to(shared))
    rb = rank_transform(b.restricted_to(shared))
    return rank_correlation([ra[s] for s in shared], [rb[s] for s in shared])


def visibility_overlap(a: Fingerprint, b: Fingerprint) -> float:
    """Jaccard index of the two visible-AP sets."""
    if not len(a) or not len(b):
        raise EmptyFingerprint("visibility overlap needs two non-empty fingerprints")
    sa, sb = a.bssids, b.bssids
    return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True)
class RadioMapEntry:
    fingerprint: Fingerprint
    latitude: float
    longitude: float
    label: str | None = None

    def __post_init__(self) -> None:
        for name, value, bound in (("latitude", self.latitude, 90.0), ("longitude", self.longitude, 180.0)):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidRadioMap(f"{name} must be a finite number, got {value!r}")
            if not -bound <= value <= bound:
                raise InvalidRadioMap(f"{name} {value} outside [-{bound:g}, {bound:g}]")


@dataclass(frozen=True)
class KnnConfig:
    k: int = DEFAULT_K
    missing_rssi_floor: float = DEFAULT_FLOOR

    def __post_init__(self) -> None:
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if self.missing_rssi_floor > -90:
            raise ValueError(f"missing_rssi_floor must be <= -90 dBm, got {self.missing_rssi_floor}")


@dataclass(frozen=True)
class Neighbor:
    entry: RadioMapEntry
    distance: float


@dataclass(frozen=True)
class PositionEstimate:
    latitude: float
    longitude: float
    neighbors: tuple[Neighbor, ...]


def knn_locate(
    query: Fingerprint,
    radio_map: Sequence[RadioMapEntry],
    cfg: KnnConfig = KnnConfig(),
) -> PositionEstimate:
    """Average the coordinates of the ``cfg.k`` map entries nearest in signal space.

    Equal distances keep map order.
    """
    if not radio_map:
        raise EmptyRadioMap("radio map has no entries")
    if not len(query):
        raise EmptyFingerprint("query fingerprint is empty")
    scored = [
        (euclidean_distance(query, entry.fingerprint, cfg.missing_rssi_floor), idx)
        for idx, entry in enumerate(radio_map)
    ]
    scored.sort()
    nearest = [Neighbor(radio_map[idx], dist) for dist, idx in scored[: cfg.k]]
    lat = sum(n.entry.latitude for n in nearest) / len(nearest)
    lon = sum(n.entry.longitude for n in nearest) / len(nearest)
    return PositionEstimate(lat, lon, tuple(nearest))


# -- JSON forms ---------------------------------------------------------------

def observation_to_json(obs: ApObservation) -> dict[str, Any]:
    out: dict[str, Any] = {"bssid": obs.bssid, "rssi": obs.rssi}
    if obs.ssid is not None:
        out["ssid"] = obs.ssid
    return out


def observation_from_json(obj: Any) -> ApObservation:
    if not isinstance(obj, dict):
        raise InvalidObservation(f"AP entry must be an object, got {obj!r}")
    try:
        bssid = obj["bssid"]
        rssi = obj["rssi"]
    except KeyError as exc:
        raise InvalidObservation(f"AP entry missing field {exc.args[0]!r}") from None
    return ApObservation(bssid, rssi, obj.get("ssid"))


def fingerprint_to_json(fp: Fingerprint) -> list[dict[str, Any]]:
    return [observation_to_json(o) for o in fp]


def fingerprint_from_json(aps: Any, *, strict: bool = True) -> Fingerprint:
    """Read an ``aps`` array; with ``strict=False`` duplicate BSSIDs are collapsed."""
    if not isinstance(aps, list):
        raise InvalidObservation("'aps' must be an array")
    obs = [observation_from_json(a) for a in aps]
    if strict:
        return Fingerprint(tuple(obs))
    return normalize_fingerprint(obs) if obs else Fingerprint()


def radio_map_to_json(entries: Sequence[RadioMapEntry]) -> list[dict[str, Any]]:
    out = []
    for e in entries:
        item: dict[str, Any] = {"lat": e.latitude, "lon": e.longitude}
        if e.label is not None:
            item["label"] = e.label
        item["aps"] = fingerprint_to_json(e.fingerprint)
        out.append(item)
    return out


def radio_map_from_json(data: Any) -> list[RadioMapEntry]:
    if not isinstance(data, list):
        raise InvalidRadioMap("radio map must be a JSON array")
    entries = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise InvalidRadioMap(f"entry {i}: expected an object")
        try:
            lat, lon, aps = item["lat"], item["lon"], item["aps"]
        except KeyError as exc:
            raise InvalidRadioMap(f"entry {i}: missing field {exc.args[0]!r}") from None
        label = item.get("label")
        if label is not None and not isinstance(label, str):
            raise InvalidRadioMap(f"entry {i}: label must be text")
        try:
            fp = fingerprint_from_json(aps)
        except (InvalidObservation, InvalidMac) as exc:
            raise InvalidRadioMap(f"entry {i}: {exc}") from None
        try:
            entries.append(RadioMapEntry(fp, lat, lon, label))
        except InvalidRadioMap as exc:
            raise InvalidRadioMap(f"entry {i}: {exc}") from None
    return entries


def load_radio_map(path: str | PathLike[str]) -> list[RadioMapEntry]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidRadioMap(f"{path}: not valid JSON ({exc})") from None
    return radio_map_from_json(data)


def save_radio_map(entries: Sequence[RadioMapEntry], path: str | PathLike[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(radio_map_to_json(entries), fh, indent=1)
        fh.write("\n")
