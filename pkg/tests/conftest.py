from __future__ import annotations

import random
import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from ctxqr.fingerprint import ApObservation, Fingerprint  # noqa: E402


def mac(n: int) -> str:
    return "-".join(f"{(n >> s) & 0xFF:02X}" for s in (40, 32, 24, 16, 8, 0))


def fp(rssi: dict[str, int]) -> Fingerprint:
    return Fingerprint.from_rssi(rssi)


def random_fingerprint(rng: random.Random, n_aps: int, *, pool: int = 64, distinct_rssi: bool = False) -> Fingerprint:
    bssids = rng.sample(range(pool), n_aps)
    if distinct_rssi:
        values = rng.sample(range(-110, -9), n_aps)
    else:
        values = [rng.randint(-110, -10) for _ in range(n_aps)]
    return Fingerprint(tuple(ApObservation(mac(0x020000000000 + b), v) for b, v in zip(bssids, values)))


macs = st.integers(min_value=0, max_value=2**48 - 1).map(mac)
rssis = st.integers(min_value=-120, max_value=0)


@st.composite
def fingerprints(draw, min_size: int = 1, max_size: int = 12) -> Fingerprint:
    keys = draw(st.lists(macs, min_size=min_size, max_size=max_size, unique=True))
    return Fingerprint(tuple(ApObservation(k, draw(rssis)) for k in keys))


class FakeClock:
    def __init__(self, now: datetime):
        self.now = now

    def __call__(self) -> datetime:
        return self.now


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock(datetime(2024, 5, 15, 12, 0, 0, tzinfo=timezone.utc))
