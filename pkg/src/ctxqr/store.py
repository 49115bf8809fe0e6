"""Scan event persistence and the per-user history queries behind COUNTER/FIRST.

Events live in memory, indexed by id and by user. A file-backed store also
appends each event as one JSON line and fsyncs before ``store_scan``
returns; reopening the file replays it.

Time windows are calendar-aligned in UTC: a day is a UTC date, a week is an
ISO week starting Monday, a month is a calendar month.
"""

from __future__ import annotations

import bisect
import enum
import json
import os
import secrets
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from os import PathLike
from typing import Any, Callable, Iterator

from .errors import EmptyFingerprint, InvalidInterval, UnknownContext
from .fingerprint import Fingerprint, fingerprint_from_json, fingerprint_to_json

Clock = Callable[[], datetime]


def utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


class TimeInterval(enum.IntEnum):
    ALL_TIME = 0
    DAY = 1
    WEEK = 2
    MONTH = 3

    @classmethod
    def of(cls, code: int | TimeInterval) -> TimeInterval:
        if isinstance(code, bool) or not isinstance(code, int):
            raise InvalidInterval(f"interval code must be an integer 0..3, got {code!r}")
        try:
            return cls(code)
        except ValueError:
            raise InvalidInterval(f"interval code must be 0..3, got {code}") from None


def as_utc(ts: datetime) -> datetime:
    """Normalize an aware datetime to UTC at second precision."""
    if ts.tzinfo is None or ts.utcoffset() is None:
        raise ValueError(f"timestamp must be timezone-aware: {ts!r}")
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_ts(ts: datetime) -> str:
    return as_utc(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_ts(text: str) -> datetime:
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    return as_utc(datetime.fromisoformat(text))


def window_bounds(interval: int | TimeInterval, now: datetime) -> tuple[datetime, datetime] | None:
    """Half-open ``[start, end)`` of the calendar window holding ``now``; None for all time."""
    interval = TimeInterval.of(interval)
    now = as_utc(now)
    if interval is TimeInterval.ALL_TIME:
        return None
    day = now.replace(hour=0, minute=0, second=0)
    if interval is TimeInterval.DAY:
        return day, day + timedelta(days=1)
    if interval is TimeInterval.WEEK:
        start = day - timedelta(days=day.weekday())
        return start, start + timedelta(days=7)
    start = day.replace(day=1)
    if start.month == 12:
        end = start.replace(year=start.year + 1, month=1)
    else:
        end = start.replace(month=start.month + 1)
    return start, end


@dataclass(frozen=True)
class ScanEvent:
    id: str
    user_token: str
    timestamp: datetime
    fingerprint: Fingerprint
    target_url: str


def event_to_json(event: ScanEvent) -> dict[str, Any]:
    out: dict[str, Any] = {
        "id": event.id,
        "user": event.user_token,
        "ts": format_ts(event.timestamp),
        "url": event.target_url,
        "aps": fingerprint_to_json(event.fingerprint),
    }
    if event.fingerprint.captured_at is not None:
        out["captured_at"] = format_ts(event.fingerprint.captured_at)
    return out


def event_from_json(obj: dict[str, Any]) -> ScanEvent:
    captured = obj.get("captured_at")
    fp = fingerprint_from_json(obj["aps"])
    if captured is not None:
        fp = replace(fp, captured_at=parse_ts(captured))
    return ScanEvent(obj["id"], obj["user"], parse_ts(obj["ts"]), fp, obj["url"])


def _epoch(ts: datetime) -> int:
    return int(ts.timestamp())


class ScanStore:
    """Thread-safe scan event store.

    Pass ``path`` for a durable JSON-lines file; omit it for an in-memory
    store. ``ttl`` expires events that old (measured from the event
    timestamp to ``clock()``); expired events behave as if never stored.
    """

    def __init__(
        self,
        path: str | PathLike[str] | None = None,
        *,
        ttl: timedelta | None = None,
        clock: Clock = utc_now,
        fsync: bool = True,
    ):
        if ttl is not None and ttl <= timedelta(0):
            raise ValueError("ttl must be positive")
        self.path = os.fspath(path) if path is not None else None
        self.ttl = ttl
        self.clock = clock
        self._fsync = fsync
        self._lock = threading.Lock()
        self._events: dict[str, ScanEvent] = {}
        # user_token -> sorted epoch seconds of that user's events
        self._history: dict[str, list[int]] = {}
        self._fh = None
        if self.path is not None:
            self._replay()
            self._fh = open(self.path, "a", encoding="utf-8")

    def _replay(self) -> None:
        if not os.path.exists(self.path):
            return
        with open(self.path, "rb") as fh:
            data = fh.read()
        good = 0
        lines = data.split(b"\n")
        for lineno, raw in enumerate(lines, 1):
            last = lineno == len(lines)
            if raw.strip():
                try:
                    event = event_from_json(json.loads(raw.decode("utf-8")))
                except (ValueError, KeyError, TypeError) as exc:
                    if last:
                        break  # torn write from a crash; truncated below
                    raise ValueError(f"{self.path}:{lineno}: corrupt event record ({exc})") from None
                self._index(event)
            good += len(raw) + (0 if last else 1)
        if good < len(data):
            with open(self.path, "r+b") as fh:
                fh.truncate(good)
        elif data and not data.endswith(b"\n"):
            with open(self.path, "ab") as fh:
                fh.write(b"\n")

    def _index(self, event: ScanEvent) -> None:
        bisect.insort(self._history.setdefault(event.user_token, []), _epoch(event.timestamp))
        self._events[event.id] = event

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> ScanStore:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def __len__(self) -> int:
        return len(self._events)

    def _new_id(self) -> str:
        while True:
            candidate = secrets.token_urlsafe(12)
            if candidate not in self._events:
                return candidate

    def store_scan(
        self,
        user_token: str,
        fingerprint: Fingerprint,
        target_url: str,
        timestamp: datetime | None = None,
    ) -> str:
        """Persist one scan and return its freshly issued context id."""
        if not len(fingerprint):
            raise EmptyFingerprint("refusing to store a scan with no access points")
        if not user_token:
            raise ValueError("user_token must be non-empty")
        ts = as_utc(timestamp) if timestamp is not None else as_utc(self.clock())
        with self._lock:
            event = ScanEvent(self._new_id(), user_token, ts, fingerprint, target_url)
            if self._fh is not None:
                self._fh.write(json.dumps(event_to_json(event), ensure_ascii=False) + "\n")
                self._fh.flush()
                if self._fsync:
                    os.fsync(self._fh.fileno())
            self._index(event)
        return event.id

    def _expired(self, event: ScanEvent) -> bool:
        return self.ttl is not None and event.timestamp + self.ttl <= as_utc(self.clock())

    def get_context(self, context_id: str) -> ScanEvent:
        event = self._events.get(context_id)
        if event is None or self._expired(event):
            raise UnknownContext(f"no stored context with id {context_id!r}")
        return event

    def events(self) -> Iterator[ScanEvent]:
        """Live events in insertion order."""
        with self._lock:
            snapshot = list(self._events.values())
        return (e for e in snapshot if not self._expired(e))

    def get_parameter_names(self, context_id: str) -> list[str]:
        event = self.get_context(context_id)
        return ["timestamp", "user_token", "target_url"] + [f"ap.{o.bssid}" for o in event.fingerprint]

    def get_parameter_values(self, context_id: str, name: str) -> list[str]:
        event = self.get_context(context_id)
        if name == "timestamp":
            return [format_ts(event.timestamp)]
        if name == "user_token":
            return [event.user_token]
        if name == "target_url":
            return [event.target_url]
        if name.startswith("ap."):
            for o in event.fingerprint:
                if o.bssid == name[3:]:
                    return [str(o.rssi), o.ssid or ""]
        return []

    def _user_range(self, user_token: str, lo: int | None, hi: int | None) -> list[int]:
        with self._lock:
            history = self._history.get(user_token)
            if not history:
                return []
            if self.ttl is not None:
                cutoff = _epoch(as_utc(self.clock()) - self.ttl)
                lo = cutoff + 1 if lo is None else max(lo, cutoff + 1)
            i = 0 if lo is None else bisect.bisect_left(history, lo)
            j = len(history) if hi is None else bisect.bisect_left(history, hi)
            return history[i:j] if i < j else []

    def count_scans(self, user_token: str, interval: int | TimeInterval, now: datetime) -> int:
        """Scans by ``user_token`` inside the calendar window containing ``now``."""
        bounds = window_bounds(interval, now)
        if bounds is None:
            return len(self._user_range(user_token, None, None))
        start, end = bounds
        return len(self._user_range(user_token, _epoch(start), _epoch(end)))

    def is_first_scan(
        self,
        user_token: str,
        interval: int | TimeInterval,
        now: datetime,
        *,
        exclude_id: str | None = None,
    ) -> bool:
        """True when the user has no scan strictly before ``now`` in the window.

        ``exclude_id`` names the event under evaluation so that it cannot
        disqualify itself when it was stored before ``now``.
        """
        bounds = window_bounds(interval, now)
        lo = None if bounds is None else _epoch(bounds[0])
        earlier = self._user_range(user_token, lo, _epoch(as_utc(now)))
        if not earlier:
            return True
        if exclude_id is not None and len(earlier) == 1:
            own = self._events.get(exclude_id)
            if own is not None and own.user_token == user_token and _epoch(own.timestamp) == earlier[0]:
                return True
        return False
