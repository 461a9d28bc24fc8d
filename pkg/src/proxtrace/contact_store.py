"""Per-user contact history, positive-status registry, and retention.

The contact log is the sparse reading of the adjacency matrix: a hashmap
from user id to the time-ordered contacts of that user. Positive status is
external fact (diagnostic reports), never inferred, and is kept in a
separate registry keyed by user id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, NamedTuple

from .geo import GeoPoint
from .tracing import ContactEvent, ContactPair

DEFAULT_EPOCH = datetime(2020, 1, 1)


@dataclass(frozen=True)
class RetentionPolicy:
    window_days: int = 14

    def __post_init__(self):
        if self.window_days <= 0:
            raise ValueError("retention window must be positive")


class LogEntry(NamedTuple):
    contact_id: int
    interval: int
    location: GeoPoint


class ContactLog:
    """Time-ordered contact vectors, one per user, with symmetric entries.

    Events carry the interval index; ``epoch`` plus ``interval_minutes`` maps
    an interval to a wall-clock time for retention decisions. Recording is
    idempotent per (pair, interval).
    """

    def __init__(self, epoch: datetime = DEFAULT_EPOCH, interval_minutes: float = 2.5):
        self.epoch = epoch
        self.interval_minutes = interval_minutes
        self._contacts: dict[int, list[LogEntry]] = {}
        self._seen: set[tuple[int, int, int]] = set()
        self.latest_interval: int | None = None

    def interval_time(self, interval: int) -> datetime:
        return self.epoch + timedelta(minutes=interval * self.interval_minutes)

    def record_events(self, events: Iterable[ContactEvent]) -> "ContactLog":
        for ev in events:
            a, b = ev.pair
            key = (a, b, ev.snapshot_from)
            if key in self._seen:
                continue
            self._seen.add(key)
            self._contacts.setdefault(a, []).append(
                LogEntry(b, ev.snapshot_from, ev.location)
            )
            self._contacts.setdefault(b, []).append(
                LogEntry(a, ev.snapshot_from, ev.location)
            )
            if self.latest_interval is None or ev.snapshot_from > self.latest_interval:
                self.latest_interval = ev.snapshot_from
        return self

    def contacts_of(self, user_id: int) -> list[LogEntry]:
        return list(self._contacts.get(user_id, ()))

    def users(self) -> set[int]:
        return set(self._contacts)

    def entry_count(self) -> int:
        return sum(len(v) for v in self._contacts.values())

    def prune(self, now: datetime, policy: RetentionPolicy = RetentionPolicy()) -> "ContactLog":
        """Drop every entry strictly older than the retention window."""
        cutoff = now - timedelta(days=policy.window_days)
        kept: dict[int, list[LogEntry]] = {}
        seen: set[tuple[int, int, int]] = set()
        for user, entries in self._contacts.items():
            fresh = [e for e in entries if self.interval_time(e.interval) >= cutoff]
            if fresh:
                kept[user] = fresh
                for e in fresh:
                    a, b = (user, e.contact_id) if user < e.contact_id else (e.contact_id, user)
                    seen.add((a, b, e.interval))
        self._contacts = kept
        self._seen = seen
        return self

    def save(self, path: str | Path) -> None:
        """Checkpoint as line-oriented records: user_id,contact_id,interval,lat,lon."""
        with open(path, "w") as fh:
            fh.write("user_id,contact_id,interval,lat,lon\n")
            for user in sorted(self._contacts):
                for e in self._contacts[user]:
                    fh.write(
                        f"{user},{e.contact_id},{e.interval},"
                        f"{e.location.latitude!r},{e.location.longitude!r}\n"
                    )

    @classmethod
    def load(
        cls,
        path: str | Path,
        epoch: datetime = DEFAULT_EPOCH,
        interval_minutes: float = 2.5,
    ) -> "ContactLog":
        log = cls(epoch, interval_minutes)
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("user_id,"):
                raise ValueError(f"{path}: missing checkpoint header line")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                user, contact, interval, lat, lon = line.split(",")
                entry = LogEntry(
                    int(contact), int(interval), GeoPoint(float(lat), float(lon))
                )
                log._contacts.setdefault(int(user), []).append(entry)
                a, b = sorted((int(user), int(contact)))
                log._seen.add((a, b, int(interval)))
                if log.latest_interval is None or entry.interval > log.latest_interval:
                    log.latest_interval = entry.interval
        return log


class InfectionRegistry:
    """Positive-status flags (the bit vector), with diagnosis dates."""

    def __init__(self):
        self._positive: dict[int, datetime] = {}

    def mark_positive(self, user_id: int, date: datetime) -> None:
        if user_id < 0:
            raise ValueError("user id must be non-negative")
        self._positive.setdefault(user_id, date)

    def is_positive(self, user_id: int) -> bool:
        return user_id in self._positive

    def diagnosis_date(self, user_id: int) -> datetime | None:
        return self._positive.get(user_id)

    def positives(self) -> set[int]:
        return set(self._positive)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("user_id,date\n")
            for user in sorted(self._positive):
                fh.write(f"{user},{self._positive[user].isoformat()}\n")

    @classmethod
    def load(cls, path: str | Path) -> "InfectionRegistry":
        reg = cls()
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("user_id"):
                raise ValueError(f"{path}: missing registry header line")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                user, date = line.split(",", 1)
                reg.mark_positive(int(user), datetime.fromisoformat(date))
        return reg


def susceptible_of(
    log: ContactLog,
    registry: InfectionRegistry,
    policy: RetentionPolicy | None = None,
    now: datetime | None = None,
    positives: set[int] | None = None,
    hops: int = 1,
) -> set[int]:
    """Non-positive users with a logged contact to a positive user.

    ``positives`` narrows the infection sources (e.g. to the positives found
    inside a search area); by default all registered positives count. With
    ``now`` set, only entries within the retention window back from ``now``
    are considered. ``hops`` > 1 walks contacts-of-contacts; the single-hop
    default is the validated behavior.
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    if positives is None:
        positives = registry.positives()
    cutoff = None
    if now is not None:
        cutoff = now - timedelta(days=(policy or RetentionPolicy()).window_days)

    def fresh_contacts(user: int) -> set[int]:
        out = set()
        for e in log.contacts_of(user):
            if cutoff is not None and log.interval_time(e.interval) < cutoff:
                continue
            out.add(e.contact_id)
        return out

    frontier = set(positives)
    reached: set[int] = set()
    for _ in range(hops):
        nxt: set[int] = set()
        for user in frontier:
            nxt |= fresh_contacts(user)
        nxt -= positives
        nxt -= reached
        if not nxt:
            break
        reached |= nxt
        frontier = nxt
    return {u for u in reached if not registry.is_positive(u)}
