"""Pieces shared by the lamport-clock protocols."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..history import ValueId


def version_key(value: ValueId, lamport: int) -> tuple:
    """Total order on versions of one object: lamport, then writer, then seq."""
    if value.bottom:
        return (0, "", 0)
    return (lamport, value.writer, value.seq)


class DepContext:
    """Values a client has read or written, with the lamport time of each.

    Grows monotonically; never holds bottom.
    """

    def __init__(self):
        self.deps: dict[ValueId, int] = {}

    def add(self, value: ValueId, lamport: int) -> None:
        if value.bottom:
            return
        if lamport > self.deps.get(value, -1):
            self.deps[value] = lamport

    def update(self, items) -> None:
        for v, lam in items:
            self.add(v, lam)

    def items(self) -> list[tuple[ValueId, int]]:
        return sorted(self.deps.items())

    def newest(self, obj: str) -> tuple[ValueId, int] | None:
        best = None
        for v, lam in self.deps.items():
            if v.object == obj and (best is None or version_key(v, lam) > version_key(*best)):
                best = (v, lam)
        return best

    def __len__(self):
        return len(self.deps)

    def __contains__(self, v):
        return v in self.deps


@dataclass
class VersionRecord:
    object: str
    value: ValueId
    lamport: int
    deps: tuple = ()  # ((ValueId, lamport), ...)
    visible: bool = False
    txn: str | None = None
    siblings: tuple = ()

    @property
    def key(self) -> tuple:
        return version_key(self.value, self.lamport)

    def snapshot(self) -> dict:
        return {"value": str(self.value), "lamport": self.lamport, "visible": self.visible,
                "deps": sorted(str(v) for v, _ in self.deps)}


@dataclass
class ObjectStore:
    """Multiversion store for the objects one server holds."""

    versions: dict = field(default_factory=dict)  # object -> list[VersionRecord]

    def add(self, rec: VersionRecord) -> None:
        self.versions.setdefault(rec.object, []).append(rec)

    def find(self, value: ValueId) -> VersionRecord | None:
        for rec in self.versions.get(value.object, ()):
            if rec.value == value:
                return rec
        return None

    def latest_visible(self, obj: str) -> VersionRecord | None:
        best = None
        for rec in self.versions.get(obj, ()):
            if rec.visible and (best is None or rec.key > best.key):
                best = rec
        return best

    def snapshot(self) -> dict:
        return {o: [r.snapshot() for r in sorted(rs, key=lambda r: r.key)]
                for o, rs in sorted(self.versions.items())}
