"""Protocol bindings and the name registry."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..errors import DuplicateName, ProtocolShapeMismatch
from ..history import Transaction


class Process:
    """Base for simulated processes. State lives on the instance only."""

    def __init__(self, pid: str, placement: dict):
        self.pid = pid
        self.placement = placement

    def on_invoke(self, txn: Transaction, ctx) -> None:
        raise NotImplementedError

    def on_message(self, msg, ctx) -> None:
        raise NotImplementedError

    def on_timer(self, ctx) -> None:
        pass

    def servers_for(self, objects) -> dict[str, list]:
        by_server: dict[str, list] = {}
        for o in sorted(objects):
            by_server.setdefault(self.placement[o], []).append(o)
        return by_server


class Server(Process):
    def __init__(self, pid: str, stored: list, placement: dict):
        super().__init__(pid, placement)
        self.stored = list(stored)

    def snapshot(self) -> dict:
        return {}

    def visible(self, value) -> bool:
        raise NotImplementedError


@dataclass
class ProtocolBinding:
    """How to build a protocol's processes, plus what the protocol claims.

    ``generic_txns`` is true when write transactions may span several objects;
    restricted-model protocols reject those. ``settle_ticks`` is how long after
    the network drains a read must wait before it can observe every write.
    """

    name: str
    client_factory: Callable[[str, dict], Process]
    server_factory: Callable[[str, list, dict], Server]
    clock_access: bool = False
    generic_txns: bool = False
    fast_rot: bool = True
    settle_ticks: int = 0
    description: str = ""
    options: dict = field(default_factory=dict)

    def make_client(self, cid: str, placement: dict) -> Process:
        return self.client_factory(cid, placement)

    def make_server(self, sid: str, stored: list, placement: dict) -> Server:
        return self.server_factory(sid, stored, placement)

    def check_txn(self, txn: Transaction) -> None:
        if not self.generic_txns and len(txn.writes) > 1:
            raise ProtocolShapeMismatch(f"{self.name} only supports single-object writes")
        if not self.generic_txns and txn.writes and txn.reads:
            raise ProtocolShapeMismatch(f"{self.name} does not mix reads and writes")


class ProtocolHandle:
    def __init__(self, binding: ProtocolBinding):
        self.binding = binding

    @property
    def name(self) -> str:
        return self.binding.name


_REGISTRY: dict[str, ProtocolBinding] = {}
_ALIASES: dict[str, str] = {}


def register_protocol(name: str, binding: ProtocolBinding) -> ProtocolHandle:
    if name in _REGISTRY or name in _ALIASES:
        raise DuplicateName(name)
    _REGISTRY[name] = binding
    return ProtocolHandle(binding)


def register_alias(alias: str, name: str) -> None:
    if alias in _REGISTRY or alias in _ALIASES:
        raise DuplicateName(alias)
    _ALIASES[alias] = name


def get_protocol(name: str) -> ProtocolBinding:
    try:
        return _REGISTRY[_ALIASES.get(name, name)]
    except KeyError:
        raise KeyError(f"unknown protocol {name!r}; known: {', '.join(protocol_names())}") from None


def protocol_names() -> list[str]:
    return sorted(_REGISTRY)
