"""Shipped protocols, registered by name at import time."""
from .api import (Process, ProtocolBinding, ProtocolHandle, Server, get_protocol,
                  protocol_names, register_alias, register_protocol)
from .baselines import fast_generic, naive_invisible, slow_two_round
from .clock import ts_global, ts_global_bounded
from .visible import async_visible


def _register_shipped():
    register_protocol("slow-2round", slow_two_round())
    register_protocol("async-visible", async_visible())
    # same algorithm; the name stresses the fast-but-visible read path
    register_protocol("fast-visible", async_visible("fast-visible"))
    register_protocol("ts-global", ts_global())
    register_protocol("naive-invisible", naive_invisible())
    register_protocol("fast-generic", fast_generic())
    register_protocol("fast-generic-helping", fast_generic(helping=True))
    register_protocol("ts-global-bounded", ts_global_bounded())
    register_alias("d1", "async-visible")
    register_alias("slow2round", "slow-2round")
    register_alias("d2", "ts-global")
    register_alias("d2-bounded", "ts-global-bounded")


_register_shipped()

__all__ = ["Process", "ProtocolBinding", "ProtocolHandle", "Server", "get_protocol",
           "protocol_names", "register_alias", "register_protocol", "async_visible",
           "fast_generic", "naive_invisible", "slow_two_round", "ts_global", "ts_global_bounded"]
