import random

import pytest
from hypothesis import strategies as st

from causalsim.fixtures import HistoryBuilder
from causalsim.history import ValueId

OBJS = ("X", "Y", "Z")


def random_history(rng: random.Random, max_txns: int = 6, clients=("c0", "c1", "c2"),
                   objs=OBJS[:2], write_p: float = 0.5):
    """Sequential-per-client history whose reads pick any value written anywhere (or bottom).

    Reads may name values written later, which yields plenty of violations.
    """
    b = HistoryBuilder()
    written = {o: [ValueId.initial(o)] for o in objs}
    busy_until = {c: 0 for c in clients}
    seqs = {}
    plan = []
    for _ in range(rng.randint(1, max_txns)):
        c = rng.choice(clients)
        start = busy_until[c] + rng.randint(1, 3)
        end = start + rng.randint(1, 3)
        busy_until[c] = end
        if rng.random() < write_p:
            ws = {}
            for o in sorted(rng.sample(objs, rng.randint(1, len(objs)))):
                seqs[c] = seqs.get(c, 0) + 1
                ws[o] = ValueId(o, c, seqs[c])
                written[o].append(ws[o])
            plan.append((c, start, end, None, ws))
        else:
            plan.append((c, start, end, sorted(rng.sample(objs, rng.randint(1, len(objs)))), None))
    for c, start, end, reads, ws in plan:
        if ws:
            b.txn(c, start, end, writes=ws)
        else:
            b.txn(c, start, end, reads={o: rng.choice(written[o]) for o in reads})
    return b.build()


@st.composite
def histories(draw, max_txns: int = 6):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_history(random.Random(seed), max_txns=max_txns)


@pytest.fixture
def rng():
    return random.Random(1234)
