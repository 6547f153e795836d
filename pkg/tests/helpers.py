"""Small shared utilities for the test suite."""

from __future__ import annotations

import numpy as np

from fraudrings.graph import HARD_KINDS, SOFT_KINDS, HardLink, HeterogeneousGraph, SoftLink


def random_hetero_graph(
    rng: np.random.Generator,
    max_accounts: int = 50,
    hard_factor: float = 1.0,
    soft_factor: float = 1.5,
) -> HeterogeneousGraph:
    """Random heterogeneous graph with dyadic weights (exact float sums)."""
    n = int(rng.integers(2, max_accounts + 1))
    tokens = [f"acct{i}" for i in range(n)]
    n_hard = int(rng.integers(0, max(1, int(n * hard_factor)) + 1))
    n_soft = int(rng.integers(0, max(1, int(n * soft_factor)) + 1))
    hard = []
    for _ in range(n_hard):
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        hard.append(HardLink(min(u, v), max(u, v), HARD_KINDS[int(rng.integers(0, 5))]))
    soft = []
    for _ in range(n_soft):
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        weight = float(rng.integers(1, 9)) * 0.25
        soft.append(
            SoftLink(min(u, v), max(u, v), SOFT_KINDS[int(rng.integers(0, 3))], weight)
        )
    return HeterogeneousGraph.from_links(tokens, hard, soft)


def canonical_partition(membership) -> set[frozenset]:
    groups: dict[int, set[int]] = {}
    for account, sid in enumerate(np.asarray(membership).tolist()):
        groups.setdefault(sid, set()).add(account)
    return {frozenset(g) for g in groups.values()}


def ring_graph(weights: list[tuple[int, int, float]], n: int):
    """Transformed graph of n singleton super-nodes with the given edges."""
    from fraudrings.graph import SuperNode, TransformedGraph

    return TransformedGraph(
        super_nodes=[SuperNode(id=i, members=(i,)) for i in range(n)],
        edges=[(min(i, j), max(i, j), w) for i, j, w in weights],
        membership=np.arange(n, dtype=np.int64),
        tokens=[f"s{i}" for i in range(n)],
    )


def random_event_log(rng: np.random.Generator):
    """Random account/link event stream with dyadic weights and ordered days."""
    from fraudrings.incremental import UpdateEvent

    events = []
    tokens = []
    day = 0.0
    for _ in range(int(rng.integers(20, 80))):
        day += float(rng.integers(0, 3)) * 0.5
        kind = rng.random()
        if kind < 0.35 or len(tokens) < 2:
            token = f"n{len(tokens)}"
            tokens.append(token)
            events.append(UpdateEvent.new_account(token, day))
        elif kind < 0.6:
            u, v = rng.choice(len(tokens), 2, replace=False)
            events.append(UpdateEvent.hard_link(tokens[u], "phone", tokens[v], day))
        else:
            u, v = rng.choice(len(tokens), 2, replace=False)
            weight = float(rng.integers(1, 8)) * 0.25
            events.append(
                UpdateEvent.soft_link(tokens[u], "cookie", tokens[v], weight, day)
            )
    return events


def accumulated_graph(events) -> HeterogeneousGraph:
    """The raw link set implied by an event stream, one entry per event."""
    tokens: list[str] = []
    index: dict[str, int] = {}
    hard, soft = [], []
    for ev in events:
        if ev.kind == "new_account":
            index[ev.token] = len(tokens)
            tokens.append(ev.token)
        elif ev.kind == "hard_link":
            hard.append(HardLink(index[ev.token_u], index[ev.token_v], ev.link_kind))
        else:
            soft.append(
                SoftLink(index[ev.token_u], index[ev.token_v], ev.link_kind, ev.weight, ev.day)
            )
    return HeterogeneousGraph.from_links(tokens, hard, soft)
