"""Disjoint sets that refuse unions joining cannot-linked items."""

from __future__ import annotations

from typing import Hashable, Iterable, Mapping


class ConstrainedUnionFind:
    """Union-find over ``items`` with per-item cannot-link sets.

    ``union(a, b)`` is refused when any member of a's set is cannot-linked
    with any member of b's set. Representatives are the smallest item of
    each set, which keeps merge results independent of union order.
    """

    def __init__(self, items: Iterable[Hashable],
                 cannot: Mapping[Hashable, Iterable[Hashable]] | None = None):
        self.parent = {x: x for x in items}
        self.members = {x: {x} for x in self.parent}
        cannot = cannot or {}
        self.forbidden = {x: set(cannot.get(x, ())) for x in self.parent}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def conflict(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        small, other = (ra, rb) if len(self.members[ra]) <= len(self.members[rb]) else (rb, ra)
        forb = self.forbidden[other]
        return any(m in forb for m in self.members[small])

    def union(self, a, b) -> bool:
        """Merge the sets of ``a`` and ``b``; False if already joined or refused."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb or self.conflict(ra, rb):
            return False
        keep, drop = (ra, rb) if ra < rb else (rb, ra)
        self.parent[drop] = keep
        self.members[keep] |= self.members.pop(drop)
        self.forbidden[keep] |= self.forbidden.pop(drop)
        return True

    def groups(self) -> dict:
        """representative -> sorted members."""
        return {r: sorted(ms) for r, ms in sorted(self.members.items())}
