"""Disjoint-set forest with path halving and union by size."""


class DisjointSet:
    """Union-find over arbitrary hashable items, created lazily on first use."""

    def __init__(self, items=()):
        self._parent = {}
        self._size = {}
        for item in items:
            self.add(item)

    def __contains__(self, item):
        return item in self._parent

    def __len__(self):
        return len(self._parent)

    def add(self, item):
        if item not in self._parent:
            self._parent[item] = item
            self._size[item] = 1

    def find(self, item):
        parent = self._parent
        if item not in parent:
            raise KeyError(item)
        while parent[item] != item:
            parent[item] = parent[parent[item]]
            item = parent[item]
        return item

    def union(self, a, b):
        """Merge the sets of ``a`` and ``b``; return False if already merged."""
        self.add(a)
        self.add(b)
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]
        return True

    def groups(self):
        out = {}
        for item in self._parent:
            out.setdefault(self.find(item), []).append(item)
        return out
