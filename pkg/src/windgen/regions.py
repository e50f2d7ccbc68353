"""Ward agglomerative partition of gridpoints into innovation regions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grid_data import GridMeta

DEFAULT_CLUSTERS = 9


@dataclass(frozen=True)
class Partition:
    n_clusters: int
    assignment: np.ndarray  # labels 1..n_clusters per gridpoint
    merge_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        object.__setattr__(self, "assignment", a)
        if a.size and (set(a.tolist()) != set(range(1, self.n_clusters + 1))):
            raise ValueError("cluster labels must be contiguous 1..n_clusters with none empty")

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters + 1)[1:]

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == c)

    def to_json(self) -> dict:
        return {"n_clusters": int(self.n_clusters), "assignment": self.assignment.tolist()}

    @classmethod
    def from_json(cls, obj) -> "Partition":
        return cls(int(obj["n_clusters"]), np.asarray(obj["assignment"], dtype=int))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Partition":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def ward_linkage(features) -> list[tuple[int, int, float, int]]:
    """Full Ward merge sequence by the Lance-Williams recurrence.

    Returns ``(a, b, height, size)`` per merge, where ``a < b`` are the smallest
    point ids of the merged clusters and ``height`` is the Ward distance
    ``sqrt(2 * increase in within-cluster sum of squares)`` (scipy's convention).
    Equal heights are broken by the lexicographically smallest ``(a, b)``.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D array (points x features)")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    n = X.shape[0]
    sq = (X ** 2).sum(axis=1)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)  # squared distances
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    alive = np.ones(n, dtype=bool)
    rep = np.arange(n)  # smallest point id in each live cluster, indexed by slot
    merges = []
    for _ in range(n - 1):
        live = np.flatnonzero(alive)
        sub = D[np.ix_(live, live)]
        best = sub.min()
        cand = np.argwhere(sub <= best * (1 + 1e-12))
        pairs = sorted((min(rep[live[a]], rep[live[b]]), max(rep[live[a]], rep[live[b]]), live[a], live[b])
                       for a, b in cand if a < b)
        ra, rb, i, j = pairs[0]
        ni, nj = size[i], size[j]
        nk = size
        # Lance-Williams for Ward on squared Euclidean distances
        new = ((ni + nk) * D[i] + (nj + nk) * D[j] - nk * D[i, j]) / (ni + nj + nk)
        keep, drop = (i, j) if rep[i] < rep[j] else (j, i)
        D[keep, :] = new
        D[:, keep] = new
        D[keep, keep] = np.inf
        D[drop, :] = np.inf
        D[:, drop] = np.inf
        alive[drop] = False
        size[keep] = ni + nj
        rep[keep] = min(rep[i], rep[j])
        merges.append((int(ra), int(rb), float(np.sqrt(best)), int(ni + nj)))
    return merges


def cluster_ward(features, n_clusters: int) -> Partition:
    """Cut the Ward hierarchy at ``n_clusters`` groups.

    Labels are numbered 1..n_clusters in order of each cluster's smallest point id.
    """
    X = np.asarray(features, dtype=float)
    n = X.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must lie in 1..{n}, got {n_clusters}")
    merges = ward_linkage(X)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b, _, _ in merges[: n - n_clusters]:
        ra, rb = find(a), find(b)
        parent[max(ra, rb)] = min(ra, rb)
    roots = [find(i) for i in range(n)]
    order = {r: k + 1 for k, r in enumerate(sorted(set(roots)))}
    labels = np.array([order[r] for r in roots])
    return Partition(n_clusters, labels, np.array([m[2] for m in merges]))


def build_features(residuals, mode: str = "corr", meta: GridMeta | None = None) -> np.ndarray:
    """Per-gridpoint clustering features from VAR residuals.

    ``corr``: each point's row of the residual correlation matrix.
    ``moments+coords``: (skewness, excess kurtosis, lat, lon), each column z-scored.
    """
    e = np.asarray(residuals, dtype=float)
    e = e.reshape(-1, e.shape[-1])
    if mode == "corr":
        return np.atleast_2d(np.corrcoef(e, rowvar=False))
    if mode == "moments+coords":
        if meta is None:
            raise ValueError("moments+coords features need grid metadata")
        c = e - e.mean(axis=0)
        m2 = (c ** 2).mean(axis=0)
        f = np.column_stack([(c ** 3).mean(axis=0) / m2 ** 1.5, (c ** 4).mean(axis=0) / m2 ** 2 - 3.0,
                             meta.lats, meta.lons])
        sd = f.std(axis=0)
        return (f - f.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    raise ValueError(f"unknown feature mode {mode!r}")


def contiguity_report(partition: Partition, meta: GridMeta) -> list[dict]:
    """Number of stencil-connected components per cluster (1 means contiguous)."""
    out = []
    for c in range(1, partition.n_clusters + 1):
        members = set(partition.members(c).tolist())
        seen, comps = set(), 0
        for start in members:
            if start in seen:
                continue
            comps += 1
            stack = [start]
            while stack:
                k = stack.pop()
                if k in seen:
                    continue
                seen.add(k)
                stack.extend(j for j in meta.neighbors(k) if j in members and j not in seen)
        out.append({"cluster": c, "size": len(members), "components": comps})
    return out
