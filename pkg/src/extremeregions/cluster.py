"""Agglomerative hierarchical clustering and PAM K-medoids on a precomputed dissimilarity.

Merge trees follow the usual linkage-matrix convention: leaves are nodes
0..n-1 and the k-th merge creates node n+k. Ties are broken towards the
lowest (i, j) slot pair so runs are deterministic.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

LINKAGES = ("single", "complete", "average")
UNASSIGNED = 0


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass
class MergeTree:
    ids: list[str]
    merges: list[Merge]
    linkage: str = "average"

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def heights(self) -> np.ndarray:
        return np.array([m.height for m in self.merges])

    def to_json(self) -> dict:
        return {
            "linkage": self.linkage,
            "ids": self.ids,
            "merges": [
                {"left": m.left, "right": m.right, "height": float(m.height), "size": m.size}
                for m in self.merges
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MergeTree":
        merges = [Merge(int(m["left"]), int(m["right"]), float(m["height"]), int(m["size"])) for m in obj["merges"]]
        return cls(list(obj["ids"]), merges, obj.get("linkage", "average"))

    def dump(self, stream: TextIO) -> None:
        json.dump(self.to_json(), stream, indent=1)
        stream.write("\n")

    @classmethod
    def load(cls, stream: TextIO) -> "MergeTree":
        return cls.from_json(json.load(stream))


@dataclass
class Partition:
    labels: dict[str, int]
    method: str
    cut_height: float | None = None
    medoids: list[str] = field(default_factory=list)
    cost: float | None = None
    cost_trace: list[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len({v for v in self.labels.values() if v != UNASSIGNED})

    def members(self, label: int) -> list[str]:
        return [s for s, lab in self.labels.items() if lab == label]

    def clusters(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for s, lab in self.labels.items():
            if lab != UNASSIGNED:
                out.setdefault(lab, []).append(s)
        return dict(sorted(out.items()))

    def as_sets(self) -> set[frozenset[str]]:
        return {frozenset(v) for v in self.clusters().values()}


def _check_matrix(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("dissimilarity must be a square matrix")
    if not np.isfinite(d).all():
        raise ValueError("dissimilarity matrix contains NaN or infinite entries")
    if not np.allclose(d, d.T, rtol=0, atol=1e-12):
        raise ValueError("dissimilarity matrix is not symmetric")
    return d


def hierarchical(d, linkage: str = "average", ids: Sequence[str] | None = None) -> MergeTree:
    """Agglomerative clustering with Lance-Williams updates.

    `d` is a square array or anything with `.d` and `.ids` (a
    DissimilarityMatrix). Heights are non-decreasing for the supported
    linkages; the average update is written so rounding cannot undercut
    the current merge height.
    """
    if hasattr(d, "ids") and hasattr(d, "d"):
        ids = list(d.ids) if ids is None else list(ids)
        d = d.d
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    D = _check_matrix(d).copy()
    n = D.shape[0]
    if n < 2:
        raise ValueError("need at least 2 items to cluster")
    ids = [str(i) for i in range(n)] if ids is None else list(ids)

    D[np.tril_indices(n)] = np.inf
    node = list(range(n))
    size = [1] * n
    merges: list[Merge] = []
    for step in range(n - 1):
        flat = int(np.argmin(D))
        i, j = divmod(flat, n)
        h = float(D[i, j])
        ni, nj = size[i], size[j]

        # symmetric view of rows i and j over active slots
        di = np.minimum(D[i, :], D[:, i])
        dj = np.minimum(D[j, :], D[:, j])
        if linkage == "single":
            new = np.minimum(di, dj)
        elif linkage == "complete":
            new = np.maximum(di, dj)
        else:
            lo, hi = np.minimum(di, dj), np.maximum(di, dj)
            w_hi = np.where(di >= dj, ni, nj) / (ni + nj)
            with np.errstate(invalid="ignore"):
                new = np.where(np.isinf(hi), np.inf, lo + (hi - lo) * w_hi)

        a, b = sorted((node[i], node[j]))
        merges.append(Merge(a, b, h, ni + nj))
        # slot i holds the merged cluster, slot j is retired
        D[i, i + 1:] = new[i + 1:]
        D[:i, i] = new[:i]
        D[j, :] = np.inf
        D[:, j] = np.inf
        D[i, i] = np.inf
        node[i] = n + step
        size[i] = ni + nj
    return MergeTree(ids, merges, linkage)


def _relabel(groups: Sequence[int]) -> list[int]:
    """Map arbitrary group keys to 1..k in order of first appearance."""
    seen: dict[int, int] = {}
    return [seen.setdefault(g, len(seen) + 1) for g in groups]


def cut(tree: MergeTree, height: float) -> Partition:
    """Flat partition keeping every merge at or below `height`."""
    if height < 0:
        raise ValueError("cut height must be non-negative")
    n = tree.n
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k, m in enumerate(tree.merges):
        if m.height <= height:
            parent[find(m.left)] = n + k
            parent[find(m.right)] = n + k
    labels = _relabel([find(i) for i in range(n)])
    return Partition(dict(zip(tree.ids, labels)), "hierarchical", float(height))


def cut_k(tree: MergeTree, k: int) -> Partition:
    """Partition with exactly k clusters (stop merging after n - k merges)."""
    n = tree.n
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}")
    if k == n:
        return Partition({s: i + 1 for i, s in enumerate(tree.ids)}, "hierarchical", 0.0)
    keep = tree.merges[: n - k]
    sub = MergeTree(tree.ids, keep, tree.linkage)
    p = cut(sub, float("inf"))
    p.cut_height = float(keep[-1].height) if keep else 0.0
    return p


def _pam_cost(D: np.ndarray, medoids: Sequence[int]) -> float:
    return float(D[:, list(medoids)].min(axis=1).sum())


def kmedoids(
    d,
    k: int,
    seed: int | None = None,
    ids: Sequence[str] | None = None,
    n_restarts: int = 0,
    max_iter: int = 1000,
) -> Partition:
    """PAM: greedy BUILD then best-improvement SWAP until no swap lowers total cost.

    BUILD is deterministic. With `n_restarts` > 0, extra runs start from
    random medoid sets drawn with `seed` and the cheapest result is kept.
    """
    if hasattr(d, "ids") and hasattr(d, "d"):
        ids = list(d.ids) if ids is None else list(ids)
        d = d.d
    D = _check_matrix(d)
    n = D.shape[0]
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")

    starts = [_pam_build(D, k)]
    rng = np.random.default_rng(seed)
    for _ in range(n_restarts):
        starts.append(sorted(rng.choice(n, size=k, replace=False).tolist()))

    best, best_cost, best_trace = None, np.inf, []
    for start in starts:
        medoids, trace = _pam_swap(D, start, max_iter)
        if trace[-1] < best_cost - 1e-15:
            best, best_cost, best_trace = medoids, trace[-1], trace

    medoids = sorted(best)
    assign = np.argmin(D[:, medoids], axis=1)  # first medoid wins ties
    labels = [int(a) + 1 for a in assign]
    return Partition(dict(zip(ids, labels)), "kmedoids", None, [ids[m] for m in medoids], best_cost, best_trace)


def _pam_build(D: np.ndarray, k: int) -> list[int]:
    n = D.shape[0]
    medoids = [int(np.argmin(D.sum(axis=0)))]
    nearest = D[:, medoids[0]].copy()
    for _ in range(1, k):
        # gain of adding candidate c: sum_j max(nearest_j - D[j, c], 0)
        gain = np.maximum(nearest[:, None] - D, 0.0).sum(axis=0)
        gain[medoids] = -np.inf
        c = int(np.argmax(gain))
        medoids.append(c)
        nearest = np.minimum(nearest, D[:, c])
    return medoids


def _pam_swap(D: np.ndarray, medoids: list[int], max_iter: int) -> tuple[list[int], list[float]]:
    n = D.shape[0]
    medoids = list(medoids)
    trace = [_pam_cost(D, medoids)]
    k = len(medoids)
    if k == n:
        return medoids, trace
    for _ in range(max_iter):
        best_delta, best_move = 0.0, None
        for mi in range(k):
            others = medoids[:mi] + medoids[mi + 1:]
            base = D[:, others].min(axis=1) if others else np.full(n, np.inf)
            # cost after swapping medoid mi for each candidate o, vectorised over o
            cost = np.minimum(base[:, None], D).sum(axis=0)
            cost[medoids] = np.inf
            o = int(np.argmin(cost))
            delta = cost[o] - trace[-1]
            if delta < best_delta - 1e-12:
                best_delta, best_move = delta, (mi, o)
        if best_move is None:
            break
        mi, o = best_move
        medoids[mi] = o
        trace.append(_pam_cost(D, medoids))
    return medoids, trace


def core_clusters(p: Partition, min_size: int) -> Partition:
    """Keep clusters with at least `min_size` members, relabelled 1..m; others become unassigned."""
    sizes: dict[int, int] = {}
    for lab in p.labels.values():
        if lab != UNASSIGNED:
            sizes[lab] = sizes.get(lab, 0) + 1
    keep = {lab for lab, s in sizes.items() if s >= min_size}
    kept = [lab for lab in p.labels.values() if lab in keep]
    mapping = dict(zip(kept, _relabel(kept)))
    labels = {s: mapping.get(lab, UNASSIGNED) for s, lab in p.labels.items()}
    return Partition(labels, p.method, p.cut_height, list(p.medoids))


def write_labels(p: Partition, stream: TextIO) -> None:
    stream.write("station_id,label\n")
    for s, lab in p.labels.items():
        stream.write(f"{s},{lab}\n")


def read_labels(stream: TextIO) -> Partition:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or not {"station_id", "label"} <= set(reader.fieldnames):
        raise ValueError("labels table needs station_id and label columns")
    labels = {r["station_id"]: int(r["label"]) for r in reader}
    return Partition(labels, "file")
