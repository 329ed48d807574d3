"""Undirected labeled graphs and the synthetic hub-detection benchmarks.

Graphs are immutable value objects: nodes are exactly 0..num_nodes-1, edges
are stored as sorted (u, v) pairs with u < v, and ``targets`` marks the
ground-truth hub nodes. Two task families are generated:

* Case 1: single wheels (label 1, hub is the target) vs. single cycles
  (label 0, no target), up to 13 nodes.
* Case 2: disjoint unions of two wheels (label 1, two hub targets) vs. two
  cycles (label 0), up to 16 nodes.

Sizes stay within the 16-node statevector budget by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    DataError,
    EmptyGraphError,
    InvalidSizeError,
    QubitBudgetError,
)
from .seeds import TAG_DATASET, spawn_rng

MAX_NODES = 16

Edge = tuple[int, int]


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with binary label and target-node set."""

    id: int
    num_nodes: int
    edges: tuple[Edge, ...]
    label: int
    targets: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.num_nodes < 1:
            raise EmptyGraphError("a graph needs at least one node")
        if self.num_nodes > MAX_NODES:
            raise QubitBudgetError(
                f"{self.num_nodes} nodes exceed the {MAX_NODES}-qubit budget"
            )
        normalized = sorted((int(min(e)), int(max(e))) for e in self.edges)
        for u, v in normalized:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValueError(f"edge ({u}, {v}) out of range")
        if len(set(normalized)) != len(normalized):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "edges", tuple(normalized))
        targets = frozenset(int(t) for t in self.targets)
        if not all(0 <= t < self.num_nodes for t in targets):
            raise ValueError("target outside node range")
        object.__setattr__(self, "targets", targets)
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> list[int]:
        deg = [0] * self.num_nodes
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def neighbors(self, v: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == v:
                out.append(b)
            elif b == v:
                out.append(a)
        return sorted(out)

    def adjacency(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            out[u].append(v)
            out[v].append(u)
        return out


@dataclass
class Dataset:
    """Train/test split of one benchmark case."""

    case_id: str
    train: list[Graph]
    test: list[Graph]
    seed: int

    @property
    def graphs(self) -> list[Graph]:
        return self.train + self.test


def _permute_edges(edges: Iterable[Edge], perm: Sequence[int]) -> list[Edge]:
    return [tuple(sorted((perm[u], perm[v]))) for u, v in edges]


def make_wheel(n_rim: int, hub_position: int, rng_seed: int) -> Graph:
    """Wheel graph: a hub adjacent to every node of an ``n_rim``-cycle.

    Node labels are randomly permuted (seeded) subject to the hub landing at
    ``hub_position``, so a fixed index never identifies the hub.
    """
    if n_rim < 3:
        raise InvalidSizeError(f"wheel rim needs >= 3 nodes, got {n_rim}")
    n = n_rim + 1
    if not 0 <= hub_position < n:
        raise ValueError(f"hub_position {hub_position} out of range for {n} nodes")
    # Canonical layout: hub = 0, rim = 1..n_rim.
    edges = [(0, r) for r in range(1, n)]
    edges += [(r, r % n_rim + 1) for r in range(1, n)]
    rng = spawn_rng(rng_seed)
    rest = [i for i in range(n) if i != hub_position]
    rng.shuffle(rest)
    perm = [0] * n
    perm[0] = hub_position
    for canonical, new in zip(range(1, n), rest):
        perm[canonical] = new
    return Graph(
        id=0,
        num_nodes=n,
        edges=tuple(_permute_edges(edges, perm)),
        label=1,
        targets=frozenset({hub_position}),
    )


def make_cycle(n: int) -> Graph:
    """Cycle graph on ``n`` nodes: label 0, no target."""
    if n < 3:
        raise InvalidSizeError(f"cycle needs >= 3 nodes, got {n}")
    edges = tuple((i, (i + 1) % n) for i in range(n))
    return Graph(id=0, num_nodes=n, edges=edges, label=0, targets=frozenset())


def make_two_component(
    kind_a: str,
    kind_b: str,
    sizes: tuple[int, int],
    rng_seed: int,
) -> Graph:
    """Disjoint union of two wheel/cycle components under a random relabeling.

    ``sizes`` are total node counts per component. Label is 1 iff both
    components are wheels; targets collect the component hubs.
    """
    total = sizes[0] + sizes[1]
    if total > MAX_NODES:
        raise QubitBudgetError(f"{total} nodes exceed the {MAX_NODES}-qubit budget")
    rng = spawn_rng(rng_seed)
    edges: list[Edge] = []
    hubs: list[int] = []
    offset = 0
    for kind, size in zip((kind_a, kind_b), sizes):
        if kind == "wheel":
            comp = make_wheel(size - 1, 0, rng_seed=0)
            hubs.append(offset)  # canonical hub before global relabeling
        elif kind == "cycle":
            comp = make_cycle(size)
        else:
            raise ValueError(f"unknown component kind {kind!r}")
        edges += [(u + offset, v + offset) for u, v in comp.edges]
        offset += size
    perm = list(rng.permutation(total))
    label = 1 if kind_a == kind_b == "wheel" else 0
    return Graph(
        id=0,
        num_nodes=total,
        edges=tuple(_permute_edges(edges, perm)),
        label=label,
        targets=frozenset(perm[h] for h in hubs),
    )


def _with_id(g: Graph, new_id: int) -> Graph:
    return Graph(
        id=new_id, num_nodes=g.num_nodes, edges=g.edges, label=g.label, targets=g.targets
    )


def generate_dataset(case_id: str, seed: int) -> Dataset:
    """Generate one benchmark case, deterministic given ``seed``.

    Case1: 100 train (50 wheels + 50 cycles) and 40 test wheels, 6..13 nodes.
    Case2: 180 train (120 two-wheel + 60 two-cycle) and 40 test two-wheels,
    10..16 nodes. Sizes are drawn uniformly over the admissible ranges and
    hub positions are randomized through relabeling.
    """
    if case_id not in ("Case1", "Case2"):
        raise ValueError(f"unknown case id {case_id!r}")
    rng = spawn_rng(seed, TAG_DATASET)
    train: list[Graph] = []
    test: list[Graph] = []

    def wheel() -> Graph:
        n_rim = int(rng.integers(5, 13))
        hub = int(rng.integers(0, n_rim + 1))
        return make_wheel(n_rim, hub, rng_seed=int(rng.integers(2**32)))

    def cycle() -> Graph:
        return make_cycle(int(rng.integers(6, 14)))

    def two(kind_a: str, kind_b: str) -> Graph:
        sizes = (int(rng.integers(5, 9)), int(rng.integers(5, 9)))
        return make_two_component(kind_a, kind_b, sizes, rng_seed=int(rng.integers(2**32)))

    if case_id == "Case1":
        train += [wheel() for _ in range(50)]
        train += [cycle() for _ in range(50)]
        test += [wheel() for _ in range(40)]
    else:
        train += [two("wheel", "wheel") for _ in range(120)]
        train += [two("cycle", "cycle") for _ in range(60)]
        test += [two("wheel", "wheel") for _ in range(40)]

    train = [_with_id(g, i) for i, g in enumerate(train)]
    test = [_with_id(g, len(train) + i) for i, g in enumerate(test)]
    return Dataset(case_id=case_id, train=train, test=test, seed=seed)


def remove_nodes(g: Graph, removed: Iterable[int]) -> Graph:
    """Delete ``removed`` nodes, reindexing survivors contiguously in order.

    Incident edges are dropped and targets are remapped (removed targets
    disappear). Removing every node is an error.
    """
    removed_set = set(int(v) for v in removed)
    if not removed_set <= set(range(g.num_nodes)):
        raise ValueError("removed set contains unknown nodes")
    if len(removed_set) >= g.num_nodes:
        raise EmptyGraphError("cannot remove every node")
    survivors = [v for v in range(g.num_nodes) if v not in removed_set]
    remap = {old: new for new, old in enumerate(survivors)}
    edges = tuple(
        (remap[u], remap[v]) for u, v in g.edges if u in remap and v in remap
    )
    targets = frozenset(remap[t] for t in g.targets if t in remap)
    return Graph(
        id=g.id, num_nodes=len(survivors), edges=edges, label=g.label, targets=targets
    )


def remove_edges(g: Graph, edge_indices: Iterable[int]) -> Graph:
    """Delete edges by index into ``g.edges``; the node set is untouched."""
    drop = set(int(i) for i in edge_indices)
    if not drop <= set(range(g.num_edges)):
        raise ValueError("edge index out of range")
    edges = tuple(e for i, e in enumerate(g.edges) if i not in drop)
    return Graph(
        id=g.id, num_nodes=g.num_nodes, edges=edges, label=g.label, targets=g.targets
    )


def apply_permutation(g: Graph, perm: Sequence[int]) -> Graph:
    """Relabel nodes: node v becomes ``perm[v]``. ``perm`` must be a bijection."""
    if sorted(perm) != list(range(g.num_nodes)):
        raise ValueError("perm is not a bijection on the node indices")
    return Graph(
        id=g.id,
        num_nodes=g.num_nodes,
        edges=tuple(_permute_edges(g.edges, perm)),
        label=g.label,
        targets=frozenset(perm[t] for t in g.targets),
    )


# ---------------------------------------------------------------------------
# Serialization. Edges are kept lexicographically sorted so output bytes are
# stable across runs.
# ---------------------------------------------------------------------------


def graph_to_dict(g: Graph, split: str) -> dict:
    return {
        "id": g.id,
        "split": split,
        "n": g.num_nodes,
        "edges": [[u, v] for u, v in g.edges],
        "label": g.label,
        "targets": sorted(g.targets),
    }


def graph_from_dict(d: dict) -> Graph:
    return Graph(
        id=int(d["id"]),
        num_nodes=int(d["n"]),
        edges=tuple((int(u), int(v)) for u, v in d["edges"]),
        label=int(d["label"]),
        targets=frozenset(int(t) for t in d["targets"]),
    )


def dataset_to_json(ds: Dataset) -> str:
    payload = {
        "case": ds.case_id,
        "seed": ds.seed,
        "graphs": [graph_to_dict(g, "train") for g in ds.train]
        + [graph_to_dict(g, "test") for g in ds.test],
    }
    return json.dumps(payload, indent=2) + "\n"


def dataset_from_json(text: str) -> Dataset:
    try:
        payload = json.loads(text)
        train = [graph_from_dict(d) for d in payload["graphs"] if d["split"] == "train"]
        test = [graph_from_dict(d) for d in payload["graphs"] if d["split"] == "test"]
        return Dataset(
            case_id=payload["case"], train=train, test=test, seed=int(payload["seed"])
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed dataset JSON: {exc}") from exc


def save_dataset(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(dataset_to_json(ds))


def load_dataset(path: str | Path) -> Dataset:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"dataset file not found: {p}")
    return dataset_from_json(p.read_text())
