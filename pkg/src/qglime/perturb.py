"""Structure-preserving graph perturbations and their binary mask encoding.

A perturbation set holds p rows; row i marks, per element (node or edge),
whether it was retained (1) or removed (0), together with the perturbed graph
the row reconstructs to. Rows are sampled with replacement; duplicates are
kept on purpose, deduplication would bias the downstream kernel Grams.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from .circuit import EDUQGCModel
from .errors import ConfigError
from .graphs import Graph, remove_edges, remove_nodes
from .seeds import spawn_rng

NODES = "nodes"
EDGES = "edges"


@dataclass
class PerturbConfig:
    strategy: str = "random_node"  # "random_node" or "random_walk"
    num_perturbations: int = 64
    removal_count: int = 2
    walk_length: int = 4
    element_kind: str = NODES
    exhaustive: bool = False  # enumerate all r-subsets instead of sampling
    shots: int | None = 2000

    def __post_init__(self):
        if self.strategy not in ("random_node", "random_walk"):
            raise ConfigError(f"unknown perturbation strategy {self.strategy!r}")
        if self.element_kind not in (NODES, EDGES):
            raise ConfigError(f"unknown element kind {self.element_kind!r}")
        if self.num_perturbations < 1:
            raise ConfigError("num_perturbations must be >= 1")
        if self.walk_length < 1:
            raise ConfigError("walk_length must be >= 1")


@dataclass
class PerturbationSet:
    base_graph: Graph
    element_kind: str
    masks: np.ndarray  # (p, num_elements) uint8, 1 = retained
    perturbed_graphs: list[Graph]
    seed: int
    outputs: np.ndarray | None = None  # class probabilities, filled by evaluation

    @property
    def num_rows(self) -> int:
        return self.masks.shape[0]

    @property
    def num_elements(self) -> int:
        return self.masks.shape[1]


def num_elements(graph: Graph, element_kind: str) -> int:
    return graph.num_nodes if element_kind == NODES else graph.num_edges


def rebuild_from_mask(graph: Graph, element_kind: str, mask: np.ndarray) -> Graph:
    """Graph encoded by one mask row (0-marked elements removed)."""
    removed = [i for i, keep in enumerate(mask) if not keep]
    if element_kind == NODES:
        return remove_nodes(graph, removed)
    return remove_edges(graph, removed)


def _validate_removal_count(graph: Graph, config: PerturbConfig) -> int:
    r = config.removal_count
    if config.element_kind == NODES:
        if not 1 <= r < graph.num_nodes:
            raise ConfigError(
                f"removal_count must be in [1, {graph.num_nodes - 1}], got {r}"
            )
    else:
        if not 1 <= r <= graph.num_edges:
            raise ConfigError(
                f"removal_count must be in [1, {graph.num_edges}], got {r}"
            )
    return r


def _assemble(
    graph: Graph, element_kind: str, removals: list[list[int]], seed: int
) -> PerturbationSet:
    n_el = num_elements(graph, element_kind)
    masks = np.ones((len(removals), n_el), dtype=np.uint8)
    graphs = []
    for i, removed in enumerate(removals):
        masks[i, removed] = 0
        graphs.append(rebuild_from_mask(graph, element_kind, masks[i]))
    return PerturbationSet(
        base_graph=graph,
        element_kind=element_kind,
        masks=masks,
        perturbed_graphs=graphs,
        seed=seed,
    )


def perturb_random(graph: Graph, config: PerturbConfig, seed: int) -> PerturbationSet:
    """Uniform random r-subset removals (all r-subsets once in exhaustive mode)."""
    r = _validate_removal_count(graph, config)
    n_el = num_elements(graph, element_kind=config.element_kind)
    if config.exhaustive:
        removals = [list(c) for c in combinations(range(n_el), r)]
    else:
        rng = spawn_rng(seed)
        removals = [
            sorted(rng.choice(n_el, size=r, replace=False).tolist())
            for _ in range(config.num_perturbations)
        ]
    return _assemble(graph, config.element_kind, removals, seed)


def perturb_random_walk(graph: Graph, config: PerturbConfig, seed: int) -> PerturbationSet:
    """Remove the nodes visited by a simple random walk, so removals stay local.

    Per row: uniform start node, ``walk_length`` uniform neighbor steps (the
    walk stops early at a degree-0 node), distinct visited nodes capped at
    ``removal_count`` keeping the earliest-visited. Node elements only.
    """
    if config.element_kind != NODES:
        raise ConfigError("random_walk perturbations are defined over nodes")
    r = _validate_removal_count(graph, config)
    adjacency = graph.adjacency()
    rng = spawn_rng(seed)
    removals = []
    for _ in range(config.num_perturbations):
        current = int(rng.integers(graph.num_nodes))
        visited = [current]
        for _ in range(config.walk_length):
            nbrs = adjacency[current]
            if not nbrs:
                break
            current = nbrs[int(rng.integers(len(nbrs)))]
            if current not in visited:
                visited.append(current)
        removals.append(visited[:r])
    return _assemble(graph, NODES, removals, seed)


def perturb(graph: Graph, config: PerturbConfig, seed: int) -> PerturbationSet:
    if config.strategy == "random_walk":
        return perturb_random_walk(graph, config, seed)
    return perturb_random(graph, config, seed)


def evaluate_perturbations(
    pset: PerturbationSet, model: EDUQGCModel, shots: int | None, seed: int
) -> PerturbationSet:
    """Fill ``outputs`` with the model's class probability per row.

    Each row gets its own derived measurement seed, so re-evaluating with a
    fresh ``seed`` yields fresh quantum randomness while the same seed
    reproduces the output vector exactly.
    """
    outputs = np.empty(pset.num_rows)
    for i, g in enumerate(pset.perturbed_graphs):
        if shots is None:
            outputs[i] = model.forward_exact(g).class_probability
        else:
            outputs[i] = model.forward_shots(
                g, shots, np.random.SeedSequence(seed, spawn_key=(i,))
            ).class_probability
    return replace(pset, outputs=outputs)


def perturbation_dump(psets: list[PerturbationSet]) -> dict:
    """JSON payload for audits and surrogate re-fits without re-simulation."""
    base = psets[0].base_graph
    return {
        "graph_id": base.id,
        "element_kind": psets[0].element_kind,
        "surrogate_passes": [
            {
                "seed": p.seed,
                "masks": p.masks.astype(int).tolist(),
                "outputs": None if p.outputs is None else [float(x) for x in p.outputs],
            }
            for p in psets
        ],
    }
