"""Surrogate ensembles, their uncertainty summaries, and ensemble-size planning.

``explain`` runs m independent surrogate pipelines against a trained model:
each derives fresh perturbations and fresh measurement seeds from the master
seed, evaluates the model, and fits one surrogate. The stacked score matrix
yields per-element mean importances, top-k inclusion probabilities, IQRs and
90% confidence intervals, plus removal flip probabilities and the fraction of
surrogates sitting in the region of indecision.

``plan_dkw`` turns a Dvoretzky-Kiefer-Wolfowitz bound into the minimum
ensemble size that approximates the distribution of a per-surrogate scalar
statistic uniformly to accuracy eps with confidence 1 - delta;
``plan_dkw_simultaneous`` covers several graphs and statistics at once via a
union bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import EDUQGCModel
from .errors import ConfigError
from .graphs import Graph, remove_edges, remove_nodes
from .hsic import (
    KernelConfig,
    SolverConfig,
    build_groups,
    fit_hsic_group,
    fit_hsic_l1,
    fit_logistic,
)
from .perturb import NODES, PerturbConfig, evaluate_perturbations, perturb
from .seeds import TAG_BASE, TAG_EVAL, TAG_FLIP, TAG_PERTURB, spawn_seed

SURROGATE_KINDS = ("hsic_l1", "hsic_group", "logistic")


# ---------------------------------------------------------------------------
# Ensemble-size planning
# ---------------------------------------------------------------------------


def _ceil_stable(x: float) -> int:
    # The closed forms can land exactly on an integer; guard the ceiling
    # against 1-ulp float noise so the tight boundary case returns m, not m+1.
    return int(math.ceil(round(x, 9)))


def plan_dkw(eps: float, delta: float) -> int:
    """Minimum i.i.d. sample count for uniform ECDF accuracy eps at confidence 1-delta."""
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if not 0 < delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    return _ceil_stable(math.log(2.0 / delta) / (2.0 * eps * eps))


def plan_dkw_simultaneous(eps: float, delta: float, n_graphs: int, k_statistics: int) -> int:
    """Union-bound version: uniform accuracy across n_graphs * k_statistics CDFs."""
    if n_graphs < 1 or k_statistics < 1:
        raise ConfigError("n_graphs and k_statistics must be >= 1")
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if not 0 < delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    return _ceil_stable(
        math.log(2.0 * n_graphs * k_statistics / delta) / (2.0 * eps * eps)
    )


@dataclass
class DKWPlan:
    eps: float
    delta: float
    n_graphs: int
    k_statistics: int
    m_min_single: int
    m_min_simultaneous: int

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "delta": self.delta,
            "n_graphs": self.n_graphs,
            "k_statistics": self.k_statistics,
            "m_min_single": self.m_min_single,
            "m_min_simultaneous": self.m_min_simultaneous,
        }


def make_plan(eps: float, delta: float, n_graphs: int = 1, k_statistics: int = 1) -> DKWPlan:
    return DKWPlan(
        eps=eps,
        delta=delta,
        n_graphs=n_graphs,
        k_statistics=k_statistics,
        m_min_single=plan_dkw(eps, delta),
        m_min_simultaneous=plan_dkw_simultaneous(eps, delta, n_graphs, k_statistics),
    )


def ecdf_sup_deviation(samples: np.ndarray, cdf) -> float:
    """sup_t |ECDF(t) - CDF(t)|, evaluated exactly at the sample jump points."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    f = np.asarray(cdf(x), dtype=float)
    upper = np.abs(np.arange(1, n + 1) / n - f)
    lower = np.abs(f - np.arange(0, n) / n)
    return float(np.maximum(upper, lower).max())


# ---------------------------------------------------------------------------
# Aggregation primitives
# ---------------------------------------------------------------------------


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties break toward the lowest index."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    return order[:k]


def tip(score_matrix: np.ndarray, k: int) -> np.ndarray:
    """Per element, the fraction of surrogates ranking it among the top k."""
    scores = np.atleast_2d(np.asarray(score_matrix, dtype=float))
    m, n_el = scores.shape
    if not 1 <= k <= n_el:
        raise ValueError(f"k must be in [1, {n_el}], got {k}")
    hits = np.zeros(n_el)
    for row in scores:
        hits[topk_indices(row, k)] += 1.0
    return hits / m


def iqr_ci(score_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per element, (Q3 - Q1) and the (5th, 95th) percentile interval.

    Percentiles interpolate linearly between order statistics.
    """
    scores = np.atleast_2d(np.asarray(score_matrix, dtype=float))
    q1, q3 = np.percentile(scores, [25, 75], axis=0)
    lo, hi = np.percentile(scores, [5, 95], axis=0)
    return q3 - q1, np.stack([lo, hi], axis=1)


def indecision_fraction(base_probabilities: np.ndarray, eps: float = 0.1) -> float:
    """Fraction of surrogates whose base-graph class-1 probability is within eps of 1/2."""
    p = np.asarray(base_probabilities, dtype=float)
    return float(np.mean(np.abs(p - 0.5) < eps))


def remove_element(graph: Graph, element: int, element_kind: str = NODES) -> Graph:
    if element_kind == NODES:
        return remove_nodes(graph, {element})
    return remove_edges(graph, {element})


def flip_probability(
    graph: Graph,
    model: EDUQGCModel,
    element: int,
    trials: int = 20,
    shots: int | None = 2000,
    seed: int = 0,
    element_kind: str = NODES,
) -> float:
    """Fraction of stochastic trials where removing the element flips the label.

    The baseline label comes from the exact forward pass; each trial draws an
    independent measurement seed. In exact mode the trials coincide, so the
    result is 0 or 1.
    """
    base_label = model.forward_exact(graph).class_probability > 0.5
    reduced = remove_element(graph, element, element_kind)
    if shots is None:
        out = model.forward_exact(reduced)
        return float((out.class_probability > 0.5) != base_label)
    flips = 0
    for t in range(trials):
        out = model.forward_shots(reduced, shots, spawn_seed(seed, t))
        flips += int((out.class_probability > 0.5) != base_label)
    return flips / trials


# ---------------------------------------------------------------------------
# The ensemble loop
# ---------------------------------------------------------------------------


@dataclass
class EnsembleConfig:
    num_surrogates: int = 30
    surrogate_kind: str = "hsic_l1"
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    lam: float = 1e-2
    shots: int | None = 2000
    master_seed: int = 0
    indecision_eps: float = 0.1
    tip_ks: tuple[int, ...] = (1, 3)
    flip_trials: int = 20
    compute_flips: bool = True  # ablation sweeps skip flips, reports do not use them
    resample_perturbations: bool = True  # False reuses one perturbation draw per surrogate
    kernel: KernelConfig = field(default_factory=KernelConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.num_surrogates < 1:
            raise ConfigError("num_surrogates must be >= 1")
        if self.surrogate_kind not in SURROGATE_KINDS:
            raise ConfigError(f"unknown surrogate kind {self.surrogate_kind!r}")


@dataclass
class EnsembleExplanation:
    graph_id: int
    element_kind: str
    surrogate_kind: str
    score_matrix: np.ndarray  # (m, num_elements)
    mean: np.ndarray
    tip: dict[int, np.ndarray]
    iqr: np.ndarray
    ci90: np.ndarray  # (num_elements, 2)
    flip: np.ndarray
    indecision: float
    nonconverged_rows: list[int]
    base_probabilities: np.ndarray | None = None

    @property
    def num_surrogates(self) -> int:
        return self.score_matrix.shape[0]

    @property
    def num_elements(self) -> int:
        return self.score_matrix.shape[1]

    def to_dict(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "element_kind": self.element_kind,
            "surrogate": self.surrogate_kind,
            "m": self.num_surrogates,
            "scores": [[float(x) for x in row] for row in self.score_matrix],
            "mean": [float(x) for x in self.mean],
            "tip_k": {str(k): [float(x) for x in v] for k, v in self.tip.items()},
            "iqr": [float(x) for x in self.iqr],
            "ci90": [[float(lo), float(hi)] for lo, hi in self.ci90],
            "flip": [float(x) for x in self.flip],
            "indecision": float(self.indecision),
            "nonconverged_rows": list(self.nonconverged_rows),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleExplanation":
        return cls(
            graph_id=int(d["graph_id"]),
            element_kind=d.get("element_kind", NODES),
            surrogate_kind=d.get("surrogate", "hsic_l1"),
            score_matrix=np.array(d["scores"], dtype=float),
            mean=np.array(d["mean"], dtype=float),
            tip={int(k): np.array(v, dtype=float) for k, v in d["tip_k"].items()},
            iqr=np.array(d["iqr"], dtype=float),
            ci90=np.array(d["ci90"], dtype=float),
            flip=np.array(d["flip"], dtype=float),
            indecision=float(d["indecision"]),
            nonconverged_rows=[int(i) for i in d["nonconverged_rows"]],
        )


def fit_surrogate(config: EnsembleConfig, graph: Graph, masks, outputs):
    """Fit the configured surrogate kind on one evaluated perturbation pass."""
    if config.surrogate_kind == "hsic_l1":
        return fit_hsic_l1(masks, outputs, config.lam, config.kernel, config.solver)
    if config.surrogate_kind == "hsic_group":
        groups = build_groups(graph, config.perturb.element_kind)
        return fit_hsic_group(masks, outputs, config.lam, groups, config.kernel, config.solver)
    return fit_logistic(masks, outputs, config.solver)


def surrogate_pass(
    graph: Graph, model: EDUQGCModel, config: EnsembleConfig, index: int
):
    """One surrogate's raw material: evaluated perturbations plus the base probe."""
    seed = config.master_seed
    perturb_seed = spawn_seed(
        seed, TAG_PERTURB, index if config.resample_perturbations else 0
    )
    pset = perturb(graph, config.perturb, perturb_seed)
    pset = evaluate_perturbations(
        pset, model, config.shots, spawn_seed(seed, TAG_EVAL, index)
    )
    if config.shots is None:
        base = model.forward_exact(graph).class_probability
    else:
        base = model.forward_shots(
            graph, config.shots, spawn_seed(seed, TAG_BASE, index)
        ).class_probability
    return pset, base


def explain_detailed(
    graph: Graph, model: EDUQGCModel, config: EnsembleConfig
) -> tuple[EnsembleExplanation, list]:
    """Like ``explain`` but also returns the evaluated perturbation sets."""
    rows = []
    base_probs = []
    nonconverged = []
    psets = []
    for i in range(config.num_surrogates):
        pset, base = surrogate_pass(graph, model, config, i)
        fit = fit_surrogate(config, graph, pset.masks, pset.outputs)
        rows.append(fit.scores)
        base_probs.append(base)
        psets.append(pset)
        if not fit.converged:
            nonconverged.append(i)
    score_matrix = np.vstack(rows)
    explanation = summarize_ensemble(
        graph, model, config, score_matrix, np.array(base_probs), nonconverged
    )
    return explanation, psets


def explain(graph: Graph, model: EDUQGCModel, config: EnsembleConfig) -> EnsembleExplanation:
    """Fit m surrogates on freshly perturbed, freshly measured model outputs.

    Deterministic given ``config.master_seed``. Non-converged surrogate rows
    are kept and reported, not dropped.
    """
    return explain_detailed(graph, model, config)[0]


def summarize_ensemble(
    graph: Graph,
    model: EDUQGCModel,
    config: EnsembleConfig,
    score_matrix: np.ndarray,
    base_probs: np.ndarray,
    nonconverged: list[int],
) -> EnsembleExplanation:
    """Aggregate a stacked score matrix into the full explanation record."""
    n_el = score_matrix.shape[1]
    iqr, ci90 = iqr_ci(score_matrix)
    ks = [k for k in config.tip_ks if 1 <= k <= n_el]
    if config.compute_flips:
        flip = np.array(
            [
                flip_probability(
                    graph,
                    model,
                    element,
                    trials=config.flip_trials,
                    shots=config.shots,
                    seed=spawn_seed(config.master_seed, TAG_FLIP, element),
                    element_kind=config.perturb.element_kind,
                )
                for element in range(n_el)
            ]
        )
    else:
        flip = np.zeros(n_el)
    return EnsembleExplanation(
        graph_id=graph.id,
        element_kind=config.perturb.element_kind,
        surrogate_kind=config.surrogate_kind,
        score_matrix=score_matrix,
        mean=score_matrix.mean(axis=0),
        tip={k: tip(score_matrix, k) for k in ks},
        iqr=iqr,
        ci90=ci90,
        flip=flip,
        indecision=indecision_fraction(base_probs, config.indecision_eps),
        nonconverged_rows=nonconverged,
        base_probabilities=base_probs,
    )
