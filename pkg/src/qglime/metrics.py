"""Dataset-level evaluation of explanations against ground-truth targets.

Rankings come from ensemble-mean scores with the fixed tie rule (stable
descending sort, lowest index first). Accuracy variants report mean and
population standard deviation over the evaluated test graphs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .circuit import EDUQGCModel
from .ensemble import EnsembleExplanation, tip, topk_indices
from .graphs import Graph, remove_nodes
from .perturb import NODES
from .seeds import TAG_FIDELITY, TAG_RANDOM, spawn_rng, spawn_seed

ACCURACY_VARIANTS = {
    "one_at_1": ("one", 1),
    "one_at_2": ("one", 2),
    "one_at_3": ("one", 3),
    "one_at_6": ("one", 6),
    "both_at_2": ("both", 2),
    "both_at_6": ("both", 6),
}


@dataclass
class MetricValue:
    mean: float
    std: float
    per_graph: list[float] = field(default_factory=list)


@dataclass
class MetricsReport:
    method: str
    case_id: str
    values: dict[str, MetricValue] = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["method,metric,mean,std"]
        for name, v in self.values.items():
            lines.append(f"{self.method},{name},{v.mean!r},{v.std!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "case": self.case_id,
            "metrics": {
                name: {"mean": v.mean, "std": v.std, "per_graph": v.per_graph}
                for name, v in self.values.items()
            },
        }


def _mean_std(values: list[float]) -> MetricValue:
    arr = np.asarray(values, dtype=float)
    if np.isinf(arr).any():
        # the +inf sentinel (all mass on targets) dominates the mean
        return MetricValue(float("inf"), float("nan"), [float(x) for x in values])
    return MetricValue(float(arr.mean()), float(arr.std()), [float(x) for x in values])


def _check_alignment(explanations: list[EnsembleExplanation], graphs: list[Graph]):
    if len(explanations) != len(graphs):
        raise ValueError("one explanation per graph is required")
    for e, g in zip(explanations, graphs):
        if e.graph_id != g.id:
            raise ValueError(f"explanation {e.graph_id} does not match graph {g.id}")


def topk_accuracy(
    explanations: list[EnsembleExplanation], graphs: list[Graph], variant: str
) -> MetricValue:
    """One@k: any target in the top k of the mean scores; Both@k: all targets."""
    if variant not in ACCURACY_VARIANTS:
        raise ValueError(f"unknown accuracy variant {variant!r}")
    mode, k = ACCURACY_VARIANTS[variant]
    _check_alignment(explanations, graphs)
    hits = []
    for e, g in zip(explanations, graphs):
        if not g.targets:
            raise ValueError(f"graph {g.id} has no targets for variant {variant}")
        top = set(topk_indices(e.mean, min(k, e.num_elements)).tolist())
        if mode == "one":
            hits.append(float(any(t in top for t in g.targets)))
        else:
            hits.append(float(all(t in top for t in g.targets)))
    return _mean_std(hits)


def fidelity(
    explanations: list[EnsembleExplanation],
    graphs: list[Graph],
    model: EDUQGCModel,
    k: int,
    mode: str,
    shots: int | None = 2000,
    seed: int = 0,
    trials: int = 20,
) -> tuple[MetricValue, MetricValue]:
    """Label agreement under keep-top-k ("plus") or remove-top-k ("minus").

    Per graph, the baseline label is the exact-mode prediction; the intervened
    graph is re-evaluated ``trials`` times with independent measurement seeds
    and agreement is the matching fraction. Alongside the label agreement, a
    probability agreement 1 - |p_base - p_intervened| (exact mode) is
    returned. Graphs whose intervention would remove every node are skipped
    with a warning.
    """
    if mode not in ("plus", "minus"):
        raise ValueError(f"fidelity mode must be 'plus' or 'minus', got {mode!r}")
    _check_alignment(explanations, graphs)
    label_agreement, prob_agreement = [], []
    for e, g in zip(explanations, graphs):
        top = topk_indices(e.mean, min(k, g.num_nodes)).tolist()
        removed = sorted(set(range(g.num_nodes)) - set(top)) if mode == "plus" else top
        if len(removed) >= g.num_nodes:
            warnings.warn(f"fidelity[{mode}] would empty graph {g.id}; skipped")
            continue
        base = model.forward_exact(g)
        base_label = base.class_probability > 0.5
        intervened = remove_nodes(g, removed)
        exact = model.forward_exact(intervened)
        prob_agreement.append(1.0 - abs(base.class_probability - exact.class_probability))
        if shots is None:
            label_agreement.append(float((exact.class_probability > 0.5) == base_label))
            continue
        agree = 0
        for t in range(trials):
            out = model.forward_shots(
                intervened, shots, spawn_seed(seed, TAG_FIDELITY, g.id, t)
            )
            agree += int((out.class_probability > 0.5) == base_label)
        label_agreement.append(agree / trials)
    if not label_agreement:
        raise ValueError("every graph was skipped; fidelity undefined")
    return _mean_std(label_agreement), _mean_std(prob_agreement)


def sparsity(mean_scores: np.ndarray) -> float:
    """1 - fraction of elements scoring at least 10% of the maximum score."""
    s = np.asarray(mean_scores, dtype=float)
    if s.size == 0:
        raise ValueError("empty score vector")
    threshold = 0.1 * s.max()
    return 1.0 - float(np.sum(s >= threshold)) / s.size


def consensus(
    explanations: list[EnsembleExplanation], graphs: list[Graph], k: int
) -> MetricValue:
    """Across surrogates, how often each target lands in the top k; graph-averaged."""
    _check_alignment(explanations, graphs)
    per_graph = []
    for e, g in zip(explanations, graphs):
        if not g.targets:
            raise ValueError(f"graph {g.id} has no targets; consensus undefined")
        inclusion = tip(e.score_matrix, min(k, e.num_elements))
        per_graph.append(float(np.mean([inclusion[t] for t in sorted(g.targets)])))
    return _mean_std(per_graph)


def relative_importance(mean_scores: np.ndarray, targets: set[int]) -> float:
    """Mean target score over mean non-target score; +inf when non-targets score 0."""
    s = np.asarray(mean_scores, dtype=float)
    target_idx = sorted(targets)
    rest_idx = [i for i in range(len(s)) if i not in targets]
    if not target_idx or not rest_idx:
        raise ValueError("relative importance needs both targets and non-targets")
    rest_mean = float(s[rest_idx].mean())
    target_mean = float(s[target_idx].mean())
    if rest_mean <= 0:
        return float("inf")
    return target_mean / rest_mean


def relative_importance_metric(
    explanations: list[EnsembleExplanation], graphs: list[Graph]
) -> MetricValue:
    _check_alignment(explanations, graphs)
    values = [relative_importance(e.mean, g.targets) for e, g in zip(explanations, graphs)]
    return _mean_std(values)


def random_explainer(graph: Graph, seed: int, element_kind: str = NODES) -> np.ndarray:
    """Null baseline: i.i.d. Uniform(0, 1) score per element."""
    n_el = graph.num_nodes if element_kind == NODES else graph.num_edges
    return spawn_rng(seed, TAG_RANDOM, graph.id).random(n_el)


def random_explanations(
    graphs: list[Graph], seed: int, element_kind: str = NODES
) -> list[EnsembleExplanation]:
    """Degenerate single-row explanations built from the random baseline."""
    out = []
    for g in graphs:
        scores = random_explainer(g, seed, element_kind)
        matrix = scores[None, :]
        iqr = np.zeros_like(scores)
        ci = np.stack([scores, scores], axis=1)
        out.append(
            EnsembleExplanation(
                graph_id=g.id,
                element_kind=element_kind,
                surrogate_kind="random",
                score_matrix=matrix,
                mean=scores.copy(),
                tip={},
                iqr=iqr,
                ci90=ci,
                flip=np.zeros_like(scores),
                indecision=0.0,
                nonconverged_rows=[],
            )
        )
    return out


def case_variants(case_id: str) -> list[str]:
    if case_id == "Case1":
        return ["one_at_1", "one_at_3"]
    return ["both_at_2", "both_at_6", "one_at_2", "one_at_6"]


def default_k(case_id: str) -> int:
    # Matches the target count: one hub in Case1, two hubs in Case2.
    return 1 if case_id == "Case1" else 2


def evaluate_explanations(
    explanations: list[EnsembleExplanation],
    graphs: list[Graph],
    model: EDUQGCModel,
    case_id: str,
    method: str,
    k: int | None = None,
    shots: int | None = 2000,
    seed: int = 0,
    fidelity_trials: int = 20,
) -> MetricsReport:
    """Assemble the full per-method metric table for one explanation run."""
    k = default_k(case_id) if k is None else k
    report = MetricsReport(method=method, case_id=case_id)
    for variant in case_variants(case_id):
        report.values[variant] = topk_accuracy(explanations, graphs, variant)
    fid_minus, fid_minus_prob = fidelity(
        explanations, graphs, model, k, "minus", shots, seed, fidelity_trials
    )
    fid_plus, fid_plus_prob = fidelity(
        explanations, graphs, model, k, "plus", shots, seed, fidelity_trials
    )
    report.values["fid_minus"] = fid_minus
    report.values["fid_plus"] = fid_plus
    report.values["fid_minus_prob"] = fid_minus_prob
    report.values["fid_plus_prob"] = fid_plus_prob
    report.values["sparsity"] = _mean_std([sparsity(e.mean) for e in explanations])
    report.values["consensus"] = consensus(explanations, graphs, k)
    report.values["relative_importance"] = relative_importance_metric(explanations, graphs)
    report.values["indecision"] = _mean_std([e.indecision for e in explanations])
    return report
