"""Supervised training of the graph classifier.

The loss is binary cross-entropy on the graph-level class probability,
optimized with Adam. Readout gradients are analytic. Quantum-parameter
gradients come in two interchangeable flavors:

* ``quantum_gradient`` evaluates the two-term parameter-shift rule (shift
  pi/2, coefficient 1/2) once per gate occurrence of each shared angle and
  sums the contributions. Both the node rotations and the edge phase have
  unit eigenvalue gap, so the same rule covers every parameter.
* ``analytic_gradient`` propagates derivative statevectors forward instead.
  It returns the same numbers to machine precision (both are exact) at a
  fraction of the circuit evaluations, so it is the training default.

Both flavors chain through the same analytic readout backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuit import (
    EDUQGCModel,
    EDUQGCParams,
    ReadoutNetwork,
    _apply_node_layer,
    _edge_counts,
    _edge_mask,
    apply_single_qubit,
    empirical_marginals,
    evolve,
    evolve_suffix,
    forward_exact,
    forward_shots,
    init_model,
    marginals_from_state,
    node_layer_derivative_state,
    node_unitary,
    node_weight_vector,
    rotation_y,
    rotation_z,
)
from .errors import NumericalError
from .graphs import Dataset, Graph
from .seeds import TAG_EVAL_EPOCH, TAG_GRAD, TAG_INIT, TAG_SHUFFLE, spawn_rng, spawn_seed

PROB_CLAMP = 1e-7


def bce_loss(p: float, y: int) -> float:
    """Binary cross-entropy with the probability clamped to [1e-7, 1 - 1e-7]."""
    p = min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


@dataclass
class GradientBundle:
    """Loss, prediction, and gradients for every trainable parameter."""

    loss: float
    probability: float
    node_angles: np.ndarray  # (num_layers, 3)
    edge_phases: np.ndarray  # (num_layers,)
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float


def _readout_backward(
    readout: ReadoutNetwork, marginals: np.ndarray, label: int
) -> tuple[float, float, np.ndarray, dict]:
    """Loss, probability, dL/d(marginals), and readout weight gradients."""
    n = len(marginals)
    hidden = np.tanh(np.outer(marginals, readout.w1) + readout.b1)  # (n, h)
    pooled = float(np.mean(hidden @ readout.w2 + readout.b2))
    prob = 1.0 / (1.0 + math.exp(-pooled))
    loss = bce_loss(prob, label)
    if PROB_CLAMP < prob < 1.0 - PROB_CLAMP:
        dpool = prob - label
    else:
        dpool = 0.0  # clamped region: the loss is flat in the prediction
    dscore = dpool / n
    dhidden = dscore * readout.w2  # (h,), same for every node before tanh'
    dpre = (1.0 - hidden**2) * dhidden  # (n, h)
    grads = {
        "w2": dpool * hidden.mean(axis=0),
        "b2": dpool,
        "w1": dpre.T @ marginals,
        "b1": dpre.sum(axis=0),
    }
    dmarg = dpre @ readout.w1
    return loss, prob, dmarg, grads


def _weighted_excitation(state: np.ndarray, weights: np.ndarray) -> float:
    probs = state.real**2 + state.imag**2
    return float(probs @ weights)


def _node_rotation_derivatives(a: float, b: float, c: float) -> list[np.ndarray]:
    """d/d{a,b,c} of Rz(c) Ry(b) Rz(a)."""
    dz = np.array([[-0.5j, 0.0], [0.0, 0.5j]])
    ky = 0.5 * np.array([[0.0, -1.0], [1.0, 0.0]], dtype=complex)
    rza, ryb, rzc = rotation_z(a), rotation_y(b), rotation_z(c)
    return [rzc @ ryb @ (dz @ rza), rzc @ (ky @ ryb) @ rza, (dz @ rzc) @ ryb @ rza]


def quantum_gradient(
    graph: Graph,
    params: EDUQGCParams,
    readout: ReadoutNetwork,
    label: int,
    shots: int | None = None,
    seed=None,
) -> GradientBundle:
    """Loss gradient with quantum parameters differentiated by parameter shift.

    Every shared angle is shifted by +-pi/2 at one gate occurrence at a time;
    the occurrence contributions 0.5 * [f(+) - f(-)] sum to the derivative of
    the shared parameter. Shift circuits restart from cached mid-circuit
    states, so only the suffix after the shifted gate is re-evolved.
    """
    n = graph.num_nodes
    rng = np.random.default_rng(seed) if shots is not None else None
    final, post_edge, post_node = evolve(graph, params, keep_layer_states=True)
    if shots is None:
        marg = marginals_from_state(final, n)
    else:
        marg = empirical_marginals(final, n, shots, rng)
    loss, prob, dmarg, ro_grads = _readout_backward(readout, marg, label)
    weights = node_weight_vector(n, dmarg)

    def eval_weighted(state: np.ndarray) -> float:
        if shots is None:
            return _weighted_excitation(state, weights)
        return float(dmarg @ empirical_marginals(state, n, shots, rng))

    grad_angles = np.zeros_like(params.node_angles)
    grad_phases = np.zeros_like(params.edge_phases)
    for layer in range(params.num_layers):
        a, b, c = params.node_angles[layer]
        unitary = node_unitary(a, b, c)
        inv = unitary.conj().T
        for slot in range(3):
            for sign in (1.0, -1.0):
                shifted = params.node_angles[layer].copy()
                shifted[slot] += sign * math.pi / 2
                move = node_unitary(*shifted) @ inv
                for v in range(n):
                    state = post_node[layer].copy()
                    apply_single_qubit(state, move, v)
                    state = evolve_suffix(state, graph, params, layer + 1)
                    grad_angles[layer, slot] += sign * 0.5 * eval_weighted(state)
        for u, v in graph.edges:
            mask = _edge_mask(n, u, v)
            for sign in (1.0, -1.0):
                state = post_edge[layer].copy()
                state[mask] *= sign * 1j
                state = _apply_node_layer(state, n, unitary)
                state = evolve_suffix(state, graph, params, layer + 1)
                grad_phases[layer] += sign * 0.5 * eval_weighted(state)
    return GradientBundle(loss, prob, grad_angles, grad_phases, **ro_grads)


def analytic_gradient(
    graph: Graph,
    params: EDUQGCParams,
    readout: ReadoutNetwork,
    label: int,
) -> GradientBundle:
    """Forward-mode derivative-state gradient; equals ``quantum_gradient`` exactly.

    d p_v / d theta = 2 Re <d psi | P_v | psi>, and the derivative state for a
    layer-shared angle is the sum over gate occurrences of the layer state hit
    by (dU) U^dagger, evolved through the remaining layers. Exact mode only.
    """
    n = graph.num_nodes
    counts = _edge_counts(n, graph.edges)
    final, post_edge, post_node = evolve(graph, params, keep_layer_states=True)
    marg = marginals_from_state(final, n)
    loss, prob, dmarg, ro_grads = _readout_backward(readout, marg, label)
    weights = node_weight_vector(n, dmarg)
    paired = weights * final  # 2 Re <d | paired> gives the weighted marginal derivative

    grad_angles = np.zeros_like(params.node_angles)
    grad_phases = np.zeros_like(params.edge_phases)
    for layer in range(params.num_layers):
        a, b, c = params.node_angles[layer]
        unitary = node_unitary(a, b, c)
        for slot, dmat in enumerate(_node_rotation_derivatives(a, b, c)):
            acc = node_layer_derivative_state(post_edge[layer], n, unitary, dmat)
            acc = evolve_suffix(acc, graph, params, layer + 1)
            grad_angles[layer, slot] = 2.0 * np.real(np.vdot(acc, paired))
        branch = post_edge[layer] * (1j * counts)
        branch = _apply_node_layer(branch, n, unitary)
        branch = evolve_suffix(branch, graph, params, layer + 1)
        grad_phases[layer] = 2.0 * np.real(np.vdot(branch, paired))
    return GradientBundle(loss, prob, grad_angles, grad_phases, **ro_grads)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    shots: int | None = None  # None trains on exact marginals
    seed: int = 0
    gradient_method: str = "analytic"  # "analytic" or "shift"; identical values

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.gradient_method not in ("analytic", "shift"):
            raise ValueError(f"unknown gradient method {self.gradient_method!r}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float


@dataclass
class TrainReport:
    rows: list[EpochStats] = field(default_factory=list)

    @property
    def final_test_accuracy(self) -> float:
        return self.rows[-1].test_acc if self.rows else float("nan")

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,test_acc"]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.train_acc!r},{r.test_acc!r}")
        return "\n".join(lines) + "\n"

    def save_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def _flatten(params: EDUQGCParams, readout: ReadoutNetwork) -> np.ndarray:
    return np.concatenate(
        [
            params.node_angles.ravel(),
            params.edge_phases,
            readout.w1,
            readout.b1,
            readout.w2,
            [readout.b2],
        ]
    )


def _unflatten(vec: np.ndarray, num_layers: int, hidden: int) -> tuple[EDUQGCParams, ReadoutNetwork]:
    i = 0
    angles = vec[i : i + 3 * num_layers].reshape(num_layers, 3).copy()
    i += 3 * num_layers
    phases = vec[i : i + num_layers].copy()
    i += num_layers
    w1 = vec[i : i + hidden].copy()
    i += hidden
    b1 = vec[i : i + hidden].copy()
    i += hidden
    w2 = vec[i : i + hidden].copy()
    i += hidden
    b2 = float(vec[i])
    return EDUQGCParams(angles, phases), ReadoutNetwork(w1, b1, w2, b2)


def _flatten_grads(g: GradientBundle) -> np.ndarray:
    return np.concatenate(
        [g.node_angles.ravel(), g.edge_phases, g.w1, g.b1, g.w2, [g.b2]]
    )


def _graph_gradient(
    graph: Graph, params, readout, config: TrainConfig, shot_seed: int | None
) -> GradientBundle:
    if config.shots is not None:
        return quantum_gradient(
            graph, params, readout, graph.label, shots=config.shots, seed=shot_seed
        )
    if config.gradient_method == "shift":
        return quantum_gradient(graph, params, readout, graph.label)
    return analytic_gradient(graph, params, readout, graph.label)


def _evaluate(model: EDUQGCModel, graphs, shots: int | None, seed: int, tag: int):
    """Mean loss and accuracy over a graph list."""
    losses, hits = [], 0
    for g in graphs:
        if shots is None:
            out = forward_exact(g, model.params, model.readout)
        else:
            out = forward_shots(
                g, model.params, model.readout, shots, spawn_seed(seed, tag, g.id)
            )
        losses.append(bce_loss(out.class_probability, g.label))
        hits += int((out.class_probability > 0.5) == bool(g.label))
    return float(np.mean(losses)), hits / len(graphs)


def train(dataset: Dataset, config: TrainConfig) -> tuple[EDUQGCModel, TrainReport]:
    """Minibatch Adam over BCE; deterministic given ``config.seed``.

    With ``epochs == 0`` the returned model is the untouched initialization.
    Divergence (non-finite loss) aborts with a diagnostic.
    """
    model = init_model(spawn_seed(config.seed, TAG_INIT))
    hidden = len(model.readout.w1)
    num_layers = model.params.num_layers
    theta = _flatten(model.params, model.readout)
    adam_m = np.zeros_like(theta)
    adam_v = np.zeros_like(theta)
    step = 0
    report = TrainReport()

    for epoch in range(config.epochs):
        order = spawn_rng(config.seed, TAG_SHUFFLE, epoch).permutation(len(dataset.train))
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = [dataset.train[i] for i in order[lo : lo + config.batch_size]]
            params, readout = _unflatten(theta, num_layers, hidden)
            grad = np.zeros_like(theta)
            for j, g in enumerate(batch):
                shot_seed = (
                    spawn_seed(config.seed, TAG_GRAD, epoch, lo + j)
                    if config.shots is not None
                    else None
                )
                bundle = _graph_gradient(g, params, readout, config, shot_seed)
                if not math.isfinite(bundle.loss):
                    raise NumericalError(
                        f"training diverged at epoch {epoch}: loss={bundle.loss}"
                    )
                grad += _flatten_grads(bundle) / len(batch)
                epoch_losses.append(bundle.loss)
            step += 1
            adam_m = config.beta1 * adam_m + (1 - config.beta1) * grad
            adam_v = config.beta2 * adam_v + (1 - config.beta2) * grad**2
            m_hat = adam_m / (1 - config.beta1**step)
            v_hat = adam_v / (1 - config.beta2**step)
            theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)

        params, readout = _unflatten(theta, num_layers, hidden)
        model = EDUQGCModel(params, readout)
        _, train_acc = _evaluate(model, dataset.train, config.shots, config.seed, TAG_EVAL_EPOCH)
        _, test_acc = _evaluate(model, dataset.test, config.shots, config.seed, TAG_EVAL_EPOCH)
        report.rows.append(
            EpochStats(epoch, float(np.mean(epoch_losses)), train_acc, test_acc)
        )

    params, readout = _unflatten(theta, num_layers, hidden)
    return EDUQGCModel(params, readout), report
