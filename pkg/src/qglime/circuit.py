"""Exact statevector simulation of the entangling graph classifier.

One qubit per graph node, initial state |+> on every qubit. Each layer
applies the controlled-phase diag(1, 1, 1, e^{i*theta}) on every edge (these
commute, so the whole edge pass is one diagonal multiply) followed by the
shared single-qubit rotation Rz(c) Ry(b) Rz(a) on every node. Angle sharing
across nodes and edges is what makes the circuit equivariant under node
relabeling.

Readout: the per-node excitation probabilities P(qubit=1) feed a shared
tanh hidden layer, node outputs are mean-pooled, and a logistic squash
yields the class probability.

Basis convention: amplitude index i holds node v's bit at position
(n - 1 - v), i.e. node 0 is the most significant bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DataError, QubitBudgetError
from .graphs import Graph

HIDDEN_UNITS = 32


# ---------------------------------------------------------------------------
# Cached bit tables
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _bit_table(num_nodes: int) -> np.ndarray:
    """(2^n, n) uint8 table: column v holds node v's bit for each basis index."""
    idx = np.arange(1 << num_nodes, dtype=np.uint32)
    shifts = np.array([num_nodes - 1 - v for v in range(num_nodes)], dtype=np.uint32)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


@lru_cache(maxsize=16)
def _bit_table_f(num_nodes: int) -> np.ndarray:
    return _bit_table(num_nodes).astype(np.float64)


@lru_cache(maxsize=1024)
def _edge_counts(num_nodes: int, edges: tuple) -> np.ndarray:
    """Per basis state, the number of edges with both endpoints excited."""
    bits = _bit_table(num_nodes)
    counts = np.zeros(1 << num_nodes, dtype=np.int16)
    for u, v in edges:
        counts += bits[:, u] & bits[:, v]
    return counts


def _edge_mask(num_nodes: int, u: int, v: int) -> np.ndarray:
    bits = _bit_table(num_nodes)
    return (bits[:, u] & bits[:, v]).astype(bool)


def node_weight_vector(num_nodes: int, node_weights: np.ndarray) -> np.ndarray:
    """Diagonal weights w[z] = sum_v node_weights[v] * bit_v(z), built blockwise."""
    hi = num_nodes // 2
    lo = num_nodes - hi
    if hi == 0:
        return _bit_table_f(num_nodes) @ np.asarray(node_weights, dtype=float)
    w_hi = _bit_table_f(hi) @ node_weights[:hi]
    w_lo = _bit_table_f(lo) @ node_weights[hi:]
    return (w_hi[:, None] + w_lo[None, :]).reshape(-1)


# ---------------------------------------------------------------------------
# Gates
# ---------------------------------------------------------------------------


def rotation_z(phi: float) -> np.ndarray:
    return np.array(
        [[np.exp(-0.5j * phi), 0.0], [0.0, np.exp(0.5j * phi)]], dtype=complex
    )


def rotation_y(phi: float) -> np.ndarray:
    c, s = math.cos(phi / 2), math.sin(phi / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def node_unitary(a: float, b: float, c: float) -> np.ndarray:
    """Shared per-node rotation Rz(c) Ry(b) Rz(a); Rz(a) acts first."""
    return rotation_z(c) @ rotation_y(b) @ rotation_z(a)


def apply_single_qubit(state: np.ndarray, mat: np.ndarray, node: int) -> None:
    """Apply a 2x2 unitary to one qubit, in place."""
    view = state.reshape(1 << node, 2, -1)
    s0 = view[:, 0, :].copy()
    s1 = view[:, 1, :]
    view[:, 0, :] = mat[0, 0] * s0 + mat[0, 1] * s1
    view[:, 1, :] = mat[1, 0] * s0 + mat[1, 1] * s1


def apply_edge_phase(state: np.ndarray, num_nodes: int, u: int, v: int, theta: float) -> None:
    """Apply diag(1, 1, 1, e^{i*theta}) on the (u, v) qubit pair, in place."""
    state[_edge_mask(num_nodes, u, v)] *= np.exp(1j * theta)


_GROUP_QUBITS = 4  # node layer is applied in kron blocks of this many qubits


def _group_widths(num_nodes: int) -> list[int]:
    widths = [_GROUP_QUBITS] * (num_nodes // _GROUP_QUBITS)
    if num_nodes % _GROUP_QUBITS:
        widths.append(num_nodes % _GROUP_QUBITS)
    return widths


def _kron_power(mat: np.ndarray, width: int) -> np.ndarray:
    block = mat
    for _ in range(width - 1):
        block = np.kron(block, mat)
    return block


def _apply_blocked(state: np.ndarray, step_mats: list[np.ndarray]) -> np.ndarray:
    """Apply one matrix per qubit block, trailing block first, block layout rotating.

    Each step hits the trailing block of qubits with one GEMM whose output
    lands in a cyclically rotated qubit layout; after all steps the layout is
    back in the original order. This keeps every pass a contiguous BLAS call
    instead of n strided 2x2 updates.
    """
    for mat in step_mats:
        view = state.reshape(-1, mat.shape[0])
        state = np.matmul(mat, view.T).reshape(-1)
    return state


def _apply_node_layer(state: np.ndarray, num_nodes: int, mat: np.ndarray) -> np.ndarray:
    """Apply the same single-qubit unitary to every node; returns a new array."""
    widths = _group_widths(num_nodes)
    blocks = {w: _kron_power(mat, w) for w in set(widths)}
    return _apply_blocked(state, [blocks[w] for w in reversed(widths)])


def _kron_power_derivative(mat: np.ndarray, dmat: np.ndarray, width: int) -> np.ndarray:
    """d/dx of mat(x)^{kron width} given the single-factor derivative."""
    total = np.zeros((1 << width, 1 << width), dtype=complex)
    for j in range(width):
        factors = [dmat if k == j else mat for k in range(width)]
        block = factors[0]
        for f in factors[1:]:
            block = np.kron(block, f)
        total += block
    return total


def node_layer_derivative_state(
    state: np.ndarray, num_nodes: int, mat: np.ndarray, dmat: np.ndarray
) -> np.ndarray:
    """d/dx of the full node layer applied to ``state``.

    The derivative of a product of per-block kron powers is the sum, over
    blocks, of the pipeline with that one block's matrix replaced by the
    kron-power derivative.
    """
    widths = list(reversed(_group_widths(num_nodes)))
    blocks = {w: _kron_power(mat, w) for w in set(widths)}
    dblocks = {w: _kron_power_derivative(mat, dmat, w) for w in set(widths)}
    out = None
    for k in range(len(widths)):
        mats = [dblocks[w] if i == k else blocks[w] for i, w in enumerate(widths)]
        branch = _apply_blocked(state, mats)
        out = branch if out is None else out + branch
    return out


# ---------------------------------------------------------------------------
# Parameters and readout
# ---------------------------------------------------------------------------


@dataclass
class EDUQGCParams:
    """Layer-shared circuit angles: node_angles[l] = (a, b, c), edge_phases[l]."""

    node_angles: np.ndarray  # (num_layers, 3)
    edge_phases: np.ndarray  # (num_layers,)

    def __post_init__(self):
        self.node_angles = np.asarray(self.node_angles, dtype=float)
        self.edge_phases = np.asarray(self.edge_phases, dtype=float)
        if self.node_angles.shape != (self.num_layers, 3):
            raise ValueError("node_angles must have shape (num_layers, 3)")

    @property
    def num_layers(self) -> int:
        return len(self.edge_phases)

    def copy(self) -> "EDUQGCParams":
        return EDUQGCParams(self.node_angles.copy(), self.edge_phases.copy())


@dataclass
class ReadoutNetwork:
    """Shared scalar-to-scalar tanh network with mean pooling and a logistic output."""

    w1: np.ndarray  # (hidden,)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.b2 = float(self.b2)

    def node_scores(self, marginals: np.ndarray) -> np.ndarray:
        hidden = np.tanh(np.outer(marginals, self.w1) + self.b1)
        return hidden @ self.w2 + self.b2

    def predict(self, marginals: np.ndarray) -> float:
        pooled = float(np.mean(self.node_scores(marginals)))
        return 1.0 / (1.0 + math.exp(-pooled))

    def copy(self) -> "ReadoutNetwork":
        return ReadoutNetwork(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2)


@dataclass
class ModelOutput:
    """Graph-level class probability plus the per-node P(qubit=1) vector."""

    class_probability: float
    per_node_marginals: np.ndarray
    shots_used: int | None  # None means exact marginals


@dataclass
class EDUQGCModel:
    """Circuit parameters plus classical readout: the black box being explained."""

    params: EDUQGCParams
    readout: ReadoutNetwork

    def forward_exact(self, graph: Graph) -> ModelOutput:
        return forward_exact(graph, self.params, self.readout)

    def forward_shots(self, graph: Graph, shots: int, seed) -> ModelOutput:
        return forward_shots(graph, self.params, self.readout, shots, seed)

    def forward(self, graph: Graph, shots: int | None, seed=None) -> ModelOutput:
        if shots is None:
            return self.forward_exact(graph)
        return self.forward_shots(graph, shots, seed)

    def copy(self) -> "EDUQGCModel":
        return EDUQGCModel(self.params.copy(), self.readout.copy())


def init_model(seed: int, num_layers: int = 2, hidden: int = HIDDEN_UNITS) -> EDUQGCModel:
    """Fresh model: small node angles, edge phases bounded away from zero so the
    entangling gradients do not start on the symmetric saddle."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    node_angles = rng.uniform(-0.1, 0.1, size=(num_layers, 3))
    edge_phases = rng.uniform(0.1, 0.5, size=num_layers)
    scale = math.sqrt(2.0 / (hidden + 1))
    readout = ReadoutNetwork(
        w1=rng.normal(0.0, scale, size=hidden),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, scale, size=hidden),
        b2=0.0,
    )
    return EDUQGCModel(EDUQGCParams(node_angles, edge_phases), readout)


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------


def _check_budget(graph: Graph) -> None:
    if graph.num_nodes > 16:
        raise QubitBudgetError(f"{graph.num_nodes} qubits exceed the 16-qubit budget")


def initial_state(num_nodes: int) -> np.ndarray:
    state = np.full(1 << num_nodes, 2.0 ** (-num_nodes / 2), dtype=complex)
    return state


def _edge_layer(state: np.ndarray, counts: np.ndarray, theta: float) -> np.ndarray:
    if theta == 0.0:
        return state
    # counts takes few distinct values; a phase lookup table beats exp(2^n).
    lut = np.exp(1j * theta * np.arange(int(counts.max()) + 1))
    return state * lut[counts]


def evolve(
    graph: Graph, params: EDUQGCParams, keep_layer_states: bool = False
) -> np.ndarray | tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Run the full circuit; optionally capture per-layer intermediate states.

    With ``keep_layer_states`` the return value is
    (final, post_edge_states, post_node_states), one entry per layer. The
    captured states are what the gradient routines restart from.
    """
    _check_budget(graph)
    counts = _edge_counts(graph.num_nodes, graph.edges)
    state = initial_state(graph.num_nodes)
    post_edge: list[np.ndarray] = []
    post_node: list[np.ndarray] = []
    for layer in range(params.num_layers):
        state = _edge_layer(state, counts, params.edge_phases[layer])
        if keep_layer_states:
            post_edge.append(state)
        state = _apply_node_layer(state, graph.num_nodes, node_unitary(*params.node_angles[layer]))
        if keep_layer_states:
            post_node.append(state)
    if keep_layer_states:
        return state, post_edge, post_node
    return state


def evolve_suffix(
    state: np.ndarray, graph: Graph, params: EDUQGCParams, from_layer: int
) -> np.ndarray:
    """Evolve ``state`` through layers ``from_layer``..end (edge pass included)."""
    counts = _edge_counts(graph.num_nodes, graph.edges)
    for layer in range(from_layer, params.num_layers):
        state = _edge_layer(state, counts, params.edge_phases[layer])
        state = _apply_node_layer(state, graph.num_nodes, node_unitary(*params.node_angles[layer]))
    return state


def marginals_from_state(state: np.ndarray, num_nodes: int) -> np.ndarray:
    """Exact P(qubit=1) per node, extracted blockwise to stay one-pass."""
    probs = np.abs(state) ** 2
    hi = num_nodes // 2
    lo = num_nodes - hi
    if hi == 0:
        return probs @ _bit_table_f(num_nodes)
    grid = probs.reshape(1 << hi, 1 << lo)
    rows = grid.sum(axis=1)
    cols = grid.sum(axis=0)
    return np.concatenate([rows @ _bit_table_f(hi), cols @ _bit_table_f(lo)])


def sample_bitstrings(
    state: np.ndarray, shots: int, rng: np.random.Generator
) -> np.ndarray:
    """Sample basis-state indices from |amplitude|^2 via inverse-CDF lookup.

    Full bitstrings are sampled (not per-node marginals) so inter-node
    measurement correlations survive in downstream statistics.
    """
    probs = np.abs(state) ** 2
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    draws = rng.random(shots)
    idx = np.searchsorted(cdf, draws, side="right")
    return np.minimum(idx, len(state) - 1)


def empirical_marginals(
    state: np.ndarray, num_nodes: int, shots: int, rng: np.random.Generator
) -> np.ndarray:
    idx = sample_bitstrings(state, shots, rng)
    bits = _bit_table(num_nodes)[idx]
    return bits.mean(axis=0)


def forward_exact(graph: Graph, params: EDUQGCParams, readout: ReadoutNetwork) -> ModelOutput:
    """Exact marginals and class probability; pure function of its arguments."""
    state = evolve(graph, params)
    marg = marginals_from_state(state, graph.num_nodes)
    return ModelOutput(readout.predict(marg), marg, shots_used=None)


def forward_shots(
    graph: Graph,
    params: EDUQGCParams,
    readout: ReadoutNetwork,
    shots: int,
    seed,
) -> ModelOutput:
    """Shot-based forward pass: empirical frequencies replace exact marginals."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    state = evolve(graph, params)
    marg = empirical_marginals(state, graph.num_nodes, shots, rng)
    return ModelOutput(readout.predict(marg), marg, shots_used=shots)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def model_to_dict(model: EDUQGCModel) -> dict:
    p, r = model.params, model.readout
    return {
        "version": 1,
        "num_layers": p.num_layers,
        "node_angles": [[float(x) for x in row] for row in p.node_angles],
        "edge_phases": [float(x) for x in p.edge_phases],
        "readout": {
            "w1": [float(x) for x in r.w1],
            "b1": [float(x) for x in r.b1],
            "w2": [float(x) for x in r.w2],
            "b2": float(r.b2),
        },
    }


def model_from_dict(d: dict) -> EDUQGCModel:
    try:
        if d["version"] != 1:
            raise DataError(f"unsupported checkpoint version {d['version']}")
        params = EDUQGCParams(
            node_angles=np.array(d["node_angles"], dtype=float),
            edge_phases=np.array(d["edge_phases"], dtype=float),
        )
        r = d["readout"]
        readout = ReadoutNetwork(
            w1=np.array(r["w1"], dtype=float),
            b1=np.array(r["b1"], dtype=float),
            w2=np.array(r["w2"], dtype=float),
            b2=float(r["b2"]),
        )
        return EDUQGCModel(params, readout)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed checkpoint: {exc}") from exc


def save_checkpoint(model: EDUQGCModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_checkpoint(path: str | Path) -> EDUQGCModel:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"checkpoint file not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed checkpoint JSON: {exc}") from exc
    return model_from_dict(payload)
