import json
import math

import numpy as np
import pytest

from qglime.circuit import (
    EDUQGCModel,
    EDUQGCParams,
    ReadoutNetwork,
    _edge_counts,
    apply_edge_phase,
    apply_single_qubit,
    evolve,
    forward_exact,
    forward_shots,
    init_model,
    initial_state,
    load_checkpoint,
    marginals_from_state,
    model_from_dict,
    model_to_dict,
    node_unitary,
    node_weight_vector,
    save_checkpoint,
)
from qglime.graphs import Graph, apply_permutation, make_cycle, make_wheel
from qglime.errors import QubitBudgetError


def random_graph(rng, max_nodes=10) -> Graph:
    n = int(rng.integers(2, max_nodes + 1))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    keep = [p for p in pairs if rng.random() < 0.4]
    return Graph(id=0, num_nodes=n, edges=tuple(keep), label=0)


def random_params(rng, num_layers=2) -> EDUQGCParams:
    return EDUQGCParams(
        node_angles=rng.uniform(-math.pi, math.pi, size=(num_layers, 3)),
        edge_phases=rng.uniform(-math.pi, math.pi, size=num_layers),
    )


class TestForwardExact:
    def test_identity_circuit_on_plus_states(self):
        g = make_wheel(5, 0, rng_seed=1)
        params = EDUQGCParams(np.zeros((2, 3)), np.array([0.7, -0.3]))
        out = forward_exact(g, params, init_model(0).readout)
        # diagonal edge phases never move computational-basis marginals
        assert np.allclose(out.per_node_marginals, 0.5, atol=1e-12)

    def test_ry_pi_on_single_node(self):
        g = Graph(id=0, num_nodes=1, edges=(), label=0)
        params = EDUQGCParams(np.array([[0.0, math.pi, 0.0]]), np.array([0.0]))
        out = forward_exact(g, params, init_model(0).readout)
        # Ry(pi) maps |+> to -|->, still on the equator
        assert out.per_node_marginals[0] == pytest.approx(0.5, abs=1e-12)

    def test_zero_entanglement_marginals_uniform(self):
        rng = np.random.default_rng(3)
        g = make_wheel(6, 2, rng_seed=5)
        params = EDUQGCParams(rng.uniform(-1, 1, (2, 3)), np.zeros(2))
        out = forward_exact(g, params, init_model(0).readout)
        assert np.ptp(out.per_node_marginals) < 1e-12

    def test_norm_preserved(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            g = random_graph(rng)
            state = evolve(g, random_params(rng))
            assert abs(np.linalg.norm(state) - 1.0) < 1e-10

    def test_qubit_budget(self):
        g = make_wheel(12, 0, rng_seed=0)
        big = Graph(id=0, num_nodes=16, edges=g.edges, label=0)
        # 16 nodes still fine; Graph construction already rejects 17+
        forward_exact(big, EDUQGCParams(np.zeros((1, 3)), np.zeros(1)), init_model(0).readout)
        with pytest.raises(QubitBudgetError):
            Graph(id=0, num_nodes=17, edges=(), label=0)


class TestEdgeUnitaries:
    def test_edge_order_irrelevant_and_matches_fast_path(self):
        rng = np.random.default_rng(5)
        g = make_wheel(5, 1, rng_seed=2)
        theta = 0.83
        fast = initial_state(g.num_nodes)
        fast = fast * np.exp(1j * theta * _edge_counts(g.num_nodes, g.edges))
        for _ in range(5):
            order = rng.permutation(g.num_edges)
            state = initial_state(g.num_nodes)
            for idx in order:
                u, v = g.edges[idx]
                apply_edge_phase(state, g.num_nodes, u, v, theta)
            assert np.abs(state - fast).max() < 1e-12

    def test_single_qubit_application_unitary(self):
        rng = np.random.default_rng(6)
        state = rng.normal(size=8) + 1j * rng.normal(size=8)
        state /= np.linalg.norm(state)
        mat = node_unitary(0.3, -0.8, 1.1)
        apply_single_qubit(state, mat, 1)
        assert abs(np.linalg.norm(state) - 1.0) < 1e-12


class TestEquivariance:
    def test_class_probability_invariant_and_marginals_covariant(self):
        rng = np.random.default_rng(7)
        readout = init_model(1).readout
        for _ in range(30):
            g = random_graph(rng)
            params = random_params(rng)
            perm = list(rng.permutation(g.num_nodes))
            base = forward_exact(g, params, readout)
            moved = forward_exact(apply_permutation(g, perm), params, readout)
            assert moved.class_probability == pytest.approx(
                base.class_probability, abs=1e-9
            )
            for old, new in enumerate(perm):
                assert moved.per_node_marginals[new] == pytest.approx(
                    base.per_node_marginals[old], abs=1e-9
                )

    def test_rim_swap_is_exact_symmetry(self):
        g = make_wheel(6, 0, rng_seed=0)
        params = random_params(np.random.default_rng(8))
        readout = init_model(2).readout
        rims = [v for v in range(g.num_nodes) if v not in g.targets]
        perm = list(range(g.num_nodes))
        perm[rims[0]], perm[rims[1]] = perm[rims[1]], perm[rims[0]]
        h = apply_permutation(g, perm)
        pa = forward_exact(g, params, readout).class_probability
        pb = forward_exact(h, params, readout).class_probability
        assert pa == pytest.approx(pb, abs=1e-12)


class TestShots:
    def test_same_seed_identical(self):
        g = make_wheel(5, 2, rng_seed=3)
        params = random_params(np.random.default_rng(9))
        readout = init_model(3).readout
        a = forward_shots(g, params, readout, 500, seed=42)
        b = forward_shots(g, params, readout, 500, seed=42)
        assert np.array_equal(a.per_node_marginals, b.per_node_marginals)
        c = forward_shots(g, params, readout, 500, seed=43)
        assert not np.array_equal(a.per_node_marginals, c.per_node_marginals)

    def test_convergence_to_exact(self):
        g = make_wheel(6, 1, rng_seed=4)
        params = random_params(np.random.default_rng(10))
        readout = init_model(4).readout
        exact = forward_exact(g, params, readout)
        emp = forward_shots(g, params, readout, 100_000, seed=0)
        assert np.abs(emp.per_node_marginals - exact.per_node_marginals).max() < 0.01

    def test_deviation_bound(self):
        # |p_hat - p| <= 3 sqrt(0.25/s) on at least 99% of (node, seed) pairs
        g = make_wheel(7, 3, rng_seed=5)
        params = random_params(np.random.default_rng(11))
        readout = init_model(5).readout
        exact = forward_exact(g, params, readout).per_node_marginals
        shots = 2000
        bound = 3.0 * math.sqrt(0.25 / shots)
        total, ok = 0, 0
        for seed in range(40):
            emp = forward_shots(g, params, readout, shots, seed=seed).per_node_marginals
            ok += int(np.sum(np.abs(emp - exact) <= bound))
            total += g.num_nodes
        assert ok / total >= 0.99

    def test_shots_validation(self):
        g = make_cycle(3)
        with pytest.raises(ValueError):
            forward_shots(g, random_params(np.random.default_rng(0)), init_model(0).readout, 0, 1)


class TestTwoQubitClosedForm:
    def test_edge_phase_derivative_matches_hand_formula(self):
        """Single-edge 2-node circuit: d p_0 / d theta from the explicit
        amplitude expansion, against the pi/2 parameter-shift combination and
        a central finite difference of the simulator."""
        a, b, c = 0.37, -1.12, 0.81
        theta = 0.59
        u = node_unitary(a, b, c)
        g = Graph(id=0, num_nodes=2, edges=((0, 1),), label=0)
        readout = init_model(0).readout

        def p0(th):
            params = EDUQGCParams(np.array([[a, b, c]]), np.array([th]))
            return forward_exact(g, params, readout).per_node_marginals[0]

        # amplitudes <1j| (U x U) |v(theta)> with v = (|00>+|01>+|10>+e^{i th}|11>)/2
        grad_hand = 0.0
        for j in (0, 1):
            amp_a = u[1, 0] * (u[j, 0] + u[j, 1]) + u[1, 1] * u[j, 0]
            amp_b = u[1, 1] * u[j, 1]
            grad_hand += -0.5 * np.imag(np.conj(amp_a) * amp_b * np.exp(1j * theta))
        shift = 0.5 * (p0(theta + math.pi / 2) - p0(theta - math.pi / 2))
        fd = (p0(theta + 1e-6) - p0(theta - 1e-6)) / 2e-6
        assert shift == pytest.approx(grad_hand, abs=1e-12)
        assert fd == pytest.approx(grad_hand, abs=1e-8)


class TestReadout:
    def test_weight_vector_matches_direct_sum(self):
        rng = np.random.default_rng(12)
        for n in (1, 2, 5, 9):
            weights = rng.normal(size=n)
            w = node_weight_vector(n, weights)
            for z in range(1 << n):
                bits = [(z >> (n - 1 - v)) & 1 for v in range(n)]
                assert w[z] == pytest.approx(float(np.dot(bits, weights)), abs=1e-12)

    def test_marginals_match_bit_table(self):
        rng = np.random.default_rng(13)
        for n in (1, 3, 6, 11):
            state = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
            state /= np.linalg.norm(state)
            probs = np.abs(state) ** 2
            direct = np.array(
                [
                    probs[[(z >> (n - 1 - v)) & 1 == 1 for z in range(1 << n)]].sum()
                    for v in range(n)
                ]
            )
            assert np.allclose(marginals_from_state(state, n), direct, atol=1e-12)


class TestCheckpoint:
    def test_roundtrip_bit_for_bit(self, tmp_path):
        model = init_model(21)
        rng = np.random.default_rng(14)
        model.params.node_angles = rng.uniform(-2, 2, (2, 3))
        model.params.edge_phases = rng.uniform(-2, 2, 2)
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        for g in [make_wheel(5, 1, rng_seed=0), make_cycle(7)]:
            pa = forward_exact(g, model.params, model.readout).class_probability
            pb = forward_exact(g, loaded.params, loaded.readout).class_probability
            assert pa == pb  # exact equality, not approximate

    def test_schema_keys(self, tmp_path):
        model = init_model(5)
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        payload = json.loads(path.read_text())
        assert payload["version"] == 1
        assert payload["num_layers"] == 2
        assert len(payload["node_angles"]) == 2
        assert len(payload["node_angles"][0]) == 3
        assert len(payload["edge_phases"]) == 2
        assert set(payload["readout"]) == {"w1", "b1", "w2", "b2"}
        assert len(payload["readout"]["w1"]) == 32

    def test_dict_roundtrip(self):
        model = init_model(9)
        again = model_from_dict(model_to_dict(model))
        assert np.array_equal(again.params.node_angles, model.params.node_angles)
        assert np.array_equal(again.readout.w1, model.readout.w1)
