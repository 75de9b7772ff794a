"""Statevector simulator tests against an independent dense-unitary oracle.

The oracle builds full 2^n x 2^n gate matrices with Kronecker products and
multiplies them out, sharing no code with the simulator's axis-reshape
kernels.
"""
from __future__ import annotations

import numpy as np
import pytest

from sectorrl import autodiff as ad
from sectorrl import qsim
from sectorrl.autodiff import ContractError
from sectorrl.qsim import (
    CircuitSpec,
    GateOp,
    ParamCircuit,
    QnnFeatureNode,
    QuantumAttentionNode,
    UnsupportedGateError,
    apply_gate,
    attention_circuit,
    param_shift_grad,
    qnn_circuit,
    qnn_forward,
    quantum_attention_score,
    state_norms,
    z_expectations,
    zero_state,
)

I2 = np.eye(2, dtype=complex)
Z2 = np.diag([1.0, -1.0]).astype(complex)


def rx_mat(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def ry_mat(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz_mat(t):
    return np.diag([np.exp(-1j * t / 2), np.exp(1j * t / 2)])


def one_qubit_full(n, wire, mat):
    out = np.array([[1.0 + 0j]])
    for w in range(n):
        out = np.kron(out, mat if w == wire else I2)
    return out


def cnot_full(n, control, target):
    dim = 1 << n
    out = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        if (col >> (n - 1 - control)) & 1:
            row = col ^ (1 << (n - 1 - target))
        else:
            row = col
        out[row, col] = 1.0
    return out


def dense_run(circuit: ParamCircuit, slot_angles: np.ndarray) -> np.ndarray:
    """Replay a ParamCircuit's gate list through full matrices."""
    n = circuit.n_qubits
    state = np.zeros(1 << n, dtype=complex)
    state[0] = 1.0
    mats = {"rx": rx_mat, "ry": ry_mat, "rz": rz_mat}
    for g in circuit.gates:
        if g.kind == "cnot":
            state = cnot_full(n, *g.wires) @ state
        else:
            state = one_qubit_full(n, g.wires[0], mats[g.kind](slot_angles[g.slot])) @ state
    return state


def dense_z(state, n, wire):
    return float(np.real(state.conj() @ one_qubit_full(n, wire, Z2) @ state))


# ---------------------------------------------------------------------------
# gate application


def test_rx_zero_is_identity():
    rng = np.random.default_rng(0)
    state = rng.normal(size=8) + 1j * rng.normal(size=8)
    state /= np.linalg.norm(state)
    out = apply_gate(state, "rx", 1, angle=0.0)
    np.testing.assert_allclose(out, state, atol=1e-15)


def test_ry_pi_flips_zero_to_one():
    out = apply_gate(zero_state(1), "ry", 0, angle=np.pi)
    np.testing.assert_allclose(out, np.array([0.0, 1.0]), atol=1e-15)


def test_cnot_builds_bell_state():
    plus_zero = np.array([1.0, 0.0, 1.0, 0.0], dtype=complex) / np.sqrt(2)
    out = apply_gate(plus_zero, "cnot", (0, 1))
    oracle = cnot_full(2, 0, 1) @ plus_zero
    np.testing.assert_allclose(out, oracle, atol=1e-14)
    np.testing.assert_allclose(out, np.array([1, 0, 0, 1]) / np.sqrt(2), atol=1e-14)


def test_every_gate_matches_dense_oracle_on_random_states():
    rng = np.random.default_rng(1)
    n = 3
    for _ in range(50):
        state = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
        state /= np.linalg.norm(state)
        kind = rng.choice(["rx", "ry", "rz", "cnot"])
        if kind == "cnot":
            c, t = rng.choice(n, size=2, replace=False)
            got = apply_gate(state, "cnot", (int(c), int(t)))
            want = cnot_full(n, int(c), int(t)) @ state
        else:
            w = int(rng.integers(n))
            theta = float(rng.uniform(-np.pi, np.pi))
            got = apply_gate(state, kind, w, angle=theta)
            mat = {"rx": rx_mat, "ry": ry_mat, "rz": rz_mat}[kind](theta)
            want = one_qubit_full(n, w, mat) @ state
        np.testing.assert_allclose(got, want, atol=1e-13)


def test_gate_errors():
    with pytest.raises(ContractError):
        apply_gate(zero_state(2), "rx", 5, angle=0.3)
    with pytest.raises(ContractError):
        apply_gate(zero_state(2), "cnot", (1, 1))
    with pytest.raises(UnsupportedGateError):
        apply_gate(zero_state(2), "hadamard", 0)


def test_norm_preserved_over_random_sequences():
    rng = np.random.default_rng(2)
    n = 4
    for _ in range(100):
        state = zero_state(n)
        for _ in range(100):
            kind = rng.choice(["rx", "ry", "rz", "cnot"])
            if kind == "cnot":
                c, t = rng.choice(n, size=2, replace=False)
                state = apply_gate(state, "cnot", (int(c), int(t)))
            else:
                state = apply_gate(state, kind, int(rng.integers(n)), angle=float(rng.uniform(-np.pi, np.pi)))
        assert abs(state_norms(state) - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# feature-extraction circuit


def test_qnn_zero_angles_reads_all_plus_one():
    spec = CircuitSpec(4, 2)
    z = qnn_forward(np.zeros(4), np.zeros((2, 4)), spec)
    np.testing.assert_allclose(z, np.ones(4), atol=1e-15)


def test_qnn_single_qubit_pi_embedding_flips_expectation():
    spec = CircuitSpec(n_qubits=1, n_layers=1)
    z = qnn_forward(np.array([np.pi]), np.zeros((1, 1)), spec)
    np.testing.assert_allclose(z, [-1.0], atol=1e-12)


def test_qnn_matches_dense_oracle_on_random_draws():
    spec = CircuitSpec(4, 2)
    circuit = qnn_circuit(spec)
    rng = np.random.default_rng(3)
    for _ in range(25):
        x = rng.uniform(-np.pi, np.pi, size=4)
        theta = rng.uniform(-np.pi, np.pi, size=(2, 4))
        z = qnn_forward(x, theta, spec)
        slots = np.concatenate([x, theta.reshape(-1)])
        state = dense_run(circuit, slots)
        want = np.array([dense_z(state, 4, w) for w in range(4)])
        np.testing.assert_allclose(z, want, atol=1e-12)
        assert (np.abs(z) <= 1.0 + 1e-12).all()


def test_qnn_dimension_mismatch():
    with pytest.raises(ContractError):
        qnn_forward(np.zeros(3), np.zeros((2, 4)), CircuitSpec(4, 2))
    with pytest.raises(ContractError):
        qnn_forward(np.zeros(4), np.zeros((3, 4)), CircuitSpec(4, 2))


def test_batched_forward_agrees_with_loop():
    spec = CircuitSpec(3, 2)
    rng = np.random.default_rng(4)
    xs = rng.uniform(-np.pi, np.pi, size=(7, 3))
    theta = rng.uniform(-np.pi, np.pi, size=(2, 3))
    batched = qnn_forward(xs, theta, spec)
    for i in range(7):
        np.testing.assert_allclose(batched[i], qnn_forward(xs[i], theta, spec), atol=1e-14)


# ---------------------------------------------------------------------------
# parameter-shift gradients


def fd_slot_grads(circuit: ParamCircuit, angles: np.ndarray, cot: np.ndarray,
                  wires=None, h: float = 1e-4) -> np.ndarray:
    grads = np.zeros_like(angles)
    for p in range(circuit.n_slots):
        up, dn = angles.copy(), angles.copy()
        up[:, p] += h
        dn[:, p] -= h
        ep = circuit.expectations(up, wires=wires)
        em = circuit.expectations(dn, wires=wires)
        grads[:, p] = ((ep - em) / (2 * h) * cot).sum(axis=-1)
    return grads


def test_param_shift_matches_finite_differences_on_random_circuits():
    rng = np.random.default_rng(5)
    n = 4
    for _ in range(30):
        gates, slot = [], 0
        for _ in range(12):
            kind = rng.choice(["rx", "ry", "rz", "cnot"])
            if kind == "cnot":
                c, t = rng.choice(n, size=2, replace=False)
                gates.append(GateOp("cnot", (int(c), int(t))))
            else:
                gates.append(GateOp(kind, (int(rng.integers(n)),), slot))
                slot += 1
        if slot == 0:
            gates.append(GateOp("ry", (0,), 0))
            slot = 1
        circuit = ParamCircuit(n, gates, n_slots=slot)
        angles = rng.uniform(-np.pi, np.pi, size=(2, slot))
        cot = rng.normal(size=(2, n))
        got = circuit.param_shift(angles, cot)
        want = fd_slot_grads(circuit, angles, cot)
        np.testing.assert_allclose(got, want, atol=1e-5)


def test_param_shift_shared_slot_applies_product_rule():
    # one slot feeding RX then RZ on the same wire, like the angle embedding
    circuit = ParamCircuit(1, [GateOp("rx", (0,), 0), GateOp("rz", (0,), 0)], n_slots=1)
    rng = np.random.default_rng(6)
    angles = rng.uniform(-np.pi, np.pi, size=(3, 1))
    cot = np.ones((3, 1))
    got = circuit.param_shift(angles, cot)
    want = fd_slot_grads(circuit, angles, cot)
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_disconnected_parameter_has_zero_gradient():
    # measure qubit 0, rotate qubit 1, no entanglement
    circuit = ParamCircuit(2, [GateOp("ry", (1,), 0)], n_slots=1)
    grads = circuit.param_shift(np.array([[0.7]]), np.array([[1.0]]), wires=(0,))
    np.testing.assert_allclose(grads, 0.0, atol=1e-15)


def test_single_qubit_ry_gradient_is_minus_sine():
    # <Z> after RY(t) on |0> is cos t, so the gradient at t = pi/2 is -1
    circuit = ParamCircuit(1, [GateOp("ry", (0,), 0)], n_slots=1)
    vals = circuit.expectations(np.array([[np.pi / 2]]))
    np.testing.assert_allclose(vals, np.cos(np.pi / 2), atol=1e-12)
    grads = circuit.param_shift(np.array([[np.pi / 2]]), np.array([[1.0]]))
    np.testing.assert_allclose(grads, [[-1.0]], atol=1e-12)


def test_param_shift_grad_surface():
    spec = CircuitSpec(4, 2)
    rng = np.random.default_rng(7)
    x = rng.uniform(-np.pi, np.pi, size=(5, 4))
    theta = rng.uniform(-np.pi, np.pi, size=(2, 4))
    cot = rng.normal(size=(5, 4))
    dx, dtheta = param_shift_grad(x, theta, cot, spec)
    assert dx.shape == (5, 4)
    assert dtheta.shape == (2, 4)
    h = 1e-4
    # spot-check a few coordinates of each against central differences
    for i, j in [(0, 0), (3, 2)]:
        up, dn = x.copy(), x.copy()
        up[i, j] += h
        dn[i, j] -= h
        want = ((qnn_forward(up, theta, spec) - qnn_forward(dn, theta, spec)) / (2 * h) * cot).sum()
        assert abs(dx[i, j] - want) < 1e-5
    for l, q in [(0, 1), (1, 3)]:
        up, dn = theta.copy(), theta.copy()
        up[l, q] += h
        dn[l, q] -= h
        want = ((qnn_forward(x, up, spec) - qnn_forward(x, dn, spec)) / (2 * h) * cot).sum()
        assert abs(dtheta[l, q] - want) < 1e-5


# ---------------------------------------------------------------------------
# quantum attention scores


def test_attention_score_bounds():
    rng = np.random.default_rng(8)
    q = rng.uniform(-np.pi, np.pi, size=(50, 2))
    k = rng.uniform(-np.pi, np.pi, size=(50, 2))
    theta = rng.uniform(-np.pi, np.pi, size=4)
    scores = quantum_attention_score(q, k, theta)
    assert scores.shape == (50,)
    assert ((scores >= 0.0) & (scores <= 1.0)).all()


def test_attention_score_all_zero_inputs_give_one():
    assert quantum_attention_score(np.zeros(2), np.zeros(2), np.zeros(4)) == pytest.approx(1.0)


def test_attention_score_matches_dense_oracle():
    m = 2
    circuit = attention_circuit(m)
    rng = np.random.default_rng(9)
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, size=m)
        k = rng.uniform(-np.pi, np.pi, size=m)
        theta = rng.uniform(-np.pi, np.pi, size=2 * m)
        got = quantum_attention_score(q, k, theta)
        state = dense_run(circuit, np.concatenate([q, k, theta]))
        want = (1.0 + dense_z(state, 2 * m, 0)) / 2.0
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_attention_score_depends_on_keys_and_all_parameters():
    m = 2
    rng = np.random.default_rng(10)
    q = rng.uniform(-1, 1, size=m)
    k = rng.uniform(-1, 1, size=m)
    theta = rng.uniform(-1, 1, size=2 * m)
    base = quantum_attention_score(q, k, theta)
    for j in range(m):
        k2 = k.copy()
        k2[j] += 0.4
        assert abs(quantum_attention_score(q, k2, theta) - base) > 1e-6
    for t in range(2 * m):
        t2 = theta.copy()
        t2[t] += 0.4
        assert abs(quantum_attention_score(q, k, t2) - base) > 1e-6


# ---------------------------------------------------------------------------
# autodiff node integration


def test_qnn_node_end_to_end_gradient_vs_fd():
    spec = CircuitSpec(3, 2)
    node = QnnFeatureNode(spec)
    rng = np.random.default_rng(11)
    w = ad.parameter(rng.normal(size=(5, 3)) * 0.5)
    theta = ad.parameter(rng.uniform(-np.pi, np.pi, size=(2, 3)))
    feats = rng.normal(size=(4, 5))
    weights = rng.normal(size=(4, 3))

    def forward(wt, tt):
        proj = ad.matmul(ad.Tensor(feats), wt)
        return node(ad.mul(ad.tanh(proj), np.pi), tt)

    ad.backward(ad.tsum(forward(w, theta) * ad.Tensor(weights)))

    def loss():
        proj = np.tanh(feats @ w.data) * np.pi
        return float((qnn_forward(proj, theta.data, spec) * weights).sum())

    h = 1e-5
    for arr, grad in ((w.data, w.grad), (theta.data, theta.grad)):
        numeric = np.zeros_like(arr)
        flat, nf = arr.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss()
            flat[i] = orig - h
            fm = loss()
            flat[i] = orig
            nf[i] = (fp - fm) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-6)


def test_attention_node_gradient_vs_fd():
    m = 2
    node = QuantumAttentionNode(m)
    rng = np.random.default_rng(12)
    q = ad.parameter(rng.uniform(-1.5, 1.5, size=(2, 3, m)))
    k = ad.parameter(rng.uniform(-1.5, 1.5, size=(2, 3, m)))
    theta = ad.parameter(rng.uniform(-np.pi, np.pi, size=2 * m))
    weights = rng.normal(size=(2, 3, 3))

    ad.backward(ad.tsum(node(q, k, theta) * ad.Tensor(weights)))

    def loss():
        qq = np.broadcast_to(q.data[:, :, None, :], (2, 3, 3, m))
        kk = np.broadcast_to(k.data[:, None, :, :], (2, 3, 3, m))
        return float((quantum_attention_score(qq, kk, theta.data) * weights).sum())

    h = 1e-5
    for arr, grad in ((q.data, q.grad), (k.data, k.grad), (theta.data, theta.grad)):
        numeric = np.zeros_like(arr)
        flat, nf = arr.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss()
            flat[i] = orig - h
            fm = loss()
            flat[i] = orig
            nf[i] = (fp - fm) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-6)


def test_expectations_stay_in_unit_interval():
    rng = np.random.default_rng(13)
    spec = CircuitSpec(4, 2)
    x = rng.uniform(-8, 8, size=(40, 4))
    theta = rng.uniform(-8, 8, size=(2, 4))
    z = qnn_forward(x, theta, spec)
    assert (np.abs(z) <= 1.0 + 1e-12).all()
