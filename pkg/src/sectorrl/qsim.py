"""Dense statevector simulation of small variational circuits.

A statevector over n qubits is a complex128 array of 2^n amplitudes;
batches are stacked as (B, 2^n). Qubit 0 is the most significant bit of
the amplitude index. Rotation conventions:

    RX(t) = [[cos t/2, -i sin t/2], [-i sin t/2, cos t/2]]
    RY(t) = [[cos t/2,   -sin t/2], [   sin t/2, cos t/2]]
    RZ(t) = diag(exp(-i t/2), exp(+i t/2))

Gradients of Pauli-rotation angles use the exact parameter-shift rule,
(f(t + pi/2) - f(t - pi/2)) / 2, applied per gate occurrence so angles
feeding several gates (for example RX/RZ angle embedding) accumulate the
product-rule sum. Circuits are exposed to the training stack as custom
autodiff nodes, so quantum and classical layers share one backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import ContractError

ROTATIONS = ("rx", "ry", "rz")


class UnsupportedGateError(ValueError):
    """A gate kind outside the supported {RX, RY, RZ, CNOT} set."""


# ---------------------------------------------------------------------------
# raw state manipulation (in-place internals, copying public wrappers)


def zero_state(n_qubits: int, batch: int | None = None) -> np.ndarray:
    """|0...0> as a (2^n,) vector, or a (batch, 2^n) stack."""
    dim = 1 << n_qubits
    if batch is None:
        state = np.zeros(dim, dtype=np.complex128)
        state[0] = 1.0
    else:
        state = np.zeros((batch, dim), dtype=np.complex128)
        state[:, 0] = 1.0
    return state


def _check_wire(n_qubits: int, wire: int) -> None:
    if not 0 <= wire < n_qubits:
        raise ContractError(f"wire {wire} out of range for {n_qubits} qubits")


def _axis_view(state: np.ndarray, n: int, wire: int) -> np.ndarray:
    return state.reshape(-1, 1 << wire, 2, 1 << (n - 1 - wire))


def _per_batch(x: np.ndarray) -> np.ndarray:
    return x[:, None, None] if x.ndim else x


def _rx_inplace(state, n, wire, angle):
    v = _axis_view(state, n, wire)
    half = np.asarray(angle, dtype=np.float64) / 2.0
    c, s = _per_batch(np.cos(half)), _per_batch(np.sin(half))
    s0 = v[:, :, 0, :].copy()
    s1 = v[:, :, 1, :]
    v[:, :, 0, :] = c * s0 - 1j * s * s1
    v[:, :, 1, :] = -1j * s * s0 + c * s1


def _ry_inplace(state, n, wire, angle):
    v = _axis_view(state, n, wire)
    half = np.asarray(angle, dtype=np.float64) / 2.0
    c, s = _per_batch(np.cos(half)), _per_batch(np.sin(half))
    s0 = v[:, :, 0, :].copy()
    s1 = v[:, :, 1, :]
    v[:, :, 0, :] = c * s0 - s * s1
    v[:, :, 1, :] = s * s0 + c * s1


def _rz_inplace(state, n, wire, angle):
    v = _axis_view(state, n, wire)
    half = np.asarray(angle, dtype=np.float64) / 2.0
    phase = np.exp(-1j * half)
    v[:, :, 0, :] *= _per_batch(phase)
    v[:, :, 1, :] *= _per_batch(np.conj(phase))


def _cnot_inplace(state, n, control, target):
    if control == target:
        raise ContractError("CNOT control and target must differ")
    w1, w2 = (control, target) if control < target else (target, control)
    v = state.reshape(-1, 1 << w1, 2, 1 << (w2 - w1 - 1), 2, 1 << (n - 1 - w2))
    c_ax, t_ax = (2, 4) if control < target else (4, 2)
    i10 = [slice(None)] * 6
    i11 = [slice(None)] * 6
    i10[c_ax] = i11[c_ax] = 1
    i10[t_ax], i11[t_ax] = 0, 1
    tmp = v[tuple(i10)].copy()
    v[tuple(i10)] = v[tuple(i11)]
    v[tuple(i11)] = tmp


_INPLACE = {"rx": _rx_inplace, "ry": _ry_inplace, "rz": _rz_inplace}


def apply_gate(state: np.ndarray, kind: str, wires, angle=None) -> np.ndarray:
    """Apply one gate to a copy of ``state`` and return it.

    ``state`` may be a single (2^n,) vector or a (B, 2^n) batch; ``wires``
    is a wire index for rotations or a (control, target) pair for CNOT.
    """
    out = np.array(state, dtype=np.complex128, copy=True)
    dim = out.shape[-1]
    n = int(dim).bit_length() - 1
    if 1 << n != dim:
        raise ContractError(f"state length {dim} is not a power of two")
    flat = out.reshape(-1, dim)
    kind = kind.lower()
    if kind == "cnot":
        control, target = wires
        _check_wire(n, control)
        _check_wire(n, target)
        _cnot_inplace(flat, n, control, target)
    elif kind in ROTATIONS:
        wire = wires[0] if isinstance(wires, (tuple, list)) else int(wires)
        _check_wire(n, wire)
        if angle is None:
            raise ContractError(f"{kind} requires an angle")
        _INPLACE[kind](flat, n, wire, angle)
    else:
        raise UnsupportedGateError(f"unsupported gate kind '{kind}'")
    return out


_SIGN_CACHE: dict[int, np.ndarray] = {}


def _z_signs(n: int) -> np.ndarray:
    signs = _SIGN_CACHE.get(n)
    if signs is None:
        idx = np.arange(1 << n)
        signs = np.stack([1.0 - 2.0 * ((idx >> (n - 1 - w)) & 1) for w in range(n)])
        _SIGN_CACHE[n] = signs
    return signs


def z_expectations(state: np.ndarray, wires=None) -> np.ndarray:
    """<Z_w> for each requested wire; shape (..., len(wires)).

    Computed as per-row last-axis reductions (not a matmul) so each batch
    element's result is independent of the batch size, bit for bit.
    """
    dim = state.shape[-1]
    n = int(dim).bit_length() - 1
    probs = state.real**2 + state.imag**2
    signs = _z_signs(n)
    if wires is not None:
        signs = signs[list(wires)]
    return np.stack([(probs * row).sum(axis=-1) for row in signs], axis=-1)


def state_norms(state: np.ndarray) -> np.ndarray:
    return np.sqrt((state.real**2 + state.imag**2).sum(axis=-1))


# ---------------------------------------------------------------------------
# parameterized circuits


@dataclass(frozen=True)
class GateOp:
    kind: str
    wires: tuple
    slot: int | None = None  # column of the angle matrix; None for CNOT


@dataclass(frozen=True)
class CircuitSpec:
    """Shape of the feature-extraction circuit: 4 qubits, 2 layers by default."""
    n_qubits: int = 4
    n_layers: int = 2
    entangler: str = "chain"

    def __post_init__(self):
        if self.n_qubits < 1 or self.n_layers < 1:
            raise ContractError(f"invalid circuit spec: {self.n_qubits} qubits, {self.n_layers} layers")
        if self.entangler != "chain":
            raise ContractError(f"unknown entangler pattern '{self.entangler}'")


class ParamCircuit:
    """A fixed gate sequence whose rotation angles come from a slot vector.

    Several gates may read the same slot; the parameter-shift gradient then
    sums their per-occurrence contributions, which is the product rule for
    an angle appearing multiple times.
    """

    def __init__(self, n_qubits: int, gates: list[GateOp], n_slots: int):
        self.n_qubits = n_qubits
        self.gates = list(gates)
        self.n_slots = n_slots
        for g in self.gates:
            if g.kind == "cnot":
                if g.slot is not None:
                    raise UnsupportedGateError("CNOT takes no parameter")
                _check_wire(n_qubits, g.wires[0])
                _check_wire(n_qubits, g.wires[1])
            elif g.kind in ROTATIONS:
                if g.slot is None or not 0 <= g.slot < n_slots:
                    raise ContractError(f"rotation gate needs a slot in [0, {n_slots})")
                _check_wire(n_qubits, g.wires[0])
            else:
                raise UnsupportedGateError(f"unsupported gate kind '{g.kind}'")

    def _angles(self, angles) -> np.ndarray:
        ang = np.atleast_2d(np.asarray(angles, dtype=np.float64))
        if ang.shape[1] != self.n_slots:
            raise ContractError(f"expected {self.n_slots} angle slots, got {ang.shape[1]}")
        return ang

    def _apply(self, state, gate: GateOp, ang, override=None):
        if gate.kind == "cnot":
            _cnot_inplace(state, self.n_qubits, *gate.wires)
        else:
            angle = ang[:, gate.slot] if override is None else override
            _INPLACE[gate.kind](state, self.n_qubits, gate.wires[0], angle)

    def run(self, angles) -> np.ndarray:
        """Final statevector, shape (B, 2^n)."""
        ang = self._angles(angles)
        state = zero_state(self.n_qubits, batch=ang.shape[0])
        for gate in self.gates:
            self._apply(state, gate, ang)
        return state

    def expectations(self, angles, wires=None) -> np.ndarray:
        return z_expectations(self.run(angles), wires=wires)

    def param_shift(self, angles, cotangents, wires=None) -> np.ndarray:
        """Cotangent-contracted angle gradients, shape (B, n_slots).

        Runs the circuit once recording the state before every gate, then
        for each rotation resumes from its checkpoint with the angle shifted
        by +-pi/2 and replays the suffix.
        """
        ang = self._angles(angles)
        batch = ang.shape[0]
        cot = np.asarray(cotangents, dtype=np.float64).reshape(batch, -1)
        prefix = []
        state = zero_state(self.n_qubits, batch=batch)
        for gate in self.gates:
            prefix.append(state.copy())
            self._apply(state, gate, ang)
        grads = np.zeros((batch, self.n_slots))
        for gi, gate in enumerate(self.gates):
            if gate.slot is None:
                continue
            for sign in (1.0, -1.0):
                s = prefix[gi].copy()
                self._apply(s, gate, ang, override=ang[:, gate.slot] + sign * (np.pi / 2.0))
                for later in self.gates[gi + 1:]:
                    self._apply(s, later, ang)
                e = z_expectations(s, wires=wires)
                grads[:, gate.slot] += 0.5 * sign * (e * cot).sum(axis=-1)
        return grads


def qnn_circuit(spec: CircuitSpec) -> ParamCircuit:
    """Angle embedding RX/RZ per qubit, then n_layers of [RY layer + CNOT chain].

    Slots 0..n-1 hold the embedding angles (each drives both its RX and RZ);
    slots n.. hold the per-layer RY angles.
    """
    n = spec.n_qubits
    gates = []
    for i in range(n):
        gates.append(GateOp("rx", (i,), i))
        gates.append(GateOp("rz", (i,), i))
    for layer in range(spec.n_layers):
        for q in range(n):
            gates.append(GateOp("ry", (q,), n + layer * n + q))
        for q in range(n - 1):
            gates.append(GateOp("cnot", (q, q + 1)))
    return ParamCircuit(n, gates, n_slots=n + spec.n_layers * n)


def attention_circuit(m: int) -> ParamCircuit:
    """Pairwise similarity circuit on 2m qubits.

    Query angles embed on qubits 0..m-1 and key angles on m..2m-1 (RX then
    RZ), CNOTs entangle each query qubit with its key partner across the
    boundary, an RY layer applies the trainable angles, and a CNOT funnel
    chain folds every qubit into qubit 0 so the Z readout depends on all
    inputs and parameters. Slots: 0..m-1 query, m..2m-1 key, 2m..4m-1 RY.
    """
    n = 2 * m
    gates = []
    for i in range(m):
        gates.append(GateOp("rx", (i,), i))
        gates.append(GateOp("rz", (i,), i))
    for j in range(m):
        gates.append(GateOp("rx", (m + j,), m + j))
        gates.append(GateOp("rz", (m + j,), m + j))
    for i in range(m):
        gates.append(GateOp("cnot", (i, m + i)))
    for q in range(n):
        gates.append(GateOp("ry", (q,), 2 * m + q))
    for q in range(n - 1, 0, -1):
        gates.append(GateOp("cnot", (q, q - 1)))
    return ParamCircuit(n, gates, n_slots=4 * m)


# ---------------------------------------------------------------------------
# plain forward surfaces


def _qnn_angles(circuit: ParamCircuit, spec: CircuitSpec, x_proj, theta) -> tuple[np.ndarray, tuple]:
    x = np.asarray(x_proj, dtype=np.float64)
    th = np.asarray(theta, dtype=np.float64)
    n = spec.n_qubits
    if x.shape[-1] != n:
        raise ContractError(f"projection has {x.shape[-1]} angles, circuit has {n} qubits")
    if th.shape != (spec.n_layers, n):
        raise ContractError(f"theta shape {th.shape} != ({spec.n_layers}, {n})")
    lead = x.shape[:-1]
    flat = x.reshape(-1, n)
    angles = np.concatenate(
        [flat, np.broadcast_to(th.reshape(-1), (flat.shape[0], th.size))], axis=1
    )
    return angles, lead


def qnn_forward(x_proj, theta, spec: CircuitSpec = CircuitSpec()) -> np.ndarray:
    """Embed x', run the variational layers, return all <Z_i>; shape (..., n)."""
    circuit = qnn_circuit(spec)
    angles, lead = _qnn_angles(circuit, spec, x_proj, theta)
    return circuit.expectations(angles).reshape(*lead, spec.n_qubits)


def param_shift_grad(x_proj, theta, cotangent, spec: CircuitSpec = CircuitSpec()):
    """Gradients of cotangent . <Z> w.r.t. (x_proj, theta) via the shift rule."""
    circuit = qnn_circuit(spec)
    angles, lead = _qnn_angles(circuit, spec, x_proj, theta)
    cot = np.asarray(cotangent, dtype=np.float64).reshape(angles.shape[0], spec.n_qubits)
    slot_grads = circuit.param_shift(angles, cot)
    n = spec.n_qubits
    dx = slot_grads[:, :n].reshape(*lead, n)
    dtheta = slot_grads[:, n:].sum(axis=0).reshape(spec.n_layers, n)
    return dx, dtheta


def _attention_angles(circuit: ParamCircuit, m: int, q_angles, k_angles, theta) -> tuple[np.ndarray, tuple]:
    q = np.asarray(q_angles, dtype=np.float64)
    k = np.asarray(k_angles, dtype=np.float64)
    th = np.asarray(theta, dtype=np.float64)
    if q.shape[-1] != m or k.shape[-1] != m:
        raise ContractError(f"query/key angle dims {q.shape[-1]}/{k.shape[-1]} != m={m}")
    if q.shape != k.shape:
        raise ContractError(f"query shape {q.shape} != key shape {k.shape}")
    if th.shape != (2 * m,):
        raise ContractError(f"theta shape {th.shape} != ({2 * m},)")
    lead = q.shape[:-1]
    fq, fk = q.reshape(-1, m), k.reshape(-1, m)
    angles = np.concatenate([fq, fk, np.broadcast_to(th, (fq.shape[0], 2 * m))], axis=1)
    return angles, lead


def quantum_attention_score(q_angles, k_angles, theta) -> np.ndarray:
    """Similarity score (1 + <Z_0>)/2 in [0, 1] for each (q, k) angle pair."""
    m = np.asarray(q_angles).shape[-1]
    circuit = attention_circuit(m)
    angles, lead = _attention_angles(circuit, m, q_angles, k_angles, theta)
    e = circuit.expectations(angles, wires=(0,))[:, 0]
    return ((1.0 + e) / 2.0).reshape(lead)


# ---------------------------------------------------------------------------
# autodiff nodes


class QnnFeatureNode:
    """Custom autodiff node: (x' (B, n), theta (layers, n)) -> <Z> (B, n)."""

    def __init__(self, spec: CircuitSpec = CircuitSpec()):
        self.spec = spec
        self.circuit = qnn_circuit(spec)
        self._op = autodiff.register_custom("qnn_expectations", self._forward, self._vjp)

    def __call__(self, x_proj, theta) -> autodiff.Tensor:
        return self._op(x_proj, theta)

    def _forward(self, x, theta):
        angles, lead = _qnn_angles(self.circuit, self.spec, x, theta)
        return self.circuit.expectations(angles).reshape(*lead, self.spec.n_qubits)

    def _vjp(self, g, x, theta):
        return param_shift_grad(x, theta, g, spec=self.spec)


class QuantumAttentionNode:
    """Custom autodiff node scoring all query/key pairs of a window.

    Inputs are per-head angle projections q, k of shape (B, L, m) and the
    trainable RY angles theta of shape (2m,); the output is the (B, L, L)
    score matrix with entries in [0, 1].
    """

    def __init__(self, m: int):
        self.m = m
        self.circuit = attention_circuit(m)
        self._op = autodiff.register_custom("quantum_attention", self._forward, self._vjp)

    def __call__(self, q, k, theta) -> autodiff.Tensor:
        return self._op(q, k, theta)

    def _pair(self, q, k):
        b, length, m = q.shape
        qq = np.broadcast_to(q[:, :, None, :], (b, length, length, m)).reshape(-1, m)
        kk = np.broadcast_to(k[:, None, :, :], (b, length, length, m)).reshape(-1, m)
        return qq, kk

    def _forward(self, q, k, theta):
        b, length, _ = q.shape
        qq, kk = self._pair(q, k)
        angles, _ = _attention_angles(self.circuit, self.m, qq, kk, theta)
        e = self.circuit.expectations(angles, wires=(0,))[:, 0]
        return ((1.0 + e) / 2.0).reshape(b, length, length)

    def _vjp(self, g, q, k, theta):
        b, length, _ = q.shape
        qq, kk = self._pair(q, k)
        angles, _ = _attention_angles(self.circuit, self.m, qq, kk, theta)
        cot = 0.5 * np.asarray(g, dtype=np.float64).reshape(-1, 1)
        slot_grads = self.circuit.param_shift(angles, cot, wires=(0,))
        m = self.m
        per_pair = slot_grads.reshape(b, length, length, 4 * m)
        dq = per_pair[..., :m].sum(axis=2)
        dk = per_pair[..., m:2 * m].sum(axis=1)
        dtheta = slot_grads[:, 2 * m:].sum(axis=0)
        return dq, dk, dtheta
