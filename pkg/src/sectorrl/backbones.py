"""Policy and value network architectures over L x d observation windows.

Six interchangeable backbones (mlp, lstm, transformer, qnn, qasa, qrwkv)
map a window to a fixed-width representation; a linear head turns it into
either action logits (actor) or a scalar value estimate (critic). Actor and
critic are always separate networks with independent parameters.

Dropout uses replayable masks: each forward draws its masks from per-sample
seeded streams, so a PPO update can regenerate exactly the masks used at
collection time and the first-pass probability ratios stay at 1.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .qsim import CircuitSpec, QnnFeatureNode, QuantumAttentionNode

BACKBONE_KINDS = ("mlp", "lstm", "transformer", "qnn", "qasa", "qrwkv")
PAPER_KINDS = ("lstm", "transformer", "qnn", "qrwkv", "qasa")


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "mlp"
    hidden: int = 128
    layers: int = 2
    heads: int = 4
    dropout: float = 0.1
    n_qubits: int = 4
    q_layers: int = 2

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ContractError(f"unknown backbone kind '{self.kind}'")
        if min(self.hidden, self.layers, self.heads, self.n_qubits, self.q_layers) < 1:
            raise ContractError("backbone dimensions must be positive")
        if self.hidden % self.heads:
            raise ContractError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout rate {self.dropout} outside [0, 1)")

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "BackboneConfig":
        """Per-architecture defaults; qrwkv runs 4 layers, the rest 2."""
        cfg = cls(kind=kind, layers=4 if kind == "qrwkv" else 2)
        return replace(cfg, **overrides) if overrides else cfg


@dataclass(frozen=True)
class PolicyOutput:
    probs: np.ndarray
    log_probs: np.ndarray


def policy_output(logits: np.ndarray) -> PolicyOutput:
    z = logits - logits.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return PolicyOutput(probs=np.exp(log_probs), log_probs=log_probs)


class DropoutMasks:
    """Per-sample replayable dropout masks.

    One seeded stream per sample; sites are consumed in forward order, so a
    batched update forward reproduces the masks of the single-sample
    collection forwards bit for bit.
    """

    def __init__(self, rate: float, seeds):
        self.rate = float(rate)
        self.gens = [np.random.default_rng(s) for s in seeds]

    def take(self, per_sample_shape) -> np.ndarray:
        keep = 1.0 - self.rate
        masks = np.stack([g.random(per_sample_shape) < keep for g in self.gens])
        return masks.astype(np.float64) / keep


def _drop(x: Tensor, masks: DropoutMasks | None) -> Tensor:
    if masks is None:
        return x
    return ad.mul(x, Tensor(masks.take(x.shape[1:])))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def rowmm(x: Tensor, w: Tensor) -> Tensor:
    """(B, X) @ (X, Y) routed through a batched matmul.

    BLAS blocks 2-d products differently per row count, so a plain matmul
    gives slightly different rows for batch 1 vs batch 64. The (B, 1, X)
    form multiplies each sample with an identical 2-d shape, keeping
    collection-time and update-time forwards bit-identical.
    """
    batch = x.shape[0]
    return ad.reshape(ad.matmul(ad.reshape(x, (batch, 1, x.shape[1])), w), (batch, w.shape[1]))


def angle_squash(x: Tensor) -> Tensor:
    """Keep projected embedding angles inside (-pi, pi); unbounded angles alias."""
    return ad.mul(ad.tanh(x), np.pi)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (i - i % 2) / dim)
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table


# ---------------------------------------------------------------------------
# backbones


class Mlp:
    """Flattened-window baseline: `layers` hidden ReLU layers of width `hidden`."""

    def __init__(self, in_dim: int, seq_len: int, cfg: BackboneConfig, rng):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        dims = [seq_len * in_dim] + [cfg.hidden] * cfg.layers
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            self.params[f"w{i}"] = ad.parameter(xavier_uniform(rng, a, b))
            self.params[f"b{i}"] = ad.parameter(np.zeros(b))

    def forward(self, x: Tensor, masks=None, trace=None) -> Tensor:
        h = ad.reshape(x, (x.shape[0], -1))
        for i in range(self.cfg.layers):
            h = ad.relu(ad.add(rowmm(h, self.params[f"w{i}"]), self.params[f"b{i}"]))
            h = _drop(h, masks)
        return h


class Lstm:
    """Stacked recurrent cells implementing the standard gate equations.

    Per layer and step: f, i, o are sigmoid gates, the candidate is tanh,
    c_t = f * c_{t-1} + i * candidate, h_t = o * tanh(c_t). The final
    hidden state of the top layer is the representation. Forget-gate biases
    start at 1.0; inter-layer dropout shares one mask across time.
    """

    GATES = ("f", "i", "o", "c")

    def __init__(self, in_dim: int, seq_len: int, cfg: BackboneConfig, rng):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        for layer in range(cfg.layers):
            d = in_dim if layer == 0 else cfg.hidden
            for gate in self.GATES:
                self.params[f"l{layer}/W_{gate}"] = ad.parameter(xavier_uniform(rng, d, cfg.hidden))
                self.params[f"l{layer}/U_{gate}"] = ad.parameter(xavier_uniform(rng, cfg.hidden, cfg.hidden))
                bias = np.ones(cfg.hidden) if gate == "f" else np.zeros(cfg.hidden)
                self.params[f"l{layer}/b_{gate}"] = ad.parameter(bias)

    def forward(self, x: Tensor, masks=None, trace=None) -> Tensor:
        batch, length = x.shape[0], x.shape[1]
        h_seq = x
        for layer in range(self.cfg.layers):
            p = {k.split("/")[1]: v for k, v in self.params.items() if k.startswith(f"l{layer}/")}
            pre = {g: ad.add(ad.matmul(h_seq, p[f"W_{g}"]), p[f"b_{g}"]) for g in self.GATES}
            h = Tensor(np.zeros((batch, self.cfg.hidden)))
            c = Tensor(np.zeros((batch, self.cfg.hidden)))
            outputs = []
            for t in range(length):
                f_t = ad.sigmoid(ad.add(pre["f"][:, t, :], rowmm(h, p["U_f"])))
                i_t = ad.sigmoid(ad.add(pre["i"][:, t, :], rowmm(h, p["U_i"])))
                o_t = ad.sigmoid(ad.add(pre["o"][:, t, :], rowmm(h, p["U_o"])))
                cand = ad.tanh(ad.add(pre["c"][:, t, :], rowmm(h, p["U_c"])))
                c = ad.add(ad.mul(f_t, c), ad.mul(i_t, cand))
                h = ad.mul(o_t, ad.tanh(c))
                outputs.append(ad.reshape(h, (batch, 1, self.cfg.hidden)))
            if layer + 1 < self.cfg.layers:
                h_seq = ad.concat(outputs, axis=1)
                if masks is not None:  # variational mask, shared across time
                    m = masks.take((self.cfg.hidden,))
                    h_seq = ad.mul(h_seq, Tensor(m[:, None, :]))
        return h


class Encoder:
    """Transformer encoder, optionally with quantum per-head attention scores.

    Classical mode scores heads with softmax(QK^T / sqrt(d_k)); quantum mode
    projects each head's queries and keys to circuit angles, scores every
    pair with the entangling similarity circuit, and row-normalizes the
    scores (they are already in [0, 1]) instead of applying softmax. The
    value path, output projection, residuals, layer norms, position-wise
    FFN, and sinusoidal positions are shared.
    """

    def __init__(self, in_dim: int, seq_len: int, cfg: BackboneConfig, rng,
                 quantum: bool = False):
        self.cfg = cfg
        self.quantum = quantum
        self.d_head = cfg.hidden // cfg.heads
        self.params: dict[str, Tensor] = {
            "embed/w": ad.parameter(xavier_uniform(rng, in_dim, cfg.hidden)),
            "embed/b": ad.parameter(np.zeros(cfg.hidden)),
        }
        self.positions = sinusoidal_positions(seq_len, cfg.hidden)
        if quantum:
            if cfg.n_qubits % 2:
                raise ContractError("quantum attention needs an even qubit count")
            self.m = cfg.n_qubits // 2
            self.score_node = QuantumAttentionNode(self.m)
        h, ff = cfg.hidden, 4 * cfg.hidden
        for layer in range(cfg.layers):
            pre = f"l{layer}/"
            for name in ("wq", "wk", "wv", "wo"):
                self.params[pre + name] = ad.parameter(xavier_uniform(rng, h, h))
            for name in ("ln1", "ln2"):
                self.params[pre + name + "/g"] = ad.parameter(np.ones(h))
                self.params[pre + name + "/b"] = ad.parameter(np.zeros(h))
            self.params[pre + "ffn/w1"] = ad.parameter(xavier_uniform(rng, h, ff))
            self.params[pre + "ffn/b1"] = ad.parameter(np.zeros(ff))
            self.params[pre + "ffn/w2"] = ad.parameter(xavier_uniform(rng, ff, h))
            self.params[pre + "ffn/b2"] = ad.parameter(np.zeros(h))
            if quantum:
                for head in range(cfg.heads):
                    self.params[pre + f"h{head}/aq"] = ad.parameter(
                        xavier_uniform(rng, self.d_head, self.m))
                    self.params[pre + f"h{head}/ak"] = ad.parameter(
                        xavier_uniform(rng, self.d_head, self.m))
                    self.params[pre + f"h{head}/theta"] = ad.parameter(
                        rng.uniform(-np.pi, np.pi, size=2 * self.m))

    def _split_heads(self, x: Tensor, batch: int, length: int) -> Tensor:
        x = ad.reshape(x, (batch, length, self.cfg.heads, self.d_head))
        return ad.swapaxes(x, 1, 2)  # (B, heads, L, d_head)

    def _attend(self, h: Tensor, layer: int, trace) -> Tensor:
        batch, length = h.shape[0], h.shape[1]
        pre = f"l{layer}/"
        q = self._split_heads(ad.matmul(h, self.params[pre + "wq"]), batch, length)
        k = self._split_heads(ad.matmul(h, self.params[pre + "wk"]), batch, length)
        v = self._split_heads(ad.matmul(h, self.params[pre + "wv"]), batch, length)
        if not self.quantum:
            scores = ad.mul(ad.matmul(q, ad.swapaxes(k, 2, 3)), 1.0 / np.sqrt(self.d_head))
            attn = ad.softmax(scores, axis=-1)  # (B, heads, L, L)
            mixed = ad.matmul(attn, v)
        else:
            per_head = []
            attn_rows = []
            for head in range(self.cfg.heads):
                qh, kh, vh = q[:, head], k[:, head], v[:, head]  # (B, L, d_head)
                q_ang = angle_squash(ad.matmul(qh, self.params[pre + f"h{head}/aq"]))
                k_ang = angle_squash(ad.matmul(kh, self.params[pre + f"h{head}/ak"]))
                scores = self.score_node(q_ang, k_ang, self.params[pre + f"h{head}/theta"])
                rows = ad.tsum(scores, axis=-1, keepdims=True)
                alpha = ad.div(scores, rows)  # rows sum to 1 by construction
                attn_rows.append(alpha)
                per_head.append(ad.reshape(ad.matmul(alpha, vh),
                                           (batch, 1, length, self.d_head)))
            mixed = ad.concat(per_head, axis=1)
            attn = attn_rows
        if trace is not None:
            trace.setdefault("attention", []).append(attn)
        mixed = ad.reshape(ad.swapaxes(mixed, 1, 2), (batch, length, self.cfg.hidden))
        return ad.matmul(mixed, self.params[pre + "wo"])

    def forward(self, x: Tensor, masks=None, trace=None) -> Tensor:
        h = ad.add(ad.add(ad.matmul(x, self.params["embed/w"]), self.params["embed/b"]),
                   Tensor(self.positions[:x.shape[1]]))
        for layer in range(self.cfg.layers):
            pre = f"l{layer}/"
            attended = _drop(self._attend(h, layer, trace), masks)
            h = ad.layer_norm(ad.add(h, attended),
                              self.params[pre + "ln1/g"], self.params[pre + "ln1/b"])
            ff = ad.matmul(ad.relu(ad.add(ad.matmul(h, self.params[pre + "ffn/w1"]),
                                          self.params[pre + "ffn/b1"])),
                           self.params[pre + "ffn/w2"])
            ff = _drop(ad.add(ff, self.params[pre + "ffn/b2"]), masks)
            h = ad.layer_norm(ad.add(h, ff),
                              self.params[pre + "ln2/g"], self.params[pre + "ln2/b"])
        return h[:, -1, :]


class QnnBackbone:
    """Mean-pooled window -> trainable projection to qubit angles -> circuit.

    The window is averaged over time, projected to n_qubits angles (squashed
    to (-pi, pi)), run through the variational circuit, and the Z readouts
    feed a linear head up to the shared hidden width. The projection and the
    circuit parameters both receive gradients through the shift-rule node.
    """

    def __init__(self, in_dim: int, seq_len: int, cfg: BackboneConfig, rng):
        self.cfg = cfg
        self.node = QnnFeatureNode(CircuitSpec(cfg.n_qubits, cfg.q_layers))
        self.params = {
            "w_proj": ad.parameter(xavier_uniform(rng, in_dim, cfg.n_qubits)),
            "theta": ad.parameter(rng.uniform(-np.pi, np.pi, size=(cfg.q_layers, cfg.n_qubits))),
            "w_head": ad.parameter(xavier_uniform(rng, cfg.n_qubits, cfg.hidden)),
            "b_head": ad.parameter(np.zeros(cfg.hidden)),
        }

    def forward(self, x: Tensor, masks=None, trace=None) -> Tensor:
        pooled = ad.tmean(x, axis=1)  # (B, d)
        angles = angle_squash(rowmm(pooled, self.params["w_proj"]))
        z = self.node(angles, self.params["theta"])
        if trace is not None:
            trace["quantum_latent"] = z.data
        return ad.add(rowmm(z, self.params["w_head"]), self.params["b_head"])


class Qrwkv:
    """Recurrent time-mix plus channel-mix blocks with a quantum branch.

    The time-mix is a receptance-gated exponential-decay weighted average
    over strictly past keys and values with token-shift interpolation; the
    per-channel decay exponents are parameterized as -exp(rho) so they stay
    negative, initialized log-spaced in [-5, -1]. The channel path is the
    squared-ReLU feed-forward mix, and a 4-qubit projection/circuit/readout
    branch is added to it. This is a deliberately compact variant of the
    published block family; heads are accepted for configuration parity but
    mixing is channel-wise.
    """

    def __init__(self, in_dim: int, seq_len: int, cfg: BackboneConfig, rng):
        self.cfg = cfg
        self.node = QnnFeatureNode(CircuitSpec(cfg.n_qubits, cfg.q_layers))
        h = cfg.hidden
        p: dict[str, Tensor] = {
            "embed/w": ad.parameter(xavier_uniform(rng, in_dim, h)),
            "embed/b": ad.parameter(np.zeros(h)),
            "ln_out/g": ad.parameter(np.ones(h)),
            "ln_out/b": ad.parameter(np.zeros(h)),
        }
        for layer in range(cfg.layers):
            pre = f"l{layer}/"
            for name in ("ln1", "ln2"):
                p[pre + name + "/g"] = ad.parameter(np.ones(h))
                p[pre + name + "/b"] = ad.parameter(np.zeros(h))
            for name in ("mu_r", "mu_k", "mu_v", "cmu_k", "cmu_r"):
                p[pre + name] = ad.parameter(np.full(h, 0.5))
            # decay exponent -exp(rho) spans [-5, -1] log-spaced across channels
            p[pre + "rho"] = ad.parameter(np.linspace(0.0, np.log(5.0), h))
            for name in ("w_r", "w_k", "w_v", "w_out", "cw_r"):
                p[pre + name] = ad.parameter(xavier_uniform(rng, h, h))
            p[pre + "cw_k"] = ad.parameter(xavier_uniform(rng, h, 4 * h))
            p[pre + "cw_v"] = ad.parameter(xavier_uniform(rng, 4 * h, h))
            p[pre + "w_qproj"] = ad.parameter(xavier_uniform(rng, h, cfg.n_qubits))
            p[pre + "theta_q"] = ad.parameter(rng.uniform(-np.pi, np.pi,
                                                          size=(cfg.q_layers, cfg.n_qubits)))
            p[pre + "w_qout"] = ad.parameter(xavier_uniform(rng, cfg.n_qubits, h))
        self.params = p

    @staticmethod
    def _token_shift(x: Tensor) -> Tensor:
        batch, length, width = x.shape
        zeros = Tensor(np.zeros((batch, 1, width)))
        return zeros if length == 1 else ad.concat([zeros, x[:, :-1, :]], axis=1)

    @staticmethod
    def _interp(mu: Tensor, cur: Tensor, prev: Tensor) -> Tensor:
        return ad.add(ad.mul(mu, cur), ad.mul(ad.sub(1.0, mu), prev))

    def _time_mix(self, xn: Tensor, pre: str) -> Tensor:
        p = self.params
        batch, length, h = xn.shape
        shifted = self._token_shift(xn)
        k = ad.matmul(self._interp(p[pre + "mu_k"], xn, shifted), p[pre + "w_k"])
        v = ad.matmul(self._interp(p[pre + "mu_v"], xn, shifted), p[pre + "w_v"])
        r = ad.sigmoid(ad.matmul(self._interp(p[pre + "mu_r"], xn, shifted), p[pre + "w_r"]))
        decay = ad.exp(ad.neg(ad.exp(p[pre + "rho"])))  # (h,), in (0, 1)
        ek = ad.exp(k)
        rows = [Tensor(np.zeros((batch, 1, h)))]  # no history at t = 0
        num = ad.mul(ek[:, 0, :], v[:, 0, :])
        den = ek[:, 0, :]
        for t in range(1, length):
            rows.append(ad.reshape(ad.div(num, den), (batch, 1, h)))
            if t + 1 < length:
                num = ad.add(ad.mul(decay, num), ad.mul(ek[:, t, :], v[:, t, :]))
                den = ad.add(ad.mul(decay, den), ek[:, t, :])
        wkv = rows[0] if length == 1 else ad.concat(rows, axis=1)
        return ad.matmul(ad.mul(r, wkv), p[pre + "w_out"])

    def _channel_mix(self, xn: Tensor, pre: str) -> Tensor:
        p = self.params
        shifted = self._token_shift(xn)
        a = ad.relu(ad.matmul(self._interp(p[pre + "cmu_k"], xn, shifted), p[pre + "cw_k"]))
        gate = ad.sigmoid(ad.matmul(self._interp(p[pre + "cmu_r"], xn, shifted), p[pre + "cw_r"]))
        return ad.mul(gate, ad.matmul(ad.mul(a, a), p[pre + "cw_v"]))

    def _quantum_branch(self, xn: Tensor, pre: str) -> Tensor:
        p = self.params
        angles = angle_squash(ad.matmul(xn, p[pre + "w_qproj"]))  # (B, L, n_qubits)
        z = self.node(angles, p[pre + "theta_q"])
        return ad.matmul(z, p[pre + "w_qout"])

    def forward(self, x: Tensor, masks=None, trace=None) -> Tensor:
        p = self.params
        h = ad.add(ad.matmul(x, p["embed/w"]), p["embed/b"])
        for layer in range(self.cfg.layers):
            pre = f"l{layer}/"
            xn = ad.layer_norm(h, p[pre + "ln1/g"], p[pre + "ln1/b"])
            h = ad.add(h, self._time_mix(xn, pre))
            xn2 = ad.layer_norm(h, p[pre + "ln2/g"], p[pre + "ln2/b"])
            h = ad.add(h, ad.add(self._channel_mix(xn2, pre), self._quantum_branch(xn2, pre)))
        out = ad.layer_norm(h, p["ln_out/g"], p["ln_out/b"])
        return out[:, -1, :]


_BUILDERS = {
    "mlp": Mlp,
    "lstm": Lstm,
    "transformer": lambda d, L, cfg, rng: Encoder(d, L, cfg, rng, quantum=False),
    "qnn": QnnBackbone,
    "qasa": lambda d, L, cfg, rng: Encoder(d, L, cfg, rng, quantum=True),
    "qrwkv": Qrwkv,
}


class Network:
    """A backbone plus a linear head; actor emits logits, critic a value."""

    def __init__(self, kind: str, in_dim: int, seq_len: int, n_outputs: int,
                 cfg: BackboneConfig, rng: np.random.Generator):
        if kind not in _BUILDERS:
            raise ContractError(f"unknown backbone kind '{kind}'")
        self.kind = kind
        self.cfg = cfg
        self.in_dim = in_dim
        self.seq_len = seq_len
        self.n_outputs = n_outputs
        self.backbone = _BUILDERS[kind](in_dim, seq_len, cfg, rng)
        self.head_w = ad.parameter(xavier_uniform(rng, cfg.hidden, n_outputs))
        self.head_b = ad.parameter(np.zeros(n_outputs))

    @property
    def params(self) -> dict[str, Tensor]:
        out = {f"backbone/{k}": v for k, v in self.backbone.params.items()}
        out["head/w"] = self.head_w
        out["head/b"] = self.head_b
        return out

    def forward(self, windows, masks: DropoutMasks | None = None, trace=None) -> Tensor:
        x = windows if isinstance(windows, Tensor) else Tensor(np.asarray(windows, dtype=np.float64))
        if x.ndim != 3 or x.shape[1] != self.seq_len or x.shape[2] != self.in_dim:
            raise ContractError(
                f"expected windows of shape (B, {self.seq_len}, {self.in_dim}), got {x.shape}"
            )
        rep = self.backbone.forward(x, masks=masks, trace=trace)
        return ad.add(rowmm(rep, self.head_w), self.head_b)

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.params
        missing = sorted(set(params) ^ set(arrays))
        if missing:
            raise ContractError(f"checkpoint/network parameter mismatch: {missing}")
        for name, tensor in params.items():
            if tensor.data.shape != arrays[name].shape:
                raise ContractError(
                    f"parameter '{name}' shape {arrays[name].shape} != {tensor.data.shape}"
                )
            tensor.data = arrays[name].astype(np.float64).copy()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}


def actor_output(logits: Tensor) -> tuple[Tensor, Tensor]:
    """Training-time (probs, log_probs) tensors from actor logits."""
    log_probs = ad.log_softmax(logits, axis=-1)
    return ad.exp(log_probs), log_probs
