"""Separable Hamiltonian energy with a learnable potential, explicit
symplectic integrators, and reverse-mode gradients through the rollout.

The energy is H(q, p) = 0.5 |p|^2 + V(q) with
V(q) = 0.5 * alpha * |q|^2 + scale * f(q), f a small tanh MLP.  The kick
updates need grad V, so backpropagating a loss through the integrator needs
second derivatives of V: each force evaluation keeps a record of its
forward and gradient intermediates, and the record supports both a
value-path backward (for energy terms) and a gradient-path backward
(Hessian-vector product plus parameter derivatives of grad V).

All arrays are float64.  Batched states are rows; single states work too.
The unrolled depth is small (K <= ~8) so every step's record is stored;
nothing is recomputed in the backward pass.
"""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PhaseState:
    """Position/momentum pair; rows are batch entries when 2-d."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        if q.shape != p.shape:
            raise ValueError(f"q/p shape mismatch: {q.shape} vs {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase state contains non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return self.q.shape[-1]


@dataclass
class PotentialNet:
    """V(q) = 0.5 * alpha |q|^2 + scale * f(q), f a tanh MLP to a scalar."""

    alpha: float
    scale: float
    weights: list  # W_i with shape (out, in); last layer has out = 1
    biases: list

    def __post_init__(self):
        if self.alpha < 0 or self.scale < 0:
            raise ValueError("alpha and scale must be nonnegative")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be nonempty and aligned")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input does not chain from layer {i - 1}")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("final layer must map to a scalar")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]


@dataclass(frozen=True)
class RolloutSpec:
    method: str = "leapfrog"
    dt: float = 0.1
    steps: int = 1
    direction: int = 1

    def __post_init__(self):
        if self.method not in ("leapfrog", "symplectic_euler"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")


@dataclass
class PotentialGrads:
    d_weights: list
    d_biases: list
    d_alpha: float = 0.0
    d_scale: float = 0.0

    @classmethod
    def zeros_like(cls, net: PotentialNet) -> "PotentialGrads":
        return cls(
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases],
        )

    def add_(self, other: "PotentialGrads"):
        for a, b in zip(self.d_weights, other.d_weights):
            a += b
        for a, b in zip(self.d_biases, other.d_biases):
            a += b
        self.d_alpha += other.d_alpha
        self.d_scale += other.d_scale


def init_potential(
    d0: int,
    rng: np.random.Generator,
    hidden_dim: int = 64,
    depth: int = 2,
    alpha: float = 1.0,
    scale: float = 0.0,
) -> PotentialNet:
    """Fresh potential with ``depth`` tanh hidden layers of ``hidden_dim``."""
    dims = [d0] + [hidden_dim] * depth + [1]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        weights.append(rng.standard_normal((dims[i + 1], fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(dims[i + 1]))
    return PotentialNet(alpha=alpha, scale=scale, weights=weights, biases=biases)


class ForceRecord:
    """Intermediates of one evaluation of (V, grad V) on a batch of q."""

    __slots__ = ("q", "acts", "vs", "f", "value", "grad")

    def __init__(self, q, acts, vs, f, value, grad):
        self.q = q
        self.acts = acts  # a_1 .. a_{L-1}, post-tanh
        self.vs = vs  # v_0 .. v_{L-1}, gradient backsweep intermediates
        self.f = f
        self.value = value
        self.grad = grad


def _eval_force(net: PotentialNet, q2d: np.ndarray) -> ForceRecord:
    L = len(net.weights)
    a = q2d
    acts = []
    for i in range(L - 1):
        a = np.tanh(a @ net.weights[i].T + net.biases[i])
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite activation at layer {i}")
        acts.append(a)
    f = (acts[-1] if acts else q2d) @ net.weights[-1].T + net.biases[-1]
    f = f[:, 0]
    if not np.all(np.isfinite(f)):
        raise FloatingPointError(f"non-finite output at layer {L - 1}")

    # gradient backsweep, kept because the Hessian pass re-differentiates it
    B = q2d.shape[0]
    vs = [None] * L
    vs[L - 1] = np.broadcast_to(net.weights[-1][0], (B, net.weights[-1].shape[1])).copy()
    for i in range(L - 1, 0, -1):
        u = vs[i] * (1.0 - acts[i - 1] ** 2)
        vs[i - 1] = u @ net.weights[i - 1]
    grad = net.alpha * q2d + net.scale * vs[0]
    value = 0.5 * net.alpha * np.sum(q2d * q2d, axis=1) + net.scale * f
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(value))):
        raise FloatingPointError("non-finite potential value or gradient (input layer)")
    return ForceRecord(q2d, acts, vs, f, value, grad)


def _force_backward(
    net: PotentialNet, rec: ForceRecord, g_bar: np.ndarray, grads: PotentialGrads
) -> np.ndarray:
    """Backward through g = grad V(q): returns the Hessian-vector product
    contribution to q_bar and accumulates parameter derivatives of g' g_bar."""
    L = len(net.weights)
    q_bar = net.alpha * g_bar
    grads.d_alpha += float(np.sum(g_bar * rec.q))
    grads.d_scale += float(np.sum(g_bar * rec.vs[0]))
    v_bar = net.scale * g_bar

    a_bars = [None] * L  # slot i holds the adjoint of acts[i-1]
    for i in range(1, L):
        act = rec.acts[i - 1]
        u_i = rec.vs[i] * (1.0 - act**2)
        u_bar = v_bar @ net.weights[i - 1].T
        grads.d_weights[i - 1] += u_i.T @ v_bar
        v_bar = u_bar * (1.0 - act**2)
        a_bars[i] = u_bar * rec.vs[i] * (-2.0 * act)
    grads.d_weights[-1][0] += v_bar.sum(axis=0)

    a_bar = np.zeros_like(rec.acts[-1]) if L > 1 else None
    for i in range(L - 1, 0, -1):
        act = rec.acts[i - 1]
        total = a_bars[i] if a_bar is None else a_bars[i] + a_bar
        z_bar = total * (1.0 - act**2)
        prev = rec.acts[i - 2] if i >= 2 else rec.q
        grads.d_weights[i - 1] += z_bar.T @ prev
        grads.d_biases[i - 1] += z_bar.sum(axis=0)
        if i >= 2:
            a_bar = z_bar @ net.weights[i - 1]
        else:
            q_bar = q_bar + z_bar @ net.weights[i - 1]
    return q_bar


def _value_backward(
    net: PotentialNet, rec: ForceRecord, c: np.ndarray, grads: PotentialGrads
) -> np.ndarray:
    """Backward through sum_b c_b * V(q_b): returns the q_bar contribution
    (c * grad V, reusing the stored gradient) and accumulates the parameter
    derivatives at fixed q."""
    q_bar = c[:, None] * rec.grad
    grads.d_alpha += float(np.sum(c * 0.5 * np.sum(rec.q * rec.q, axis=1)))
    grads.d_scale += float(np.sum(c * rec.f))
    delta = (net.scale * c)[:, None]
    last_in = rec.acts[-1] if rec.acts else rec.q
    grads.d_weights[-1] += delta.T @ last_in
    grads.d_biases[-1] += delta.sum(axis=0)
    d = delta @ net.weights[-1]
    for i in range(len(net.weights) - 1, 0, -1):
        act = rec.acts[i - 1]
        e = d * (1.0 - act**2)
        prev = rec.acts[i - 2] if i >= 2 else rec.q
        grads.d_weights[i - 1] += e.T @ prev
        grads.d_biases[i - 1] += e.sum(axis=0)
        d = e @ net.weights[i - 1]
        # the resulting d at i == 1 is the q-chain, already counted via c * grad
    return q_bar


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def potential_eval(net: PotentialNet, q) -> tuple[np.ndarray, np.ndarray, ForceRecord]:
    """Potential value and its q-gradient, with the record retained for
    parameter gradients."""
    q2d, squeeze = _as_batch(q)
    if q2d.shape[1] != net.in_dim:
        raise ValueError(f"q has dim {q2d.shape[1]}, net expects {net.in_dim}")
    rec = _eval_force(net, q2d)
    if squeeze:
        return rec.value[0], rec.grad[0], rec
    return rec.value, rec.grad, rec


def hamiltonian_energy(net: PotentialNet, state: PhaseState):
    """H(q, p) = 0.5 |p|^2 + V(q)."""
    q2d, squeeze = _as_batch(state.q)
    p2d, _ = _as_batch(state.p)
    value = 0.5 * np.sum(p2d * p2d, axis=1) + _eval_force(net, q2d).value
    return float(value[0]) if squeeze else value


def leapfrog_step(net: PotentialNet, state: PhaseState, dt: float) -> PhaseState:
    """One half-kick / drift / half-kick update with step dt (sign allowed)."""
    if dt == 0:
        raise ValueError("dt must be nonzero")
    q2d, squeeze = _as_batch(state.q)
    p2d, _ = _as_batch(state.p)
    p_half = p2d - 0.5 * dt * _eval_force(net, q2d).grad
    q_new = q2d + dt * p_half
    p_new = p_half - 0.5 * dt * _eval_force(net, q_new).grad
    if squeeze:
        return PhaseState(q_new[0], p_new[0])
    return PhaseState(q_new, p_new)


def symplectic_euler_step(net: PotentialNet, state: PhaseState, dt: float) -> PhaseState:
    """Kick then drift with the updated momentum."""
    if dt == 0:
        raise ValueError("dt must be nonzero")
    q2d, squeeze = _as_batch(state.q)
    p2d, _ = _as_batch(state.p)
    p_new = p2d - dt * _eval_force(net, q2d).grad
    q_new = q2d + dt * p_new
    if squeeze:
        return PhaseState(q_new[0], p_new[0])
    return PhaseState(q_new, p_new)


class RolloutTape:
    """Stored force records of a recorded rollout, for the reverse pass."""

    def __init__(self, net: PotentialNet, method: str, dt_eff: float, records: list):
        self.net = net
        self.method = method
        self.dt_eff = dt_eff
        self.records = records

    def backward(self, dq_final, dp_final) -> tuple[np.ndarray, np.ndarray, PotentialGrads]:
        """Gradients of a scalar loss w.r.t. the initial state and the
        potential parameters, given the loss gradients at the final state."""
        dq, _ = _as_batch(dq_final)
        dp, _ = _as_batch(dp_final)
        grads = PotentialGrads.zeros_like(self.net)
        h = self.dt_eff
        if self.method == "leapfrog":
            K = len(self.records) - 1
            g_bars = [np.zeros_like(r.grad) for r in self.records]
            q_bar, p_bar = dq.copy(), dp.copy()
            for k in range(K - 1, -1, -1):
                p_half_bar = p_bar
                g_bars[k + 1] += -0.5 * h * p_bar
                q_bar = q_bar + _force_backward(
                    self.net, self.records[k + 1], g_bars[k + 1], grads
                )
                p_half_bar = p_half_bar + h * q_bar
                p_bar = p_half_bar
                g_bars[k] += -0.5 * h * p_half_bar
            q_bar = q_bar + _force_backward(self.net, self.records[0], g_bars[0], grads)
            return q_bar, p_bar, grads

        # symplectic Euler: p1 = p - h g(q); q1 = q + h p1
        q_bar, p_bar = dq.copy(), dp.copy()
        for rec in reversed(self.records):
            p1_bar = p_bar + h * q_bar
            q_bar = q_bar + _force_backward(self.net, rec, -h * p1_bar, grads)
            p_bar = p1_bar
        return q_bar, p_bar, grads


def rollout(net: PotentialNet, state: PhaseState, spec: RolloutSpec, record: bool = False):
    """K composed integrator steps with effective step direction * dt.

    With ``record=True`` also returns the tape for the unrolled reverse pass.
    """
    q2d, squeeze = _as_batch(state.q)
    p2d, _ = _as_batch(state.p)
    h = spec.direction * spec.dt
    records = []

    np_err = np.seterr(over="ignore", invalid="ignore")  # blowups are caught below
    try:
        out = _rollout_loop(net, q2d, p2d, h, spec, records)
    finally:
        np.seterr(**np_err)
    q, p = out

    if squeeze:
        result = PhaseState(q[0], p[0])
    else:
        result = PhaseState(q, p)
    if record:
        return result, RolloutTape(net, spec.method, h, records)
    return result


def _rollout_loop(net, q2d, p2d, h, spec, records):
    if spec.method == "leapfrog":
        rec = _eval_force(net, q2d)
        records.append(rec)
        q, p = q2d, p2d
        for k in range(spec.steps):
            p_half = p - 0.5 * h * records[-1].grad
            q = q + h * p_half
            try:
                rec = _eval_force(net, q)  # cached for the next step's first kick
            except FloatingPointError as exc:
                raise FloatingPointError(f"rollout step {k}: {exc}") from exc
            records.append(rec)
            p = p_half - 0.5 * h * rec.grad
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
                raise FloatingPointError(f"non-finite state at rollout step {k}")
    else:
        q, p = q2d, p2d
        for k in range(spec.steps):
            try:
                rec = _eval_force(net, q)
            except FloatingPointError as exc:
                raise FloatingPointError(f"rollout step {k}: {exc}") from exc
            records.append(rec)
            p = p - h * rec.grad
            q = q + h * p
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
                raise FloatingPointError(f"non-finite state at rollout step {k}")
    return q, p


def param_gradients(tape: RolloutTape, upstream: PhaseState) -> PotentialGrads:
    """Parameter gradients of a scalar loss whose state gradient at the
    rollout output is ``upstream``."""
    _, _, grads = tape.backward(upstream.q, upstream.p)
    return grads


def potential_value_backward(
    net: PotentialNet, record: ForceRecord, upstream: np.ndarray, grads: PotentialGrads
) -> np.ndarray:
    """Backward of sum_b upstream_b * V(q_b) for a stored evaluation record:
    accumulates parameter gradients and returns the q gradient."""
    return _value_backward(net, record, np.asarray(upstream, dtype=np.float64), grads)


def flow_jacobian_fd(
    net: PotentialNet, state: PhaseState, spec: RolloutSpec, h: float = 1e-5
) -> np.ndarray:
    """Central-difference Jacobian of the rollout map on one state, in the
    stacked [q; p] coordinates."""
    if not (1e-7 <= h <= 1e-4):
        raise ValueError("fd step must be in [1e-7, 1e-4]")
    if state.q.ndim != 1:
        raise ValueError("flow_jacobian_fd expects a single state")
    d0 = state.dim
    s0 = np.concatenate([state.q, state.p])
    jac = np.zeros((2 * d0, 2 * d0))
    for i in range(2 * d0):
        plus = s0.copy()
        minus = s0.copy()
        plus[i] += h
        minus[i] -= h
        out_p = rollout(net, PhaseState(plus[:d0], plus[d0:]), spec)
        out_m = rollout(net, PhaseState(minus[:d0], minus[d0:]), spec)
        jac[:, i] = (
            np.concatenate([out_p.q, out_p.p]) - np.concatenate([out_m.q, out_m.p])
        ) / (2.0 * h)
    return jac


# --- flat parameter serialization --------------------------------------------
# Format: <prefix>.bin holds all layer parameters as little-endian float64 in
# layer order (W row-major, then b); <prefix>.json is the sidecar with layer
# shapes plus the scalar alpha / residual scale.


def write_flat_params(prefix: str, arrays: list, meta: dict):
    if arrays:
        flat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
    else:
        flat = np.zeros(0)
    with open(f"{prefix}.bin", "wb") as fh:
        fh.write(flat.astype("<f8").tobytes())
    sidecar = dict(meta)
    sidecar["param_count"] = int(flat.size)
    with open(f"{prefix}.json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_flat_params(prefix: str) -> tuple[np.ndarray, dict]:
    with open(f"{prefix}.json") as fh:
        meta = json.load(fh)
    flat = np.frombuffer(open(f"{prefix}.bin", "rb").read(), dtype="<f8").astype(np.float64)
    if flat.size != meta["param_count"]:
        raise ValueError(f"{prefix}.bin holds {flat.size} values, sidecar says {meta['param_count']}")
    return flat, meta


def save_potential(net: PotentialNet, prefix: str):
    arrays = []
    shapes = []
    for w, b in zip(net.weights, net.biases):
        arrays.extend([w, b])
        shapes.append(list(w.shape))
    write_flat_params(
        prefix,
        arrays,
        {
            "format": "hamjepa-flat-v1",
            "kind": "potential",
            "alpha": net.alpha,
            "residual_scale": net.scale,
            "layer_shapes": shapes,
        },
    )


def load_potential(prefix: str) -> PotentialNet:
    flat, meta = read_flat_params(prefix)
    if meta.get("kind") != "potential":
        raise ValueError(f"{prefix} does not hold a potential (kind={meta.get('kind')!r})")
    weights, biases = [], []
    pos = 0
    for out_d, in_d in meta["layer_shapes"]:
        weights.append(flat[pos : pos + out_d * in_d].reshape(out_d, in_d).copy())
        pos += out_d * in_d
        biases.append(flat[pos : pos + out_d].copy())
        pos += out_d
    return PotentialNet(
        alpha=float(meta["alpha"]),
        scale=float(meta["residual_scale"]),
        weights=weights,
        biases=biases,
    )
