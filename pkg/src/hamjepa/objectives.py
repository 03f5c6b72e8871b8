"""Loss and regularizer terms: rollout prediction consistency, the mean-of-
views baseline prediction loss, the fixed-units energy budget, variance and
projected log-det floors, the batch-mean penalty, the sliced
characteristic-function statistic, and the weighted total.

Every term returns its value together with the exact gradient with respect
to its batch input, so the training loop only has to chain them through the
encoder.  Projection and slice caches are owned by the caller and passed in
explicitly; nothing here keeps hidden state.
"""

from dataclasses import dataclass, field

import numpy as np

from .hamflow import (
    PhaseState,
    PotentialGrads,
    PotentialNet,
    RolloutSpec,
    _eval_force,
    potential_value_backward,
    rollout,
)
from .numlin import SymMatrix, cholesky_factor, cholesky_slogdet, orthonormalize_columns, sym_eig

VAR_FLOOR_EPS = 1e-8  # inside the square root of the per-dimension std


@dataclass(frozen=True)
class MatchSpec:
    mode: str = "q"  # "q" or "qp"
    p_weight: float = 0.0
    detach_target: bool = True
    energy_weight: float = 0.0
    bidirectional: bool = False

    def __post_init__(self):
        if self.mode not in ("q", "qp"):
            raise ValueError(f"unknown match mode {self.mode!r}")
        if self.p_weight < 0 or self.energy_weight < 0:
            raise ValueError("weights must be nonnegative")


@dataclass(frozen=True)
class RegularizerSpec:
    alpha_q: float = 1.0
    alpha_p: float = 1.0
    sigma_min: float = 0.1
    proj_dim: int = 8
    tau: float = -1.0
    eps: float = 1e-4
    r0_norm: float | None = None
    eigmax_frac_ceiling: float | None = None
    refresh_interval: int = 16

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("covariance ridge eps must be positive")
        if self.proj_dim < 1 or self.refresh_interval < 1:
            raise ValueError("proj_dim and refresh_interval must be positive")
        if self.r0_norm is not None and not (0 < self.r0_norm <= 1):
            raise ValueError("r0_norm must lie in (0, 1]")
        if self.eigmax_frac_ceiling is not None and not (0 < self.eigmax_frac_ceiling <= 1):
            raise ValueError("eigmax_frac_ceiling must lie in (0, 1]")


def default_sigreg_knots(n_knots: int = 17, t_max: float = 4.0):
    """Knots uniform on (0, t_max], weighted by the target CF density."""
    knots = t_max * np.arange(1, n_knots + 1) / n_knots
    weights = np.exp(-0.5 * knots**2)
    return knots, weights / weights.sum()


@dataclass(frozen=True)
class SIGRegSpec:
    n_slices: int = 64
    knots: np.ndarray = field(default_factory=lambda: default_sigreg_knots()[0])
    weights: np.ndarray = field(default_factory=lambda: default_sigreg_knots()[1])
    refresh_interval: int = 16

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(np.diff(knots) <= 0) or np.any(knots <= 0):
            raise ValueError("knots must be positive and strictly increasing")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "weights", weights / weights.sum())


class ProjectionCache:
    """Orthonormal d x k projection, refreshed every ``refresh_interval``
    steps from its own seeded generator."""

    def __init__(self, dim: int, k: int, refresh_interval: int, rng: np.random.Generator):
        self.dim = dim
        self.k = k
        self.refresh_interval = refresh_interval
        self.rng = rng
        self.matrix = None
        self._last_refresh = None

    def get(self, step: int) -> np.ndarray:
        due = self.matrix is None or (
            step % self.refresh_interval == 0 and step != self._last_refresh
        )
        if due:
            self.matrix = orthonormalize_columns(
                self.rng.standard_normal((self.dim, self.k)), self.rng
            )
            self._last_refresh = step
        return self.matrix


class SliceCache:
    """Unit-norm Gaussian slice directions (columns), refreshed per interval."""

    def __init__(self, dim: int, n_slices: int, refresh_interval: int, rng: np.random.Generator):
        self.dim = dim
        self.n_slices = n_slices
        self.refresh_interval = refresh_interval
        self.rng = rng
        self.matrix = None
        self._last_refresh = None

    def get(self, step: int) -> np.ndarray:
        due = self.matrix is None or (
            step % self.refresh_interval == 0 and step != self._last_refresh
        )
        if due:
            a = self.rng.standard_normal((self.dim, self.n_slices))
            self.matrix = a / np.sqrt(np.sum(a * a, axis=0, keepdims=True))
            self._last_refresh = step
        return self.matrix


@dataclass
class PredictionLossResult:
    loss: float
    forward_loss: float
    backward_loss: float
    d_source: PhaseState  # gradient w.r.t. the rolled-out view's state
    d_target: PhaseState  # gradient w.r.t. the other view's state
    net_grads: PotentialGrads


def _direction_loss(net, s_from: PhaseState, s_to: PhaseState, spec, match):
    """One prediction direction: roll s_from, compare against s_to."""
    out, tape = rollout(net, s_from, spec, record=True)
    B, d = out.q.shape
    dq_hat = np.zeros_like(out.q)
    dp_hat = np.zeros_like(out.p)
    d_to_q = np.zeros_like(out.q)
    d_to_p = np.zeros_like(out.p)

    if match.mode == "qp":
        resid_q = out.q - s_to.q
        resid_p = out.p - s_to.p
        loss = float(np.mean(resid_q**2) + np.mean(resid_p**2)) / 2.0
        # mean over B * 2d entries of the stacked state
        dq_hat += resid_q / (B * d)
        dp_hat += resid_p / (B * d)
        if not match.detach_target:
            d_to_q -= resid_q / (B * d)
            d_to_p -= resid_p / (B * d)
    else:
        resid_q = out.q - s_to.q
        loss = float(np.mean(resid_q**2))
        dq_hat += 2.0 * resid_q / (B * d)
        if not match.detach_target:
            d_to_q -= 2.0 * resid_q / (B * d)
        if match.p_weight > 0:
            resid_p = out.p - s_to.p
            loss += match.p_weight * float(np.mean(resid_p**2))
            dp_hat += match.p_weight * 2.0 * resid_p / (B * d)
            if not match.detach_target:
                d_to_p -= match.p_weight * 2.0 * resid_p / (B * d)

    energy_rec = None
    energy_upstream = None
    if match.energy_weight > 0:
        # energy of the prediction against the stop-gradient energy of the
        # source state
        rec_hat = _eval_force(net, out.q)
        e_hat = 0.5 * np.sum(out.p**2, axis=1) + rec_hat.value
        e_src = 0.5 * np.sum(s_from.p**2, axis=1) + _eval_force(net, s_from.q).value
        delta = e_hat - e_src
        loss += match.energy_weight * float(np.mean(delta**2))
        c = match.energy_weight * 2.0 * delta / B
        dq_hat += c[:, None] * rec_hat.grad
        dp_hat += c[:, None] * out.p
        energy_rec = rec_hat
        energy_upstream = c

    d_from_q, d_from_p, grads = tape.backward(dq_hat, dp_hat)
    if energy_rec is not None:
        # the explicit parameter dependence of V(q_hat); its q-chain is
        # already inside dq_hat, so only fixed-q parameter terms are added
        extra = PotentialGrads.zeros_like(net)
        potential_value_backward(net, energy_rec, energy_upstream, extra)
        grads.add_(extra)
        # remove the doubled q-path: value backward also returns c * grad,
        # which tape.backward already propagated; parameter grads in `extra`
        # are at fixed q, so nothing else to correct
    return loss, d_from_q, d_from_p, d_to_q, d_to_p, grads


def prediction_loss(
    net: PotentialNet,
    s_a: PhaseState,
    s_b: PhaseState,
    spec: RolloutSpec,
    match: MatchSpec,
) -> PredictionLossResult:
    """Consistency loss between the rolled-out source view and the target.

    Rolls s_a forward; with ``bidirectional`` also rolls s_b with the step
    sign flipped and averages the two directions.  The target branch
    receives no gradient when ``detach_target`` is set; energy terms always
    stop the gradient on the source energy.
    """
    if s_a.q.shape != s_b.q.shape:
        raise ValueError(f"batch shape mismatch: {s_a.q.shape} vs {s_b.q.shape}")
    fwd, da_q, da_p, db_q, db_p, grads = _direction_loss(net, s_a, s_b, spec, match)
    if not match.bidirectional:
        return PredictionLossResult(
            fwd, fwd, 0.0, PhaseState(da_q, da_p), PhaseState(db_q, db_p), grads
        )

    back_spec = RolloutSpec(spec.method, spec.dt, spec.steps, -spec.direction)
    bwd, db_q2, db_p2, da_q2, da_p2, grads2 = _direction_loss(net, s_b, s_a, back_spec, match)
    for g in (grads, grads2):
        for w in g.d_weights:
            w *= 0.5
        for b in g.d_biases:
            b *= 0.5
        g.d_alpha *= 0.5
        g.d_scale *= 0.5
    grads.add_(grads2)
    return PredictionLossResult(
        0.5 * (fwd + bwd),
        fwd,
        bwd,
        PhaseState(0.5 * (da_q + da_q2), 0.5 * (da_p + da_p2)),
        PhaseState(0.5 * (db_q + db_q2), 0.5 * (db_p + db_p2)),
        grads,
    )


def lejepa_prediction_loss(z_views: np.ndarray, n_global: int) -> tuple[float, np.ndarray]:
    """Half mean squared deviation of every view from the per-sample mean of
    the first ``n_global`` views."""
    z = np.asarray(z_views, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"expected V x B x D views, got shape {z.shape}")
    V, B, D = z.shape
    if not 1 <= n_global <= V:
        raise ValueError(f"n_global={n_global} out of range for {V} views")
    center = z[:n_global].mean(axis=0)
    dev = z - center[None]
    loss = 0.5 * float(np.mean(dev**2))
    grad = dev / (V * B * D)
    grad[:n_global] -= dev.sum(axis=0) / (V * B * D * n_global)
    return loss, grad


def energy_budget(z_all: np.ndarray, reg: RegularizerSpec) -> tuple[float, np.ndarray]:
    """Squared deviation of the per-coordinate second moments of the q and p
    halves from their fixed-unit targets."""
    z = np.asarray(z_all, dtype=np.float64)
    n, two_d = z.shape
    d0 = two_d // 2
    q, p = z[:, :d0], z[:, d0:]
    mq = float(np.mean(q * q))
    mp = float(np.mean(p * p))
    loss = (mq - reg.alpha_q) ** 2 + (mp - reg.alpha_p) ** 2
    grad = np.empty_like(z)
    grad[:, :d0] = 4.0 * (mq - reg.alpha_q) * q / (n * d0)
    grad[:, d0:] = 4.0 * (mp - reg.alpha_p) * p / (n * d0)
    return loss, grad


def variance_floor(x: np.ndarray, sigma_min: float) -> tuple[float, np.ndarray]:
    """Hinge-squared penalty on per-dimension batch standard deviations
    below ``sigma_min``; population statistics, zero for batches below 2."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        return 0.0, np.zeros_like(x)
    mu = x.mean(axis=0)
    var = np.maximum(np.mean(x * x, axis=0) - mu * mu, 0.0)
    std = np.sqrt(var + VAR_FLOOR_EPS)
    gap = np.maximum(sigma_min - std, 0.0)
    loss = float(np.mean(gap**2))
    dloss_dstd = -2.0 * gap / d
    grad = (dloss_dstd / std)[None, :] * (x - mu[None, :]) / n
    return loss, grad


def mean_penalty(z_all: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared per-dimension batch mean, averaged over dimensions."""
    z = np.asarray(z_all, dtype=np.float64)
    n, d = z.shape
    mu = z.mean(axis=0)
    loss = float(np.mean(mu**2))
    grad = np.broadcast_to(2.0 * mu / (d * n), z.shape).copy()
    return loss, grad


@dataclass
class FloorDiagnostics:
    logdet_per_dim: float
    pr: float
    pr_norm: float
    eigmax_frac: float
    vol_loss: float
    pr_loss: float
    eig_loss: float


def projected_logdet_floor(
    x: np.ndarray,
    reg: RegularizerSpec,
    projection: np.ndarray,
    step: int = 0,
) -> tuple[float, FloorDiagnostics, np.ndarray]:
    """Volume, participation-ratio, and top-eigenvalue-fraction hinges on
    the covariance of the centered batch pushed through a fixed orthonormal
    projection.

    The covariance is ridged with ``reg.eps``; a non-positive log-det sign
    despite the ridge indicates numerical corruption and is fatal.  The PR
    floor is ``r0_norm * k`` on the unnormalized participation ratio.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        diag = FloorDiagnostics(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        return 0.0, diag, np.zeros_like(x)
    k = projection.shape[1]
    centered = x - x.mean(axis=0)
    y = centered @ projection
    cov = y.T @ y / (n - 1)
    cov = 0.5 * (cov + cov.T) + reg.eps * np.eye(k)

    sign, logdet = cholesky_slogdet(SymMatrix(cov))
    if sign <= 0:
        raise FloatingPointError("projected covariance lost definiteness despite ridge")
    lvol = logdet / k
    vol_gap = max(0.0, reg.tau - lvol)
    vol_loss = vol_gap**2

    tr = float(np.trace(cov))
    tr_sq = float(np.sum(cov * cov))  # trace of cov^2 for symmetric cov
    pr = tr * tr / tr_sq
    eig = sym_eig(SymMatrix(cov))
    lmax = float(eig.eigenvalues[0])
    u = eig.eigenvectors[:, 0]
    eigmax_frac = lmax / tr

    g_cov = np.zeros((k, k))
    if vol_gap > 0:
        cov_inv = np.linalg.inv(cov)
        g_cov += -2.0 * vol_gap / k * cov_inv

    pr_loss = 0.0
    if reg.r0_norm is not None:
        r0 = reg.r0_norm * k
        pr_gap = max(0.0, r0 - pr)
        pr_loss = pr_gap**2
        if pr_gap > 0:
            dpr_dcov = 2.0 * tr / tr_sq * np.eye(k) - 2.0 * tr * tr / tr_sq**2 * cov
            g_cov += -2.0 * pr_gap * dpr_dcov

    eig_loss = 0.0
    if reg.eigmax_frac_ceiling is not None:
        eig_gap = max(0.0, eigmax_frac - reg.eigmax_frac_ceiling)
        eig_loss = eig_gap**2
        if eig_gap > 0:
            dfrac_dcov = np.outer(u, u) / tr - lmax / tr**2 * np.eye(k)
            g_cov += 2.0 * eig_gap * dfrac_dcov

    loss = vol_loss + pr_loss + eig_loss
    diag = FloorDiagnostics(lvol, pr, pr / k, eigmax_frac, vol_loss, pr_loss, eig_loss)

    dy = y @ (g_cov + g_cov.T) / (n - 1)
    dx = dy @ projection.T
    dx -= dx.mean(axis=0)  # adjoint of the batch centering
    return float(loss), diag, dx


def sigreg_statistic(
    z: np.ndarray, spec: SIGRegSpec, slices: np.ndarray, step: int = 0
) -> tuple[float, np.ndarray]:
    """Sliced characteristic-function statistic against the standard normal.

    Projects the batch onto unit slice directions, compares the empirical
    cosine/sine characteristic function at the knot grid against
    exp(-t^2/2), and mean-reduces the per-slice weighted squared deviations
    scaled by the sample count.
    """
    z = np.asarray(z, dtype=np.float64)
    n, d = z.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    kslices = slices.shape[1]
    y = z @ slices  # (n, K)
    ty = y[:, :, None] * spec.knots[None, None, :]  # (n, K, T)
    cos_ty = np.cos(ty)
    sin_ty = np.sin(ty)
    c_hat = cos_ty.mean(axis=0)  # (K, T)
    s_hat = sin_ty.mean(axis=0)
    target = np.exp(-0.5 * spec.knots**2)
    dev_c = c_hat - target[None, :]
    per_slice = n * np.sum(spec.weights[None, :] * (dev_c**2 + s_hat**2), axis=1)
    stat = float(per_slice.mean())

    wt = spec.weights * spec.knots
    dy = (2.0 / kslices) * (
        -(dev_c[None] * wt[None, None]) * sin_ty + (s_hat[None] * wt[None, None]) * cos_ty
    ).sum(axis=2)
    grad = dy @ slices.T
    return stat, grad


def total_objective(
    l_pred: float, terms: dict[str, float], weights: dict[str, float]
) -> tuple[float, dict[str, float]]:
    """Weighted sum of the prediction loss (unit weight) and named terms;
    returns the total plus a per-term breakdown for logging.  Decoupled
    weight decay lives in the optimizer, so it is reported, never added."""
    breakdown = {"L_pred": l_pred}
    total = l_pred
    for name, value in terms.items():
        lam = weights.get(name, 0.0)
        if lam < 0:
            raise ValueError(f"negative weight for {name}")
        breakdown[name] = value
        total += lam * value
    breakdown["total"] = total
    return total, breakdown
