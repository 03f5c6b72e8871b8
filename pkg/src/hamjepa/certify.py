"""Numerical certification suite.

Every covariance-geometry, symplecticity, anti-collapse, and training
property that this package claims is registered here as a named check with
an explicit tolerance.  The test suite asserts exactly these checks and the
command-line ``verify`` command runs them, so no claim lives only in tests
or only in the CLI.

Each check is a pure function of its seed (plus the tolerance table) and
returns a CheckResult with the measured residuals.
"""

import copy
import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import trainer
from .diagnostics import harmonic_slice_demo, knn_accuracy
from .geomtheory import (
    GeometryBudget,
    adversarial_geometry,
    check_joint_spectral_bounds,
    coupling_sample,
    fixed_target_regret,
    gaussian_coupling,
    gibbs_lift_check,
    h_from_sigma,
    maxent_gaussian_entropy_gap,
    minimax_covariance,
    price_of_isotropy,
    sample_feasible_covariance,
    sampled_worst_case_variance,
    symplectic_factorize,
    symplectic_form,
    whiten,
    worst_case_variance,
)
from .hamflow import (
    PhaseState,
    RolloutSpec,
    flow_jacobian_fd,
    hamiltonian_energy,
    init_potential,
    leapfrog_step,
    potential_eval,
    rollout,
)
from .numlin import SPDOperator, SymMatrix, spd_inverse
from .objectives import (
    MatchSpec,
    RegularizerSpec,
    SIGRegSpec,
    SliceCache,
    prediction_loss,
    projected_logdet_floor,
    sigreg_statistic,
)
from .trainer import (
    OptimizerState,
    ScheduleSpec,
    _grouped_adamw,
    encoder_forward,
    exact_quadratic_flow,
    generate_views,
    lr_at,
    synthetic_spec_from_config,
    train,
    validate_config,
)

# Tolerances, all fixed here.  Tests may monkeypatch a single entry to
# exercise the failure path of the verify command.
TOLERANCES = {
    "symplecticity_max": 1e-5,
    "det_max": 1e-5,
    "reversibility_max": 1e-11,
    "reciprocal_sv_max": 1e-4,
    "order_slope_band": 0.1,
    "shadow_energy_factor": 5.0,
    "shadow_slope_max": 1e-9,
    "minimax_rel": 1e-9,
    "minimax_slack": 1e-6,
    "price_analytic": 1e-10,
    "price_oracle_rel": 2e-3,
    "coupling_slope": 0.02,
    "gibbs_sigmas": 3.0,
    "gradcheck_unit": 1e-4,
    "gradcheck_end_to_end": 1e-3,
    "lvol_margin": 0.2,
    "collapse_drop": 2.0,
    "collapse_steps": 200,
    "headline_gap_points": 5.0,
    "slice_ratio_min": 5.0,
    "expressivity_ratio_max": 10.0,
    "maxent_floor": -1e-10,
    "factorization_max": 1e-8,
    "roundtrip_rel": 1e-9,
    "whiten_max": 1e-10,
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0


def _random_spd(rng, d, shift=1.0):
    w = rng.standard_normal((d, d))
    return w @ w.T + shift * np.eye(d)


def _random_potential(rng, d0):
    return init_potential(
        d0,
        rng,
        hidden_dim=16,
        depth=2,
        alpha=float(rng.uniform(0.2, 1.5)),
        scale=float(rng.uniform(0.0, 1.0)),
    )


# --- flow checks -----------------------------------------------------------------


def check_symplecticity(seed: int) -> CheckResult:
    """Jacobians of 50 random rollouts satisfy D'JD = J with unit
    determinant, to finite-difference precision."""
    rng = np.random.default_rng(seed)
    worst_sympl = worst_det = 0.0
    for _ in range(50):
        d0 = int(rng.integers(2, 5))
        net = _random_potential(rng, d0)
        st = PhaseState(rng.standard_normal(d0), rng.standard_normal(d0))
        spec = RolloutSpec(
            "leapfrog", float(rng.uniform(0.01, 0.2)), int(rng.integers(1, 6)), 1
        )
        jac = flow_jacobian_fd(net, st, spec, 1e-5)
        J = symplectic_form(d0)
        worst_sympl = max(worst_sympl, float(np.abs(jac.T @ J @ jac - J).max()))
        worst_det = max(worst_det, abs(float(np.linalg.det(jac)) - 1.0))
    ok = worst_sympl <= TOLERANCES["symplecticity_max"] and worst_det <= TOLERANCES["det_max"]
    return CheckResult(
        "symplecticity", ok, {"max_form_residual": worst_sympl, "max_det_error": worst_det}
    )


def check_reversibility(seed: int) -> CheckResult:
    """Forward-then-reverse rollouts return the input to float rounding."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        d0 = int(rng.integers(2, 5))
        net = _random_potential(rng, d0)
        st = PhaseState(rng.standard_normal(d0), rng.standard_normal(d0))
        dt = float(rng.uniform(0.01, 0.2))
        K = int(rng.integers(1, 6))
        fwd = rollout(net, st, RolloutSpec("leapfrog", dt, K, 1))
        back = rollout(net, fwd, RolloutSpec("leapfrog", dt, K, -1))
        worst = max(
            worst,
            float(np.abs(back.q - st.q).max()),
            float(np.abs(back.p - st.p).max()),
        )
    return CheckResult(
        "reversibility", worst <= TOLERANCES["reversibility_max"], {"max_residual": worst}
    )


def check_reciprocal_singular_values(seed: int) -> CheckResult:
    """Singular values of rollout Jacobians pair into reciprocal products."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        d0 = int(rng.integers(2, 5))
        net = _random_potential(rng, d0)
        st = PhaseState(rng.standard_normal(d0), rng.standard_normal(d0))
        spec = RolloutSpec(
            "leapfrog", float(rng.uniform(0.05, 0.2)), int(rng.integers(1, 4)), 1
        )
        sv = np.sort(np.linalg.svd(flow_jacobian_fd(net, st, spec, 1e-5), compute_uv=False))
        worst = max(worst, float(np.abs(sv * sv[::-1] - 1.0).max()))
    return CheckResult(
        "reciprocal_singular_values",
        worst <= TOLERANCES["reciprocal_sv_max"],
        {"max_pair_error": worst},
    )


def check_convergence_order(seed: int) -> CheckResult:
    """Global rollout error against the closed-form oscillator scales as the
    square of the step size."""
    net = init_potential(1, np.random.default_rng(seed), hidden_dim=4, depth=1, alpha=1.0, scale=0.0)
    st = PhaseState(np.array([1.0]), np.array([0.0]))
    dts = [0.1, 0.05, 0.025, 0.0125]
    errs = []
    for dt in dts:
        out = rollout(net, st, RolloutSpec("leapfrog", dt, round(1.0 / dt), 1))
        errs.append(float(np.hypot(out.q[0] - np.cos(1.0), out.p[0] + np.sin(1.0))))
    slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    band = TOLERANCES["order_slope_band"]
    return CheckResult(
        "convergence_order", abs(slope - 2.0) <= band, {"slope": slope, "errors": errs}
    )


def check_shadow_energy(seed: int) -> CheckResult:
    """Ten thousand leapfrog steps on a quadratic energy keep the energy
    error bounded by a dt^2 multiple with no secular trend."""
    net = init_potential(1, np.random.default_rng(seed), hidden_dim=4, depth=1, alpha=1.0, scale=0.0)
    dt = 0.05
    cur = PhaseState(np.array([1.0]), np.array([0.0]))
    h0 = hamiltonian_energy(net, cur)
    n = 10_000
    drift = np.empty(n)
    for k in range(n):
        cur = leapfrog_step(net, cur, dt)
        drift[k] = hamiltonian_energy(net, cur) - h0
    bound = TOLERANCES["shadow_energy_factor"] * dt * dt
    slope = float(np.polyfit(np.arange(1.0, n + 1.0), drift, 1)[0])
    ok = float(np.abs(drift).max()) <= bound and abs(slope) < TOLERANCES["shadow_slope_max"]
    return CheckResult(
        "shadow_energy",
        ok,
        {"max_energy_error": float(np.abs(drift).max()), "bound": bound, "secular_slope": slope},
    )


def check_gradients(seed: int) -> CheckResult:
    """Potential, encoder, and full-step gradients match central finite
    differences at unit and end-to-end tolerances."""
    h = 1e-6
    unit_tol = TOLERANCES["gradcheck_unit"]
    e2e_tol = TOLERANCES["gradcheck_end_to_end"]
    details = {}

    net = init_potential(3, np.random.default_rng(4), hidden_dim=8, depth=2, alpha=0.7, scale=0.9)
    q = np.random.default_rng(5).standard_normal((4, 3))
    _, grad, _ = potential_eval(net, q)
    worst = 0.0
    for b in range(4):
        for i in range(3):
            qp, qm = q.copy(), q.copy()
            qp[b, i] += h
            qm[b, i] -= h
            fd = (potential_eval(net, qp)[0][b] - potential_eval(net, qm)[0][b]) / (2 * h)
            worst = max(worst, abs(grad[b, i] - fd) / max(abs(fd), 1e-6))
    details["potential_rel"] = worst
    ok = worst <= unit_tol

    enc = trainer.init_encoder(6, [8], 4, np.random.default_rng(seed))
    x = np.random.default_rng(seed + 1).standard_normal((5, 6))
    upstream = np.random.default_rng(seed + 2).standard_normal((5, 4))
    state, tape = encoder_forward(enc, x)
    d_w, d_b = trainer.encoder_backward(enc, tape, upstream)

    def enc_loss(e):
        st, _ = encoder_forward(e, x)
        return float(np.sum(upstream * np.concatenate([st.q, st.p], axis=1)))

    worst = 0.0
    rng = np.random.default_rng(seed + 3)
    for _ in range(8):
        li = int(rng.integers(0, len(enc.weights)))
        r = int(rng.integers(0, enc.weights[li].shape[0]))
        c = int(rng.integers(0, enc.weights[li].shape[1]))
        ep, em = copy.deepcopy(enc), copy.deepcopy(enc)
        ep.weights[li][r, c] += h
        em.weights[li][r, c] -= h
        fd = (enc_loss(ep) - enc_loss(em)) / (2 * h)
        worst = max(worst, abs(d_w[li][r, c] - fd) / max(abs(fd), 1e-6))
    details["encoder_rel"] = worst
    ok = ok and worst <= unit_tol

    details["step_rel"] = _end_to_end_gradcheck(seed + 4)
    ok = ok and details["step_rel"] <= e2e_tol
    return CheckResult("gradients", ok, details)


def _end_to_end_gradcheck(seed: int) -> float:
    """Worst relative error of the full predictive-step gradient against
    finite differences of the total objective on sampled coordinates."""
    cfg = validate_config(
        {
            "seed": seed,
            "hjepa": {},
            "loss": {"detach_target": False},
            "data": {"n_samples": 64, "batch_size": 16},
        }
    )
    spec = synthetic_spec_from_config(cfg)
    va, vb, _ = generate_views(spec, np.random.default_rng(seed))
    va, vb = va[:16], vb[:16]
    enc = trainer.init_encoder(spec.obs_dim, [16, 16], 16, np.random.default_rng(seed + 1))
    net = init_potential(8, np.random.default_rng(seed + 2), hidden_dim=16, depth=2, alpha=1.0, scale=0.5)
    settings = trainer._build_settings(cfg)

    def run(enc2, net2, capture=None):
        caches = {
            "q_proj": trainer.ProjectionCache(
                8, settings.reg_q.proj_dim, 16, np.random.default_rng(seed + 3)
            ),
            "p_proj": trainer.ProjectionCache(
                8, settings.reg_p.proj_dim, 16, np.random.default_rng(seed + 4)
            ),
        }
        opt = OptimizerState()
        params = trainer._flatten_params(enc2, net2)
        saved = trainer._grouped_adamw
        if capture is not None:
            trainer._grouped_adamw = lambda o, p, g, l: capture.update(
                {k: v.copy() for k, v in g.items()}
            )
        try:
            report = trainer.hamjepa_train_step(
                enc2, net2, va, vb, settings, caches, opt, params, 0.0, 0.0, 0.0, 0
            )
        finally:
            trainer._grouped_adamw = saved
        return report["total"]

    grads = {}
    run(copy.deepcopy(enc), copy.deepcopy(net), grads)
    h = 1e-6
    rng = np.random.default_rng(seed + 5)
    names = sorted(grads)
    worst = 0.0
    for _ in range(5):
        name = names[int(rng.integers(0, len(names)))]
        g = grads[name]
        sel = tuple(int(rng.integers(0, s)) for s in g.shape)

        def perturbed(eps):
            e2, n2 = copy.deepcopy(enc), copy.deepcopy(net)
            target = e2 if name.startswith("enc.") else n2
            arrays = target.weights if ".w" in name else target.biases
            arrays[int(name[-1])][sel] += eps
            return run(e2, n2)

        fd = (perturbed(h) - perturbed(-h)) / (2 * h)
        worst = max(worst, abs(g[sel] - fd) / max(abs(fd), 1e-6))
    return worst


# --- geometry checks ----------------------------------------------------------------


def check_minimax(seed: int) -> CheckResult:
    """The oracle covariance attains worst-case variance c/d, and no sampled
    budget-feasible covariance beats it."""
    rng = np.random.default_rng(seed)
    worst_rel = 0.0
    worst_margin = np.inf
    for _ in range(20):
        d = int(rng.integers(2, 7))
        hmat = _random_spd(rng, d, 0.3)
        h = SPDOperator(hmat)
        c = float(rng.uniform(0.5, 4.0))
        b = GeometryBudget(h, c)
        star = minimax_covariance(b)
        v = worst_case_variance(star, h).value
        worst_rel = max(worst_rel, abs(v - c / d) / (c / d))

        # independent evaluation of sampled alternatives (LAPACK eigensolver)
        hroot = np.linalg.cholesky(hmat)
        samples = np.empty((10_000, d, d))
        for i in range(10_000):
            samples[i] = sample_feasible_covariance(b, rng).entries
        mapped = np.einsum("ij,njk,lk->nil", hroot.T, samples, hroot.T)
        vals = np.linalg.eigvalsh(mapped)[:, -1]
        worst_margin = min(worst_margin, float(vals.min()) - (c / d - TOLERANCES["minimax_slack"]))
    ok = worst_rel <= TOLERANCES["minimax_rel"] and worst_margin >= 0
    return CheckResult(
        "minimax", ok, {"max_value_rel_err": worst_rel, "min_sample_margin": worst_margin}
    )


def check_price_of_isotropy(seed: int) -> CheckResult:
    """The isotropy price matches its closed form exactly and the
    direction-sampling oracle within tolerance, with 1 <= rho <= d."""
    rng = np.random.default_rng(seed)
    worst_formula = worst_oracle = 0.0
    bounds_ok = True
    for _ in range(200):
        d = int(rng.integers(2, 9))
        h = SPDOperator(_random_spd(rng, d, 0.2))
        c = float(rng.uniform(0.5, 3.0))
        b = GeometryBudget(h, c)
        sigma_iso, v_iso, rho = price_of_isotropy(b)
        eigs = np.linalg.eigvalsh(h.entries)
        formula = d * eigs[-1] / eigs.sum()
        worst_formula = max(worst_formula, abs(rho - formula))
        bounds_ok = bounds_ok and 1.0 - 1e-12 <= rho <= d + 1e-12
        sampled = sampled_worst_case_variance(sigma_iso, h, 100_000, rng)
        worst_oracle = max(worst_oracle, abs(v_iso - sampled) / v_iso)
    _, _, rho_eye = price_of_isotropy(GeometryBudget(SPDOperator(np.eye(4)), 1.0))
    ok = (
        worst_formula <= TOLERANCES["price_analytic"]
        and worst_oracle <= TOLERANCES["price_oracle_rel"]
        and bounds_ok
        and rho_eye == 1.0
    )
    return CheckResult(
        "price_of_isotropy",
        ok,
        {
            "max_formula_err": worst_formula,
            "max_oracle_rel_err": worst_oracle,
            "rho_identity": rho_eye,
        },
    )


def check_no_universal_target(seed: int) -> CheckResult:
    """The adversarial geometry drives the fixed-target regret toward the
    dimension, monotonically in delta."""
    rng = np.random.default_rng(seed)
    d = 4
    targets = [SPDOperator(np.eye(d)), SPDOperator(_random_spd(rng, d))]
    deltas = [0.1, 0.01, 0.001]
    min_margin = np.inf
    worst_formula = 0.0
    monotone = True
    for m in targets:
        regrets = []
        for delta in deltas:
            hdelta = adversarial_geometry(m, delta)
            _, regret = fixed_target_regret(m, hdelta, 1.0)
            regrets.append(regret)
            min_margin = min(min_margin, regret - d * (1 - 2 * delta * d))
            worst_formula = max(worst_formula, abs(regret - d / (1 + (d - 1) * delta)))
        monotone = monotone and regrets[0] < regrets[1] < regrets[2] < d
    ok = min_margin >= 0 and monotone and worst_formula <= 1e-6
    return CheckResult(
        "no_universal_target",
        ok,
        {"min_margin": min_margin, "monotone": monotone, "max_formula_err": worst_formula},
    )


def check_coupling(seed: int) -> CheckResult:
    """All couplings share the marginal exactly while the empirical
    conditional-mean slope recovers the coupling strength."""
    rng = np.random.default_rng(seed)
    sigma = SPDOperator(_random_spd(rng, 2, 0.5))
    worst_slope = 0.0
    shared = True
    predictors = []
    for t in (-0.9, 0.0, 0.5, 0.9):
        coupling = gaussian_coupling(sigma, t)
        shared = shared and np.array_equal(coupling.sigma.entries, sigma.entries)
        predictors.append(coupling.predictor)
        z_a, z_b = coupling_sample(coupling, 100_000, rng)
        denom = float(np.sum(z_a * z_a))
        slope = float(np.sum(z_a * z_b)) / denom
        worst_slope = max(worst_slope, abs(slope - t))
    distinct = all(
        not np.allclose(predictors[i], predictors[j])
        for i in range(len(predictors))
        for j in range(i + 1, len(predictors))
    )
    ok = shared and distinct and worst_slope <= TOLERANCES["coupling_slope"]
    return CheckResult(
        "coupling_nonidentifiability",
        ok,
        {"max_slope_err": worst_slope, "marginals_shared": shared, "predictors_distinct": distinct},
    )


def check_gibbs_lift(seed: int) -> CheckResult:
    """Empirical covariances and mean energy of the phase-space Gibbs law
    match their targets within three Monte Carlo standard errors.

    Covariance deviations are scored entrywise against the exact Gaussian
    fourth-moment standard errors SE(C_ij) = sqrt((C_ii C_jj + C_ij^2) / n).
    """
    rng = np.random.default_rng(seed)
    n = 100_000
    worst_sigma = 0.0
    max_norm_errors = []
    cases = [
        (SPDOperator(np.diag([4.0, 1.0])), 2.0),
        (SPDOperator(_random_spd(rng, 3)), float(rng.uniform(1.0, 3.0))),
    ]
    for h, c in cases:
        d = h.dim
        scale = c / d
        cov_q_target = scale * spd_inverse(h).entries
        cov_p_target = scale * np.eye(d)
        q_err, p_err, _ = gibbs_lift_check(GeometryBudget(h, c), n, rng)
        max_norm_errors.append((q_err, p_err))

        eig = np.linalg.eigh(h.entries)
        q = rng.standard_normal((n, d)) * np.sqrt(scale / eig.eigenvalues)
        q = q @ eig.eigenvectors.T
        p = np.sqrt(scale) * rng.standard_normal((n, d))
        for samples, target in ((q, cov_q_target), (p, cov_p_target)):
            centered = samples - samples.mean(axis=0)
            emp = centered.T @ centered / n
            se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / n)
            worst_sigma = max(worst_sigma, float((np.abs(emp - target) / se).max()))
        energy = 0.5 * np.einsum("ni,ij,nj->n", q, h.entries, q) + 0.5 * np.sum(p * p, axis=1)
        se_e = float(energy.std() / np.sqrt(n))
        worst_sigma = max(worst_sigma, abs(float(energy.mean()) - c) / se_e)
    ok = worst_sigma <= TOLERANCES["gibbs_sigmas"]
    return CheckResult(
        "gibbs_lift",
        ok,
        {"worst_deviation_sigmas": worst_sigma, "max_norm_errors": max_norm_errors},
    )


def check_joint_spectral(seed: int) -> CheckResult:
    """No rejection-sampled covariance satisfying the three joint
    constraints violates the eigenvalue or conditioning bounds."""
    rng = np.random.default_rng(seed)
    k, c, r0, tau = 4, 4.0, 2.0, -1.0
    accepted = violations = 0
    attempts = 0
    while accepted < 1000 and attempts < 500_000:
        attempts += 1
        w = rng.standard_normal((k + 2, k))
        raw = w.T @ w
        raw *= c / np.trace(raw)
        ev = np.linalg.eigvalsh(raw)
        if ev.min() <= 0:
            continue
        pr = np.sum(ev) ** 2 / np.sum(ev**2)
        if pr < r0 or float(np.mean(np.log(ev))) < tau:
            continue
        accepted += 1
        ok, *_ = check_joint_spectral_bounds(SymMatrix(raw), c=c, r0=r0, tau=tau)
        violations += int(not ok)
    return CheckResult(
        "joint_spectral_bounds",
        accepted == 1000 and violations == 0,
        {"accepted": accepted, "violations": violations},
    )


def check_maxent(seed: int) -> CheckResult:
    """The entropy gap to the oracle Gaussian is nonnegative on feasible
    alternatives and zero at the oracle."""
    rng = np.random.default_rng(seed)
    h = SPDOperator(_random_spd(rng, 4))
    b = GeometryBudget(h, 3.0)
    gap_at_star = maxent_gaussian_entropy_gap(b, minimax_covariance(b))
    min_gap = np.inf
    for _ in range(1000):
        min_gap = min(min_gap, maxent_gaussian_entropy_gap(b, sample_feasible_covariance(b, rng)))
    ok = min_gap >= TOLERANCES["maxent_floor"] and abs(gap_at_star) <= 1e-10
    return CheckResult("maxent_gap", ok, {"min_gap": min_gap, "gap_at_oracle": gap_at_star})


def check_whiten_and_roundtrip(seed: int) -> CheckResult:
    """Whitening the oracle covariance yields a multiple of the identity,
    and the geometry-from-covariance map round-trips the SPD cone."""
    rng = np.random.default_rng(seed)
    worst_white = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 9))
        h = SPDOperator(_random_spd(rng, d))
        hinv = spd_inverse(h).entries
        for alpha in (0.1, 1.0, 10.0):
            w = whiten(SymMatrix(alpha * hinv), h)
            worst_white = max(worst_white, float(np.abs(w.entries - alpha * np.eye(d)).max()))
    worst_round = 0.0
    for _ in range(50):
        d = int(rng.integers(2, 17))
        sigma = SPDOperator(_random_spd(rng, d, 0.5))
        c = float(rng.uniform(0.5, 3.0))
        back = minimax_covariance(GeometryBudget(h_from_sigma(sigma, c), c))
        worst_round = max(
            worst_round,
            float(np.abs(back.entries - sigma.entries).max() / np.abs(sigma.entries).max()),
        )
    ok = worst_white <= TOLERANCES["whiten_max"] and worst_round <= TOLERANCES["roundtrip_rel"]
    return CheckResult(
        "whiten_and_roundtrip",
        ok,
        {"max_whiten_err": worst_white, "max_roundtrip_rel": worst_round},
    )


def check_symplectic_factorization(seed: int) -> CheckResult:
    """Kick-drift-scaling factorization reconstructs composed leapfrog
    linearizations with symmetric shear blocks."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        d0 = int(rng.integers(1, 4))
        eye = np.eye(d0)
        zero = np.zeros((d0, d0))
        a = np.eye(2 * d0)
        for _ in range(5):
            kmat = _random_spd(rng, d0, 0.3)
            dt = float(rng.uniform(0.05, 0.3))
            kick = np.block([[eye, zero], [-(dt / 2) * kmat, eye]])
            drift = np.block([[eye, dt * eye], [zero, eye]])
            a = kick @ drift @ kick @ a
        B, d_block, C = symplectic_factorize(a)
        recon = (
            np.block([[eye, B], [zero, eye]])
            @ np.block([[np.linalg.inv(d_block).T, zero], [zero, d_block]])
            @ np.block([[eye, zero], [C, eye]])
        )
        worst = max(
            worst,
            float(np.abs(recon - a).max()),
            float(np.abs(B - B.T).max()),
            float(np.abs(C - C.T).max()),
        )
    return CheckResult(
        "symplectic_factorization",
        worst <= TOLERANCES["factorization_max"],
        {"max_residual": worst},
    )


# --- objective witnesses ---------------------------------------------------------


def check_anti_collapse_witnesses(seed: int) -> CheckResult:
    """Each regularizer's role: scale budgets permit rank collapse, volume
    floors catch it, volume alone permits spikes, PR alone ignores scale."""
    rng = np.random.default_rng(seed)
    details = {}

    w = rng.standard_normal((6, 4))
    cov = w.T @ w
    pr_ref = np.trace(cov) ** 2 / np.trace(cov @ cov)
    details["pr_scale_invariance"] = max(
        abs(np.trace((a * cov)) ** 2 / np.trace((a * cov) @ (a * cov)) - pr_ref) / pr_ref
        for a in (0.01, 1.0, 100.0)
    )

    k, tau, eps = 4, 0.0, 1e-4
    spike = np.array([np.exp(k * tau) * eps ** (-(k - 1))] + [eps] * (k - 1))
    details["spike_lvol_err"] = abs(float(np.mean(np.log(spike))) - tau)
    details["spike_pr"] = float(np.sum(spike) ** 2 / np.sum(spike**2))

    reg = RegularizerSpec(tau=-1.0, eps=1e-4, proj_dim=4)
    from .numlin import orthonormalize_columns

    proj = orthonormalize_columns(rng.standard_normal((4, 4)), rng)
    flat = np.tile(rng.standard_normal(4), (16, 1))
    loss_flat, diag_flat, _ = projected_logdet_floor(flat, reg, proj)
    details["collapse_floor_loss"] = loss_flat

    kk, tau2, m = 4, -1.0, 6.0
    bound = np.exp(kk * tau2) * (kk - 1) ** (kk - 1) / m ** (kk - 1)
    worst_margin = np.inf
    accepted = 0
    while accepted < 1000:
        w = rng.standard_normal((kk + 3, kk))
        cc = w.T @ w / (kk + 3)
        ev = np.linalg.eigvalsh(cc)
        if ev.min() <= 0 or np.sum(np.log(ev)) < kk * tau2 or np.sum(ev) > m:
            continue
        accepted += 1
        worst_margin = min(worst_margin, float(ev.min()) - bound)
    details["lmin_bound_margin"] = worst_margin

    ok = (
        details["pr_scale_invariance"] <= 1e-12
        and details["spike_lvol_err"] <= 1e-12
        and details["spike_pr"] < 1.1
        and loss_flat > 0
        and worst_margin >= -1e-12
    )
    return CheckResult("anti_collapse_witnesses", ok, details)


def check_sigreg_calibration(seed: int) -> CheckResult:
    """The sliced-CF statistic is small and stable on the standard normal
    null and grows by an order of magnitude under a mean shift."""
    spec = SIGRegSpec(n_slices=64)
    slices = SliceCache(8, 64, 16, np.random.default_rng(seed)).get(0)
    rng = np.random.default_rng(seed + 1)
    nulls = []
    for n in (10_000, 100_000):
        z = rng.standard_normal((n, 8))
        nulls.append(sigreg_statistic(z, spec, slices)[0])
    shifted = z.copy()
    shifted[:, 0] += 3.0
    loud = sigreg_statistic(shifted, spec, slices)[0]
    ok = max(nulls) <= 5.0 and loud >= 10.0 * nulls[-1]
    return CheckResult(
        "sigreg_calibration", ok, {"nulls": nulls, "shifted": loud, "ratio": loud / nulls[-1]}
    )


# --- training checks ----------------------------------------------------------------


def _default_hjepa_config(seed: int, ckpt_dir: str, epochs: int = 30, **overrides):
    cfg = {"seed": seed, "hjepa": {}, "train": {"epochs": epochs, "ckpt_dir": ckpt_dir}}
    for block, kv in overrides.items():
        cfg.setdefault(block, {}).update(kv)
    return cfg


def _readout_knn(result, cfg_raw, readout="q", k=20):
    cfg = validate_config(cfg_raw)
    spec = synthetic_spec_from_config(cfg)
    data_seed = np.random.SeedSequence(cfg["seed"]).spawn(7)[0]
    va, _, labels = generate_views(spec, np.random.default_rng(data_seed))
    state, _ = encoder_forward(result["encoder"], va)
    feats = {"q": state.q, "p": state.p, "qp": np.concatenate([state.q, state.p], axis=1)}[readout]
    cut = (3 * len(labels)) // 4
    return knn_accuracy(feats[:cut], labels[:cut], feats[cut:], labels[cut:], k)


def check_anti_collapse_training(seed: int, workdir: str | None = None) -> CheckResult:
    """The default predictive run keeps the projected log-volume above its
    floor after warmup, while the ablation (no anti-collapse weights, live
    targets) collapses within the step budget."""
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        cfg = _default_hjepa_config(seed, os.path.join(tmp, "default"))
        result = train(cfg, out_dir=os.path.join(tmp, "default"))
        tau = validate_config(cfg)["regularizer"]["q_logdet_floor"]
        warmup = max(
            validate_config(cfg)["train"]["warmup_epochs"],
            validate_config(cfg)["hjepa"]["residual_scale_warmup_epochs"],
        )
        min_lvol = np.inf
        for line in open(result["metrics_path"]):
            rec = json.loads(line)
            if "lvol_q" in rec and rec["epoch"] >= warmup:
                min_lvol = min(min_lvol, rec["lvol_q"], rec["lvol_p"])

        ablated = _default_hjepa_config(
            seed,
            os.path.join(tmp, "ablated"),
            epochs=14,
            loss={"detach_target": False},
            train={
                "lambda_budget": 0.0,
                "lambda_var": 0.0,
                "lambda_logdet": 0.0,
                "lambda_mean": 0.0,
            },
        )
        result_a = train(ablated, out_dir=os.path.join(tmp, "ablated"))
        drop_step = None
        for line in open(result_a["metrics_path"]):
            rec = json.loads(line)
            if "lvol_q" not in rec or rec["step"] >= TOLERANCES["collapse_steps"]:
                continue
            if min(rec["lvol_q"], rec["lvol_p"]) < tau - TOLERANCES["collapse_drop"]:
                drop_step = rec["step"]
                break
    ok = min_lvol >= tau - TOLERANCES["lvol_margin"] and drop_step is not None
    return CheckResult(
        "anti_collapse_training",
        ok,
        {"min_lvol_after_warmup": min_lvol, "floor": tau, "collapse_step": drop_step},
    )


def check_headline_gap(seed: int, workdir: str | None = None) -> CheckResult:
    """The phase-space predictive run beats the mean-of-views baseline on
    the content-readout neighborhood accuracy by the frozen margin."""
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        cfg_h = _default_hjepa_config(seed, os.path.join(tmp, "h"))
        res_h = train(cfg_h, out_dir=os.path.join(tmp, "h"))
        knn_h = _readout_knn(res_h, cfg_h)
        cfg_b = {"seed": seed, "train": {"epochs": 30, "ckpt_dir": os.path.join(tmp, "b")}}
        res_b = train(cfg_b, out_dir=os.path.join(tmp, "b"))
        knn_b = _readout_knn(res_b, cfg_b)
    gap = 100.0 * (knn_h - knn_b)
    return CheckResult(
        "headline_gap",
        gap >= TOLERANCES["headline_gap_points"],
        {"knn_hjepa_q": knn_h, "knn_baseline_q": knn_b, "gap_points": gap},
    )


def check_expressivity(seed: int) -> CheckResult:
    """A separable predictor trained on noise-free quadratic transport gets
    within an order of magnitude of the pure-integrator error.

    The predictor is trained directly on the phase-space transport pairs;
    the claim concerns the predictor class, so the encoder is the identity
    here (joint encoder training adds an unrelated optimization floor).
    """
    rng = np.random.default_rng(seed)
    d0, n, dt, steps = 4, 2048, 0.1, 2
    h_true = trainer.default_stiffness(d0, 4.0)
    centers = rng.standard_normal((10, d0))
    labels = rng.integers(0, 10, size=n)
    q0 = centers[labels]
    p0 = rng.standard_normal((n, d0))
    qt, pt = exact_quadratic_flow(h_true, dt * steps, q0, p0)

    net = init_potential(d0, np.random.default_rng(seed + 1), hidden_dim=64, depth=2, alpha=2.0, scale=2.0)
    params = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        params[f"pot.w{i}"] = w
        params[f"pot.b{i}"] = b
    opt = OptimizerState(weight_decay=0.0)
    spec = RolloutSpec("leapfrog", dt, steps, 1)
    match = MatchSpec("qp", detach_target=True)
    epochs, batch = 150, 256
    sched = ScheduleSpec(
        warmup_epochs=2, total_epochs=epochs, min_lr_ratio=0.05,
        residual_scale_target=2.0, residual_warmup_epochs=0.0,
    )
    shuffle = np.random.default_rng(seed + 2)
    for epoch in range(epochs):
        order = shuffle.permutation(n)
        for b in range(n // batch):
            idx = order[b * batch : (b + 1) * batch]
            res = prediction_loss(
                net, PhaseState(q0[idx], p0[idx]), PhaseState(qt[idx], pt[idx]), spec, match
            )
            grads = {}
            for i in range(len(net.weights)):
                grads[f"pot.w{i}"] = res.net_grads.d_weights[i]
                grads[f"pot.b{i}"] = res.net_grads.d_biases[i]
            lr = lr_at(sched, 5e-3, epoch + (b + 1) / (n // batch))
            _grouped_adamw(opt, params, grads, {name: lr for name in params})

    pred = rollout(net, PhaseState(q0, p0), spec)
    rmse_model = float(np.sqrt(np.mean((pred.q - qt) ** 2)))
    hmat = h_true.entries
    q, p = q0, p0
    g = q @ hmat.T
    for _ in range(steps):
        ph = p - 0.5 * dt * g
        q = q + dt * ph
        g = q @ hmat.T
        p = ph - 0.5 * dt * g
    rmse_int = float(np.sqrt(np.mean((q - qt) ** 2)))
    ratio = rmse_model / rmse_int
    return CheckResult(
        "expressivity",
        ratio <= TOLERANCES["expressivity_ratio_max"],
        {"trained_rmse": rmse_model, "integrator_rmse": rmse_int, "ratio": ratio},
    )


def check_slice_demo(seed: int) -> CheckResult:
    """Coarse forward-Euler transport shows a much larger directional
    discrepancy than coarse leapfrog at the same step size."""
    profiles = harmonic_slice_demo(0.3, 3.0, 4000, np.random.default_rng(seed))
    ratio = profiles["euler"].mean_g / profiles["leapfrog"].mean_g
    return CheckResult(
        "slice_demo",
        ratio >= TOLERANCES["slice_ratio_min"],
        {
            "euler_mean_g": profiles["euler"].mean_g,
            "leapfrog_mean_g": profiles["leapfrog"].mean_g,
            "ratio": ratio,
        },
    )


def check_determinism(seed: int, workdir: str | None = None) -> CheckResult:
    """Identical config and seed give byte-identical training outputs, in
    both modes."""

    def tree_digest(root):
        digests = {}
        for dirpath, _, files in os.walk(root):
            for f in sorted(files):
                path = os.path.join(dirpath, f)
                rel = os.path.relpath(path, root)
                digests[rel] = hashlib.sha256(open(path, "rb").read()).hexdigest()
        return digests

    identical = True
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for mode_cfg in (
            {"seed": seed, "hjepa": {}},
            {"seed": seed},
        ):
            cfg = dict(mode_cfg)
            cfg["data"] = {"n_samples": 512, "batch_size": 128}
            cfg["train"] = {"epochs": 2, "warmup_epochs": 1, "ckpt_dir": "unused"}
            a = os.path.join(tmp, "a")
            bdir = os.path.join(tmp, "b")
            train(copy.deepcopy(cfg), out_dir=a)
            train(copy.deepcopy(cfg), out_dir=bdir)
            da, db = tree_digest(a), tree_digest(bdir)
            identical = identical and da == db
            for sub in (a, bdir):
                for dirpath, _, files in os.walk(sub, topdown=False):
                    for f in files:
                        os.remove(os.path.join(dirpath, f))
    return CheckResult("determinism", identical, {"byte_identical": identical})


# --- registry ----------------------------------------------------------------------

CHECKS = {
    "symplecticity": check_symplecticity,
    "reversibility": check_reversibility,
    "reciprocal_singular_values": check_reciprocal_singular_values,
    "convergence_order": check_convergence_order,
    "shadow_energy": check_shadow_energy,
    "gradients": check_gradients,
    "minimax": check_minimax,
    "price_of_isotropy": check_price_of_isotropy,
    "no_universal_target": check_no_universal_target,
    "coupling_nonidentifiability": check_coupling,
    "gibbs_lift": check_gibbs_lift,
    "joint_spectral_bounds": check_joint_spectral,
    "maxent_gap": check_maxent,
    "whiten_and_roundtrip": check_whiten_and_roundtrip,
    "symplectic_factorization": check_symplectic_factorization,
    "anti_collapse_witnesses": check_anti_collapse_witnesses,
    "sigreg_calibration": check_sigreg_calibration,
    "anti_collapse_training": check_anti_collapse_training,
    "headline_gap": check_headline_gap,
    "expressivity": check_expressivity,
    "slice_demo": check_slice_demo,
    "determinism": check_determinism,
}


def run_checks(names=None, seed: int = 42) -> list:
    """Run the named checks (all by default) and return their results."""
    selected = list(CHECKS) if not names else list(names)
    unknown = [n for n in selected if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}")
    results = []
    for name in selected:
        start = time.time()
        result = CHECKS[name](seed)
        result.passed = bool(result.passed)
        result.seconds = time.time() - start
        results.append(result)
    return results
