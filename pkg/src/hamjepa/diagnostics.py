"""Frozen-feature geometry and downstream metrics.

Spectrum summaries (effective rank, participation ratio), random-pair
cosine and norm statistics, cosine k-nearest-neighbor accuracy, a
closed-form ridge linear probe, and the directional sliced discrepancy
between two phase-space populations.  CSV emitters produce plot-ready
tables.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .numlin import SymMatrix, cholesky_factor, sym_eig


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    effective_rank: float
    participation_ratio: float
    eigmax_frac: float


@dataclass(frozen=True)
class DiscrepancyProfile:
    angles: np.ndarray
    g_values: np.ndarray
    mean_g: float
    max_g: float


def spectrum_report(x: np.ndarray) -> SpectrumReport:
    """Eigen-spectrum summaries of the mean-centered covariance.

    Effective rank is the exponential of the Shannon entropy of the
    normalized spectrum; the participation ratio is (tr)^2 / tr(Sigma^2).
    Both are scale invariant.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigs = np.maximum(sym_eig(SymMatrix(cov)).eigenvalues, 0.0)
    total = float(eigs.sum())
    if total <= 0:
        return SpectrumReport(eigs, 1.0, 1.0, 1.0)
    probs = eigs / total
    nz = probs[probs > 0]
    eff_rank = float(np.exp(-np.sum(nz * np.log(nz))))
    pr = total**2 / float(np.sum(eigs**2))
    return SpectrumReport(eigs, eff_rank, pr, float(eigs[0] / total))


@dataclass(frozen=True)
class CosineNormStats:
    cos_mean: float
    cos_std: float
    norm_mean: float
    norm_std: float
    excluded_rows: int


def cosine_norm_stats(x: np.ndarray, n_pairs: int, rng: np.random.Generator) -> CosineNormStats:
    """Random-pair cosine similarities of l2-normalized rows (no centering)
    and raw row-norm statistics.  Zero-norm rows are excluded and counted."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.sum(x * x, axis=1))
    keep = norms > 0
    excluded = int((~keep).sum())
    xk = x[keep]
    nk = norms[keep]
    if xk.shape[0] < 2:
        raise ValueError("need at least 2 nonzero rows")
    unit = xk / nk[:, None]
    i = rng.integers(0, xk.shape[0], size=n_pairs)
    j = rng.integers(0, xk.shape[0] - 1, size=n_pairs)
    j = np.where(j >= i, j + 1, j)  # distinct pair indices
    cos = np.sum(unit[i] * unit[j], axis=1)
    return CosineNormStats(
        float(cos.mean()), float(cos.std()), float(nk.mean()), float(nk.std()), excluded
    )


def knn_accuracy(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    k: int = 20,
) -> float:
    """Cosine k-nearest-neighbor majority vote; ties break to the lowest
    class id."""
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    if train_x.shape[0] == 0 or test_x.shape[0] == 0:
        raise ValueError("empty feature sets")
    if k > train_x.shape[0]:
        raise ValueError(f"k={k} exceeds the train size {train_x.shape[0]}")

    def normalize(a):
        n = np.sqrt(np.sum(a * a, axis=1, keepdims=True))
        return np.where(n > 0, a / np.where(n > 0, n, 1.0), 0.0)

    tr = normalize(train_x)
    te = normalize(test_x)
    sims = te @ tr.T
    n_classes = int(max(train_y.max(), test_y.max())) + 1
    correct = 0
    for row in range(te.shape[0]):
        order = np.argsort(-sims[row], kind="stable")[:k]
        votes = np.bincount(train_y[order], minlength=n_classes)
        pred = int(np.argmax(votes))  # argmax takes the lowest id on ties
        correct += int(pred == test_y[row])
    return correct / te.shape[0]


def linear_probe(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    ridge: float = 1e-3,
) -> float:
    """One-vs-rest ridge regression on +-1 targets, solved in closed form
    through the normal equations (Cholesky), argmax over class scores."""
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    ones = np.ones((train_x.shape[0], 1))
    a = np.concatenate([train_x, ones], axis=1)
    n_classes = int(max(train_y.max(), test_y.max())) + 1
    targets = -np.ones((a.shape[0], n_classes))
    targets[np.arange(a.shape[0]), train_y] = 1.0

    gram = a.T @ a + ridge * np.eye(a.shape[1])
    L = cholesky_factor(gram)
    rhs = a.T @ targets
    w = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    scores = np.concatenate([test_x, np.ones((test_x.shape[0], 1))], axis=1) @ w
    preds = np.argmax(scores, axis=1)
    return float(np.mean(preds == test_y))


def directional_discrepancy(
    z_model: np.ndarray, z_ref: np.ndarray, n_angles: int = 64
) -> DiscrepancyProfile:
    """Sliced one-dimensional mismatch between two planar populations.

    For each angle theta on [0, pi) the projections onto u(theta) are
    compared with the exact empirical 1-d transport distance (mean absolute
    difference of sorted samples).  Population sizes are equalized by
    truncation.
    """
    z_model = np.asarray(z_model, dtype=np.float64)
    z_ref = np.asarray(z_ref, dtype=np.float64)
    if z_model.shape[1] != 2 or z_ref.shape[1] != 2:
        raise ValueError("directional discrepancy expects planar samples")
    n = min(z_model.shape[0], z_ref.shape[0])
    zm, zr = z_model[:n], z_ref[:n]
    angles = np.pi * np.arange(n_angles) / n_angles
    g = np.empty(n_angles)
    for i, theta in enumerate(angles):
        u = np.array([np.cos(theta), np.sin(theta)])
        pm = np.sort(zm @ u)
        pr = np.sort(zr @ u)
        g[i] = float(np.mean(np.abs(pm - pr)))
    return DiscrepancyProfile(angles, g, float(g.mean()), float(g.max()))


def harmonic_slice_demo(
    dt_coarse: float,
    horizon: float,
    n_samples: int,
    rng: np.random.Generator,
    n_angles: int = 64,
) -> dict:
    """Directional discrepancy of coarse rollouts on a planar oscillator.

    A Gaussian blob of phase-space states is transported to the horizon
    three ways: a fine-step leapfrog reference, a coarse forward-Euler
    rollout (the non-symplectic proxy), and a coarse leapfrog rollout.
    Returns the two discrepancy profiles against the reference.
    """
    if dt_coarse <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    steps = max(1, round(horizon / dt_coarse))
    center = np.array([1.2, 0.0])
    z0 = center + 0.15 * rng.standard_normal((n_samples, 2))
    q0, p0 = z0[:, :1], z0[:, 1:]

    def leapfrog(q, p, dt, n):
        g = q
        for _ in range(n):
            ph = p - 0.5 * dt * g
            q = q + dt * ph
            g = q
            p = ph - 0.5 * dt * g
        return q, p

    refine = 100
    q_ref, p_ref = leapfrog(q0, p0, dt_coarse / refine, steps * refine)
    q_lf, p_lf = leapfrog(q0, p0, dt_coarse, steps)
    q_eu, p_eu = q0, p0
    for _ in range(steps):
        q_eu, p_eu = q_eu + dt_coarse * p_eu, p_eu - dt_coarse * q_eu

    z_ref = np.concatenate([q_ref, p_ref], axis=1)
    return {
        "euler": directional_discrepancy(np.concatenate([q_eu, p_eu], axis=1), z_ref, n_angles),
        "leapfrog": directional_discrepancy(np.concatenate([q_lf, p_lf], axis=1), z_ref, n_angles),
    }


# --- CSV emitters ----------------------------------------------------------------


def write_spectrum_csv(report: SpectrumReport, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "eigenvalue"])
        for i, val in enumerate(report.eigenvalues, start=1):
            writer.writerow([i, repr(float(val))])


def write_knn_sweep_csv(rows: list, path: str):
    """rows: iterable of (k, accuracy)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "accuracy"])
        for k, acc in rows:
            writer.writerow([k, repr(float(acc))])


def write_discrepancy_csv(profiles: dict, path: str):
    """profiles: mapping column-name -> DiscrepancyProfile on a shared grid."""
    names = list(profiles)
    grids = [profiles[n].angles for n in names]
    for g in grids[1:]:
        if not np.array_equal(g, grids[0]):
            raise ValueError("profiles must share the angle grid")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta"] + [f"g_{n}" for n in names])
        for i, theta in enumerate(grids[0]):
            writer.writerow(
                [repr(float(theta))] + [repr(float(profiles[n].g_values[i])) for n in names]
            )
