"""Stability checks, error metrics, perturbation-bound validation and timing."""

import csv
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import linalg, riccati
from .errors import GridMismatch, NotAdmissible

log = logging.getLogger(__name__)

STABLE = "stable"
UNSTABLE = "unstable"


@dataclass
class StabilityVerdict:
    verdict: str
    spectrum: np.ndarray
    disagreement: bool = False

    @property
    def stable(self):
        return self.verdict == STABLE


def classify_stability(a_cl):
    """Stable iff max Re(lambda) < -1e-9 and the Lyapunov solution is SPD.

    When the two tests disagree the verdict is Unstable and
    ``disagreement`` is set.
    """
    spectral, lyap, spectrum = linalg.stability_tests(a_cl)
    if spectral != lyap:
        log.warning("spectral and Lyapunov stability tests disagree (max Re %.3e)",
                    float(np.max(spectrum.real)))
    verdict = STABLE if spectral and lyap else UNSTABLE
    return StabilityVerdict(verdict=verdict, spectrum=spectrum, disagreement=spectral != lyap)


def closed_loop_matrix(sys, p, t=0.0):
    B, R = sys.B_at(t), sys.R_at(t)
    return sys.A_at(t) - B @ linalg.solve_linear(R, B.T) @ p


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    """What the metric formulas need from one trajectory."""

    times: np.ndarray
    p_values: np.ndarray  # (N+1, n, n)
    states: np.ndarray  # (N+1, n)
    cost: float


@dataclass
class MetricsReport:
    e_P: float
    e_P_rel: float
    e_x: float
    e_x_rel: float
    e_J: float
    e_J_rel: float
    K: int = 0

    def as_dict(self):
        return asdict(self)


def _l2_time(times, sq_values):
    h = np.diff(times)
    return math.sqrt(float(np.sum(0.5 * h * (sq_values[1:] + sq_values[:-1]))))


def error_metrics(truth, pred):
    """Average absolute and relative errors of P(t), x(t) and J over K items.

    Time integrals use the composite trapezoid rule; relative errors are
    formed per item before averaging.
    """
    if len(truth) != len(pred) or not truth:
        raise GridMismatch("truth and prediction lists must be non-empty and equal length")
    acc = np.zeros(6)
    for tr, pr in zip(truth, pred):
        if len(tr.times) != len(pr.times) or not np.allclose(tr.times, pr.times, rtol=0, atol=1e-12):
            raise GridMismatch("truth and prediction grids differ")
        t = tr.times
        dp = _l2_time(t, np.sum((tr.p_values - pr.p_values) ** 2, axis=(1, 2)))
        pn = _l2_time(t, np.sum(tr.p_values ** 2, axis=(1, 2)))
        dx = _l2_time(t, np.sum((tr.states - pr.states) ** 2, axis=1))
        xn = _l2_time(t, np.sum(tr.states ** 2, axis=1))
        dj = abs(tr.cost - pr.cost)
        acc += [dp, dp / pn if pn else 0.0, dx, dx / xn if xn else 0.0,
                dj, dj / abs(tr.cost) if tr.cost else 0.0]
    acc /= len(truth)
    return MetricsReport(*[float(v) for v in acc], K=len(truth))


# ---------------------------------------------------------------------------
# Perturbation bounds
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    epsilon: float = 0.0
    gamma_min: float = 0.0
    gamma_max: float = 0.0
    M0: float = 0.0
    c1: float = 0.0
    C3: float = 0.0
    C4: float = 0.0
    M: float = 0.0
    mu0: float = 0.0
    C0: float = 0.0
    eps_star: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    measured_traj_error: Optional[float] = None
    measured_cost_gap: Optional[float] = None
    measured_decay_ok: Optional[bool] = None
    learned_stable: Optional[bool] = None
    predicted_traj_error: Optional[float] = None
    predicted_cost_gap: Optional[float] = None
    satisfied_traj: Optional[bool] = None
    satisfied_cost: Optional[bool] = None
    satisfied_stability: Optional[bool] = None
    notes: list = field(default_factory=list)

    def as_row(self):
        row = asdict(self)
        row["notes"] = "; ".join(self.notes)
        return row


def _sup_norms(sys, times):
    """Per-node ``||B||_F^2 ||R^-1||_F``."""
    out = np.empty(len(times))
    for k, t in enumerate(times):
        B = sys.B_at(t)
        rinv = linalg.inv(sys.R_at(t))
        out[k] = linalg.frob_norm(B) ** 2 * linalg.frob_norm(rinv)
    return out


def transition_norms(sys, gains):
    """``||Phi(t_k, 0)||_2`` of the closed loop from ``n`` basis simulations."""
    cols = [riccati.simulate_closed_loop(sys, gains, e).states for e in np.eye(sys.n)]
    phi = np.stack(cols, axis=2)  # (N+1, n, n), column j = response to e_j
    return np.array([linalg.op_norm2(p) for p in phi])


def fit_exponential_envelope(times, norms, rate_cap=None):
    """Fit ``norms <= M exp(-mu t)``: mu from log-linear regression, M from the max."""
    mu = riccati.fit_decay_rate(times, norms)
    if rate_cap is not None:
        mu = min(mu, rate_cap)
    big_m = float(np.max(norms * np.exp(mu * times)))
    return big_m, mu


def theorem_constants(sys, p_star, x0, probes=20, rng=None):
    """Constants of the trajectory, cost and stability estimates.

    ``p_star`` is the exact Riccati trajectory.  ``M0`` is the largest
    ``sup_t ||x*(t)|| / ||x0||`` over ``x0`` and ``probes`` random unit
    initial states.  ``(M, mu0)`` come from a decay fit of the nominal
    transition operator.  ``C0`` is ``sup ||B||_F^2 ||R^-1||_F``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    times = p_star.times
    report = BoundReport()
    gam = np.array([linalg.symmetric_eig(p)[0][[0, -1]] for p in p_star.values])
    report.gamma_min = float(gam[:, 0].min())
    report.gamma_max = float(gam[:, 1].max())
    if report.gamma_min <= 0.0:
        raise NotAdmissible(f"P* is not positive definite (gamma_min={report.gamma_min:.3e})")
    gains = riccati.feedback_gain(sys, p_star)
    x0 = np.asarray(x0, dtype=float)
    starts = [x0 / np.linalg.norm(x0)] if np.linalg.norm(x0) > 0 else []
    for _ in range(probes):
        v = rng.standard_normal(sys.n)
        starts.append(v / np.linalg.norm(v))
    report.M0 = max(float(np.max(np.linalg.norm(
        riccati.simulate_closed_loop(sys, gains, s).states, axis=1))) for s in starts)
    bnorm = _sup_norms(sys, times)
    pnorm = np.array([linalg.frob_norm(p) for p in p_star.values])
    report.c1 = 2.0 * float(np.max(bnorm * pnorm))
    report.C3 = report.M0 ** 2 * float(np.max(bnorm))
    report.C4 = report.c1 / report.gamma_min
    report.C0 = float(np.max(bnorm))
    x0n = float(np.linalg.norm(x0))
    report.alpha = report.c1 * report.M0 * x0n / math.sqrt(report.gamma_min)
    report.beta = report.c1 / report.gamma_min

    norms = transition_norms(sys, gains)
    cap = None
    if sys.time_invariant:
        abscissa = float(np.max(linalg.eigenvalues(sys.A - sys.B @ gains[0]).real))
        cap = 0.95 * -abscissa if abscissa < 0 else 0.0
    report.M, report.mu0 = fit_exponential_envelope(times, norms, cap)
    if report.mu0 <= 0.0:
        report.eps_star = 0.0
        report.notes.append("nominal closed loop shows no exponential decay")
    elif report.C0 == 0.0:
        report.eps_star = math.inf
    else:
        report.eps_star = report.mu0 / (2.0 * report.M * report.C0)
    return report


def _exp(x):
    return math.exp(x) if x < 700.0 else math.inf


def _expm1(x):
    return math.expm1(x) if x < 700.0 else math.inf


def validate_bounds(sys, p_star, p_tilde, x0, constants=None, probes=20, rng=None):
    """Compare measured trajectory/cost deviations with the predicted bounds.

    ``p_tilde`` is any approximation on the same grid.  When the error level
    is below ``eps_star`` the decay envelope ``M exp(-mu t) ||x0||`` with
    ``mu = mu0 - M C0 eps`` is checked at every grid time.
    """
    if len(p_star.times) != len(p_tilde.times):
        raise GridMismatch("P* and the approximation use different grids")
    report = constants or theorem_constants(sys, p_star, x0, probes=probes, rng=rng)
    x0 = np.asarray(x0, dtype=float)
    x0n = float(np.linalg.norm(x0))
    T = sys.horizon
    err = p_tilde.values - p_star.values
    eps = float(max(linalg.frob_norm(e) for e in err))
    report.epsilon = eps
    nominal = riccati.simulate_closed_loop(sys, riccati.feedback_gain(sys, p_star), x0)
    learned = riccati.simulate_closed_loop(sys, riccati.feedback_gain(sys, p_tilde), x0)
    report.measured_traj_error = float(np.max(np.linalg.norm(learned.states - nominal.states, axis=1)))
    report.measured_cost_gap = float(learned.cost - nominal.cost)
    report.predicted_traj_error = report.M0 * x0n * _expm1(
        report.c1 * eps * T / (2.0 * report.gamma_min))
    report.predicted_cost_gap = report.C3 * eps ** 2 * T * _exp(report.C4 * eps * T) * x0n ** 2
    slack = 1e-12
    report.satisfied_traj = report.measured_traj_error <= report.predicted_traj_error * (1 + 1e-9) + slack
    floor = -1e-8 * (1.0 + abs(nominal.cost))
    report.satisfied_cost = floor <= report.measured_cost_gap <= report.predicted_cost_gap * (1 + 1e-9) + slack
    report.learned_stable = learned.stable
    if eps < report.eps_star:
        mu = report.mu0 - report.M * report.C0 * eps
        envelope = report.M * np.exp(-mu * learned.times) * x0n
        norms = np.linalg.norm(learned.states, axis=1)
        report.measured_decay_ok = bool(np.all(norms <= envelope * (1 + 1e-9) + slack))
        report.satisfied_stability = bool(learned.stable and report.measured_decay_ok)
    return report


def synthetic_perturbation(p_star, eps, kind="identity", rng=None):
    """``P* + E`` with ``max_t ||E(t)||_F = eps``; E symmetric and constant in time."""
    n = p_star.values.shape[-1]
    if kind == "identity":
        e = np.eye(n)
    elif kind == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        e = rng.standard_normal((n, n))
        e = 0.5 * (e + e.T)
    else:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    nrm = linalg.frob_norm(e)
    e = e * (eps / nrm) if nrm else e
    return riccati.RiccatiTrajectory(times=p_star.times, values=p_star.values + e)


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    dimension: int
    method: str
    time_ms: float
    speedup: float


def time_calls(fn, instances, repetitions=100, warmup=10):
    """Median wall-clock milliseconds of ``fn(instance)`` after discarding warm-up calls."""
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    samples = []
    for i in range(warmup + repetitions):
        inst = instances[i % len(instances)]
        t0 = time.perf_counter()
        fn(inst)
        dt = time.perf_counter() - t0
        if i >= warmup:
            samples.append(dt * 1e3)
    return statistics.median(samples)


def bench_inference(solver, model, instances, repetitions=100, warmup=10, dimension=0,
                    solver_name="solver", model_name="model"):
    """Median per-instance times of a classical solver and a surrogate.

    Returns two :class:`BenchRow` entries; the surrogate row's speedup is
    ``solver_time / model_time``.
    """
    t_solver = time_calls(solver, instances, repetitions, warmup)
    t_model = time_calls(model, instances, repetitions, warmup)
    return [BenchRow(dimension, solver_name, t_solver, 1.0),
            BenchRow(dimension, model_name, t_model, t_solver / t_model)]


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

TRIAL_COLUMNS = ["stable_samples", "unstable_samples", "stable_eigenvalues",
                 "unstable_eigenvalues", "test_loss"]
SCATTER_COLUMNS = ["real", "imag", "source"]


def stability_table(verdicts, test_loss):
    stable = sum(v.stable for v in verdicts)
    eigs = np.concatenate([v.spectrum for v in verdicts]) if verdicts else np.array([])
    stable_eigs = int(np.sum(eigs.real < -linalg.STABILITY_MARGIN))
    return {
        "stable_samples": stable,
        "unstable_samples": len(verdicts) - stable,
        "stable_eigenvalues": stable_eigs,
        "unstable_eigenvalues": int(len(eigs) - stable_eigs),
        "test_loss": float(test_loss),
    }


def scatter_rows(spectra, source):
    return [{"real": float(z.real), "imag": float(z.imag), "source": source}
            for spec in spectra for z in spec]


def write_csv(path, rows, columns=None):
    rows = list(rows)
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
