"""Ground-truth LQR solvers.

Algebraic Riccati equations are solved by Newton-Kleinman iteration, the
differential Riccati equation by backward RK4 on a uniform grid.  The module
also simulates closed loops under a gain schedule and evaluates the quadratic
cost functional by composite Simpson quadrature.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linalg
from .errors import BlowUp, NoConvergence, NoStabilizingInit, SingularMatrix

log = logging.getLogger(__name__)

TIME_INVARIANT = "time_invariant"
TRIG = "trig"

BLOWUP_NORM = 1e12
ARE_RTOL = 1e-10
NK_MAX_ITER = 60
POLE_SHIFTS = (1.0, 10.0, 100.0)


@dataclass
class SystemInstance:
    """One parameter set ``(A(.), B(.), Q(.), R(.), P_T)`` on ``[0, horizon]``.

    Time-invariant systems carry constant ``A, B, Q, R``.  Trigonometric
    systems carry a coefficient object exposing ``A(t)``, ``B(t)``, ``Q(t)``
    (see :class:`riccati_opnet.datagen.TrigCoeffs`) and use ``R = I_m``.
    """

    kind: str
    n: int
    m: int
    horizon: float
    p_terminal: np.ndarray
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    coeffs: object = None
    n_steps: int = 100
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p_terminal = linalg.as_mat(self.p_terminal)
        if self.kind == TIME_INVARIANT:
            self.A = linalg.as_mat(self.A)
            self.B = linalg.as_mat(self.B)
            self.Q = linalg.as_mat(self.Q)
            self.R = linalg.as_mat(self.R)
            if self.A.shape != (self.n, self.n) or self.B.shape != (self.n, self.m):
                raise ValueError("A/B shapes disagree with (n, m)")
            if self.Q.shape != (self.n, self.n) or self.R.shape != (self.m, self.m):
                raise ValueError("Q/R shapes disagree with (n, m)")
        elif self.kind == TRIG:
            if self.coeffs is None:
                raise ValueError("trigonometric system needs coefficients")
        else:
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.p_terminal.shape != (self.n, self.n):
            raise ValueError("P_T shape disagrees with n")

    @property
    def time_invariant(self):
        return self.kind == TIME_INVARIANT

    def A_at(self, t):
        return self.A if self.time_invariant else self.coeffs.A(t)

    def B_at(self, t):
        return self.B if self.time_invariant else self.coeffs.B(t)

    def Q_at(self, t):
        return self.Q if self.time_invariant else self.coeffs.Q(t)

    def R_at(self, t):
        return self.R if self.time_invariant else np.eye(self.m)

    def grid(self, n_steps=None):
        return np.linspace(0.0, self.horizon, (n_steps or self.n_steps) + 1)

    def with_(self, **changes):
        fields = dict(self.__dict__)
        fields.update(changes)
        return SystemInstance(**fields)

    def check_weights(self, times=None):
        """Return True when Q(t) is PSD, R(t) PD at the given times and P_T SPD."""
        if not linalg.is_spd(self.p_terminal):
            return False
        times = [0.0] if times is None else times
        eye = 1e-12 * np.eye(self.n)
        for t in times:
            if not linalg.is_spd(self.Q_at(t) + eye) or not linalg.is_spd(self.R_at(t)):
                return False
        return True


@dataclass
class RiccatiTrajectory:
    times: np.ndarray
    values: np.ndarray  # (N+1, n, n)

    @property
    def n_steps(self):
        return len(self.times) - 1

    def at(self, k):
        return self.values[k]


@dataclass
class ClosedLoopRun:
    times: np.ndarray
    states: np.ndarray  # (N+1, n)
    controls: np.ndarray  # (N+1, m)
    cost: float
    stable: bool
    decay_rate: Optional[float] = None


def _rinv_bt(B, R):
    if np.array_equal(R, np.eye(R.shape[0])):
        return B.T.copy()
    chol = linalg.cholesky(linalg.symmetrize(R))
    if chol is None:
        raise SingularMatrix("R is not positive definite")
    return linalg.solve_linear(R, B.T)


def are_residual(A, B, Q, R, P):
    """Frobenius norm of ``A^T P + P A - P B R^-1 B^T P + Q``."""
    res = A.T @ P + P @ A - P @ B @ _rinv_bt(B, R) @ P + Q
    return linalg.frob_norm(res)


# ---------------------------------------------------------------------------
# Algebraic Riccati equation
# ---------------------------------------------------------------------------

def newton_kleinman(A, B, Q, R, k0, tol=None, max_iter=NK_MAX_ITER):
    """Newton-Kleinman iteration from a stabilizing gain ``k0``.

    Returns ``(P, residual_history)``.
    """
    if tol is None:
        tol = ARE_RTOL * max(1.0, linalg.frob_norm(Q))
    rinv_bt = _rinv_bt(B, R)
    k = k0
    history = []
    for j in range(max_iter):
        a_cl = A - B @ k
        p = linalg.solve_lyapunov(a_cl, Q + k.T @ R @ k)
        k = rinv_bt @ p
        res = are_residual(A, B, Q, R, p)
        history.append(res)
        if j >= 2 and res > history[-2] and history[-2] > tol:
            log.debug("Newton-Kleinman residual increased at step %d: %.3e", j, res)
        if res <= tol:
            return p, history
    raise NoConvergence(
        f"Newton-Kleinman did not reach residual {tol:.1e} in {max_iter} steps "
        f"(last {history[-1]:.3e})"
    )


def _bass_gain(A, B, R):
    n = A.shape[0]
    beta = max(0.0, linalg.spectral_abscissa(A)) + 1.0
    shifted = A + beta * np.eye(n)
    z = linalg.solve_lyapunov(-shifted.T, 2.0 * B @ B.T)
    if not linalg.is_spd(z):
        return None
    return linalg.solve_linear(z.T, B).T  # B^T Z^-1


def stabilizing_gain(A, B, R, horizon_fallback=None, Q=None):
    """Find ``K0`` with ``A - B K0`` Hurwitz.

    Tries ``K0 = 0`` for stable ``A``, then pole-shifting gains
    ``sigma / (||B||_F^2 + delta) * B^T`` for sigma in (1, 10, 100), then
    Bass's Lyapunov-based gain, and finally the gain of a long-horizon DRE.
    """
    n, m = B.shape
    if linalg.is_hurwitz(A):
        return np.zeros((m, n))
    bnorm2 = linalg.frob_norm(B) ** 2
    for sigma in POLE_SHIFTS:
        k0 = sigma / (bnorm2 + 1e-12) * B.T
        if linalg.is_hurwitz(A - B @ k0):
            return k0
    try:
        k0 = _bass_gain(A, B, R)
    except SingularMatrix:
        k0 = None
    if k0 is not None and linalg.is_hurwitz(A - B @ k0):
        return k0
    if Q is not None:
        horizon = horizon_fallback or 50.0
        sys = SystemInstance(
            kind=TIME_INVARIANT, n=n, m=m, horizon=horizon, p_terminal=np.eye(n),
            A=A, B=B, Q=Q, R=R, n_steps=int(200 * horizon),
        )
        try:
            traj = solve_dre(sys)
            k0 = _rinv_bt(B, R) @ traj.values[0]
            if linalg.is_hurwitz(A - B @ k0):
                return k0
        except BlowUp:
            pass
    raise NoStabilizingInit("no stabilizing initial gain found")


def solve_are(sys):
    """Stabilizing solution of ``A^T P + P A - P B R^-1 B^T P + Q = 0``."""
    if not sys.time_invariant:
        raise ValueError("solve_are needs a time-invariant system")
    A, B, Q, R = sys.A, sys.B, sys.Q, sys.R
    k0 = stabilizing_gain(A, B, R, Q=Q)
    p, _ = newton_kleinman(A, B, Q, R, k0)
    if not linalg.is_spd(p):
        raise NoConvergence("Newton-Kleinman limit is not positive definite")
    return p


# ---------------------------------------------------------------------------
# Differential Riccati equation
# ---------------------------------------------------------------------------

def _coefficient_table(sys, times):
    """Evaluate A, S = B R^-1 B^T and Q at each time in ``times``."""
    if sys.time_invariant:
        s = sys.B @ _rinv_bt(sys.B, sys.R)
        k = len(times)
        return (np.broadcast_to(sys.A, (k,) + sys.A.shape),
                np.broadcast_to(s, (k,) + s.shape),
                np.broadcast_to(sys.Q, (k,) + sys.Q.shape))
    a = np.array([sys.A_at(t) for t in times])
    b = np.array([sys.B_at(t) for t in times])
    q = np.array([sys.Q_at(t) for t in times])
    s = np.array([bi @ _rinv_bt(bi, sys.R_at(t)) for bi, t in zip(b, times)])
    return a, s, q


def riccati_rhs(a, s, q, p):
    """dP/dt of the DRE: ``-(A^T P + P A - P S P + Q)``."""
    ap = a.T @ p
    return -(ap + ap.T - p @ s @ p + q)


def solve_dre(sys, n_steps=None):
    """Integrate the DRE backward from ``P(T) = P_T`` with classic RK4.

    Fixed step ``h = T / N_t``; every step is symmetrized.  Raises BlowUp
    with the escape time if ``||P||_F`` exceeds 1e12.
    """
    n_steps = n_steps or sys.n_steps
    if n_steps < 16:
        raise ValueError("solve_dre needs at least 16 steps")
    times = sys.grid(n_steps)
    h = sys.horizon / n_steps
    half = np.linspace(0.0, sys.horizon, 2 * n_steps + 1)
    a, s, q = _coefficient_table(sys, half)
    values = np.empty((n_steps + 1, sys.n, sys.n))
    p = linalg.symmetrize(sys.p_terminal.copy())
    values[n_steps] = sys.p_terminal
    for k in range(n_steps, 0, -1):
        i1, i2, i3 = 2 * k, 2 * k - 1, 2 * k - 2
        k1 = riccati_rhs(a[i1], s[i1], q[i1], p)
        k2 = riccati_rhs(a[i2], s[i2], q[i2], p - 0.5 * h * k1)
        k3 = riccati_rhs(a[i2], s[i2], q[i2], p - 0.5 * h * k2)
        k4 = riccati_rhs(a[i3], s[i3], q[i3], p - h * k3)
        p = p - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        p = 0.5 * (p + p.T)
        norm = linalg.frob_norm(p)
        if not math.isfinite(norm) or norm > BLOWUP_NORM:
            raise BlowUp(f"Riccati flow escaped at t={times[k - 1]:.6g}",
                         escape_time=float(times[k - 1]))
        values[k - 1] = p
    return RiccatiTrajectory(times=times, values=values)


def feedback_gain(sys, p_traj):
    """Gain schedule ``K(t_k) = R(t_k)^-1 B(t_k)^T P(t_k)``, shape (N+1, m, n)."""
    times = p_traj.times
    if not math.isclose(times[-1], sys.horizon, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError("trajectory grid does not match the system horizon")
    gains = np.empty((len(times), sys.m, sys.n))
    for k, t in enumerate(times):
        gains[k] = _rinv_bt(sys.B_at(t), sys.R_at(t)) @ p_traj.values[k]
    return gains


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

def fit_decay_rate(times, norms):
    """Least-squares slope of ``-log ||x(t)||`` against ``t`` (decay rate)."""
    norms = np.asarray(norms, dtype=float)
    times = np.asarray(times, dtype=float)
    if np.any(norms <= 0.0):
        return math.inf
    logs = np.log(norms)
    tc = times - times.mean()
    denom = float(tc @ tc)
    if denom == 0.0:
        return 0.0
    return -float(tc @ (logs - logs.mean())) / denom


def simulate_closed_loop(sys, gains, x0, times=None):
    """Forward RK4 on ``x' = (A(t) - B(t) K(t)) x``.

    ``gains`` holds ``K`` at the grid nodes; at RK4 half-steps ``K`` is
    linearly interpolated.  The stability verdict uses the frozen closed-loop
    matrix at ``t = 0`` for time-invariant systems and a log-linear decay fit
    over the second half of the horizon otherwise.
    """
    gains = np.asarray(gains, dtype=float)
    n_steps = gains.shape[0] - 1
    times = sys.grid(n_steps) if times is None else np.asarray(times)
    h = sys.horizon / n_steps
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    states = np.empty((n_steps + 1, sys.n))
    states[0] = x
    if sys.time_invariant:
        a_nodes = np.broadcast_to(sys.A, (n_steps + 1,) + sys.A.shape)
        b_nodes = np.broadcast_to(sys.B, (n_steps + 1,) + sys.B.shape)
        a_half = b_half = None
    else:
        a_nodes = np.array([sys.A_at(t) for t in times])
        b_nodes = np.array([sys.B_at(t) for t in times])
        mids = times[:-1] + 0.5 * h
        a_half = np.array([sys.A_at(t) for t in mids])
        b_half = np.array([sys.B_at(t) for t in mids])
    for k in range(n_steps):
        c0 = a_nodes[k] - b_nodes[k] @ gains[k]
        c1 = a_nodes[k + 1] - b_nodes[k + 1] @ gains[k + 1]
        k_mid = 0.5 * (gains[k] + gains[k + 1])
        if a_half is None:
            cm = sys.A - sys.B @ k_mid
        else:
            cm = a_half[k] - b_half[k] @ k_mid
        s1 = c0 @ x
        s2 = cm @ (x + 0.5 * h * s1)
        s3 = cm @ (x + 0.5 * h * s2)
        s4 = c1 @ (x + h * s3)
        x = x + h / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
        nx = float(np.sqrt(x @ x))
        if not math.isfinite(nx) or nx > BLOWUP_NORM:
            raise BlowUp(f"closed-loop state escaped at t={times[k + 1]:.6g}",
                         escape_time=float(times[k + 1]))
        states[k + 1] = x
    controls = -np.einsum("kij,kj->ki", gains, states)
    cost = evaluate_cost(sys, times, states, controls)
    if sys.time_invariant:
        spectral, lyap, _ = linalg.stability_tests(sys.A - sys.B @ gains[0])
        stable = spectral and lyap
        rate = None
    else:
        second = slice(n_steps // 2, n_steps + 1)
        rate = fit_decay_rate(times[second], np.linalg.norm(states[second], axis=1))
        stable = rate > 0.0
    return ClosedLoopRun(times=times, states=states, controls=controls,
                         cost=cost, stable=bool(stable), decay_rate=rate)


def simpson(values, h):
    """Composite Simpson rule on an even number of uniform intervals."""
    n = len(values) - 1
    if n % 2:
        raise ValueError("Simpson needs an even number of intervals")
    return h / 3.0 * (values[0] + values[-1] + 4.0 * np.sum(values[1:-1:2])
                      + 2.0 * np.sum(values[2:-1:2]))


def trapezoid(values, h):
    return h * (0.5 * values[0] + 0.5 * values[-1] + np.sum(values[1:-1]))


def evaluate_cost(sys, times, states, controls):
    """``x(T)^T P_T x(T) + int_0^T (x^T Q x + u^T R u) dt`` on the grid."""
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if sys.time_invariant:
        integrand = (np.einsum("ki,ij,kj->k", states, sys.Q, states)
                     + np.einsum("ki,ij,kj->k", controls, sys.R, controls))
    else:
        integrand = np.array([
            x @ sys.Q_at(t) @ x + u @ sys.R_at(t) @ u
            for t, x, u in zip(times, states, controls)
        ])
    n_int = len(times) - 1
    h = (times[-1] - times[0]) / n_int if n_int else 0.0
    if n_int == 0:
        running = 0.0
    elif n_int % 2 == 0:
        running = simpson(integrand, h)
    else:
        log.info("odd interval count %d: cost uses the trapezoid rule", n_int)
        running = trapezoid(integrand, h)
    xt = states[-1]
    return float(running + xt @ sys.p_terminal @ xt)
