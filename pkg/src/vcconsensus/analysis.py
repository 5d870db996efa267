"""Stacked stochastic-matrix form of the closed loop and its certificates.

Per agent the state ``(x_i, v_i)`` is mapped to ``xi_i = (x_i, x_i + 2 v_i / b_i)``.
Stacking ``xi(k), xi(k-1), ..., xi(k-M)`` into ``Z(k)`` turns the delayed,
truncated closed loop into ``Z(k+1) = W(k) Z(k)`` with a row-stochastic step
factor ``W(k) = diag{Q(k+1) Q(k)^-1, I} Psi(k)``. This module builds ``W``,
folds the products ``Gamma(k, s) = W(k) ... W(s)`` and measures the properties
that drive convergence: stochasticity, a column bounded away from zero over
groups of windows, per-column row-range contraction, and an exponential
envelope of the consensus diameter.

Scaling factors ``e_i(k)`` and gains ``b_i(k)`` are always taken from a
recorded :class:`~vcconsensus.protocol.Trajectory`; nothing here re-applies
the constraint operator. For ``r > 1`` the same matrices act on every axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import block_diag

from . import _kernels
from .errors import (
    DegenerateFit,
    DimensionMismatch,
    InsufficientHorizon,
    StochasticityViolation,
)
from .graphs import GraphSnapshot
from .protocol import Trajectory

ROW_SUM_GUARD = 1e-7
MONOTONE_TOL = 1e-12


# --------------------------------------------------------------------------
# per-step matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StepMatrices:
    A_tilde: NDArray
    B_tilde: NDArray
    Q: NDArray
    Q_next: NDArray
    E: NDArray
    L0: NDArray
    Phi: list
    A: NDArray
    B: NDArray
    F: NDArray
    Psi: NDArray
    QQinv: NDArray
    step_factor: NDArray
    n: int
    M: int

    @property
    def dim(self) -> int:
        return 2 * self.n * (self.M + 1)


def _blocks(fn, b: NDArray) -> NDArray:
    return block_diag(*[fn(bi) for bi in b])


def build_step_matrices(b: NDArray, b_next: NDArray, e: NDArray, g: GraphSnapshot,
                        T: float, max_delay: int) -> StepMatrices:
    """All transformation matrices for one step.

    ``b`` and ``b_next`` are the gains at ``k`` and ``k+1``, ``e`` the scaling
    factors at ``k`` and ``g`` the (already normalised) graph used at ``k``.
    """
    b = np.asarray(b, float)
    b_next = np.asarray(b_next, float)
    e = np.asarray(e, float)
    n = len(b)
    if len(b_next) != n or len(e) != n or g.n != n:
        raise DimensionMismatch(f"n={n}, b_next={len(b_next)}, e={len(e)}, graph={g.n}")
    if g.delays.max(initial=0) > max_delay:
        raise DimensionMismatch(f"graph delay {g.delays.max()} exceeds M={max_delay}")
    M = int(max_delay)
    F = np.array([[0.0, 0.0], [T, 0.0]])

    A_tilde = _blocks(lambda bi: np.array([[1.0, T], [0.0, 1.0 - bi * T]]), b)
    B_tilde = np.kron(np.eye(n), F)
    Q = _blocks(lambda bi: np.array([[1.0, 0.0], [1.0, 2.0 / bi]]), b)
    Q_next = _blocks(lambda bi: np.array([[1.0, 0.0], [1.0, 2.0 / bi]]), b_next)
    A = _blocks(lambda bi: np.array([[1 - bi * T / 2, bi * T / 2], [bi * T / 2, 1 - bi * T / 2]]), b)
    B = _blocks(lambda bi: np.array([[0.0, 0.0], [0.0, 2.0 / bi]]), b)
    ratio = b / b_next
    QQinv = block_diag(*[np.array([[1.0, 0.0], [1.0 - r, r]]) for r in ratio])

    E = np.diag(e)
    L0 = np.diag(g.weights.sum(axis=1))
    Phi = [np.where(g.delays == m, g.weights, 0.0) for m in range(M + 1)]

    two_n = 2 * n
    D = two_n * (M + 1)
    Psi = np.zeros((D, D))
    Psi[:two_n, :two_n] = A - B @ np.kron(E @ L0, F) + B @ np.kron(E @ Phi[0], F)
    for l in range(1, M + 1):
        Psi[:two_n, l * two_n:(l + 1) * two_n] = B @ np.kron(E @ Phi[l], F)
        Psi[l * two_n:(l + 1) * two_n, (l - 1) * two_n:l * two_n] = np.eye(two_n)

    W = Psi.copy()
    W[:two_n] = QQinv @ Psi[:two_n]
    return StepMatrices(A_tilde, B_tilde, Q, Q_next, E, L0, Phi, A, B, F, Psi, QQinv, W, n, M)


def auxiliary_theta(sm: StepMatrices) -> tuple[NDArray, float]:
    """Lower-bounding matrix ``diag{diagpart(Q(k+1)Q(k)^-1), I} Psi(k)``.

    Returns the matrix and its smallest nonzero entry.
    """
    two_n = 2 * sm.n
    theta = sm.Psi.copy()
    theta[:two_n] = np.diag(sm.QQinv)[:, None] * sm.Psi[:two_n]
    nz = theta[theta > 0]
    return theta, float(nz.min()) if nz.size else 0.0


def theta_structural_positive(theta: NDArray, n: int, M: int) -> bool:
    """Entries that must be strictly positive for any admissible step."""
    two_n = 2 * n
    j = np.arange(n)
    ok = np.all(theta[2 * j + 1, 2 * j] > 0) and np.all(theta[2 * j, 2 * j + 1] > 0)
    ok &= bool(np.all(np.diag(theta)[:two_n] > 0))
    l = np.arange(two_n)
    for i in range(1, M + 1):
        ok &= bool(np.all(theta[i * two_n + l, (i - 1) * two_n + l] > 0))
    return bool(ok)


def theta_lower_bound(p0: NDArray, d: NDArray, T: float, mu_c: float, e_min: float) -> float:
    """A uniform positive bound on the nonzero entries of the auxiliary matrix.

    Built from ``b(k)/b(k+1) >= p0 T``, ``b T/2 - 2 T d / b >= p0 T/2 - 2 T d / p0``,
    ``1 - bT/2 > 1/2`` and ``2 T e a_ij / b >= 2 T^2 e_min mu_c``.
    """
    p0 = np.asarray(p0, float)
    d = np.asarray(d, float)
    ratio = p0 * T
    coupling = np.minimum(p0 * T / 2 - 2 * T * d / p0, 2 * T * T * e_min * mu_c)
    per_agent = ratio * np.minimum(np.minimum(p0 * T / 2, coupling), 0.5)
    return float(per_agent.min())


# --------------------------------------------------------------------------
# transition products
# --------------------------------------------------------------------------

@dataclass
class TransitionProduct:
    gamma: NDArray
    from_step: int
    to_step: int
    factor_log: list | None = None

    @classmethod
    def identity(cls, dim: int, s: int = 0, keep_factors: bool = False) -> "TransitionProduct":
        return cls(np.eye(dim), s, s - 1, [] if keep_factors else None)


def advance_transition(tp: TransitionProduct, sm: StepMatrices) -> TransitionProduct:
    gamma = sm.step_factor @ tp.gamma
    err = float(np.max(np.abs(gamma.sum(axis=1) - 1.0)))
    if err > ROW_SUM_GUARD:
        raise StochasticityViolation(f"row sums drift by {err:.3e} at step {tp.to_step + 1}")
    log = None
    if tp.factor_log is not None:
        log = tp.factor_log + [sm.step_factor]
    return TransitionProduct(gamma, tp.from_step, tp.to_step + 1, log)


def initial_stack(traj: Trajectory) -> NDArray:
    """``Z(0)`` of shape ``(2n(M+1), r)``.

    Before time 0 agents sit still, so every delayed block is ``(x_i, x_i)``
    whatever gain is used to form it.
    """
    n, r, M = traj.n, traj.r, traj.max_delay
    x0, v0, b0 = traj.x[0], traj.v[0], traj.b[0]
    xi0 = np.empty((2 * n, r))
    xi0[0::2] = x0
    xi0[1::2] = x0 + 2.0 * v0 / b0[:, None]
    past = np.repeat(x0, 2, axis=0)
    return np.vstack([xi0] + [past] * M)


def step_factors(traj: Trajectory) -> Iterable[StepMatrices]:
    for k in range(traj.horizon):
        yield build_step_matrices(traj.b[k], traj.b[k + 1], traj.e[k], traj.snapshots[k],
                                  traj.T, traj.max_delay)


def dual_simulate(traj: Trajectory) -> tuple[float, NDArray]:
    """Re-run the trajectory through ``Z(k+1) = W(k) Z(k)``.

    Returns the largest absolute position/velocity deviation from the direct
    simulation and the per-step deviations.
    """
    n = traj.n
    Z = initial_stack(traj)
    dev = np.zeros(traj.horizon + 1)
    for k, sm in enumerate(step_factors(traj)):
        Z = sm.step_factor @ Z
        x = Z[0:2 * n:2]
        v = traj.b[k + 1][:, None] / 2.0 * (Z[1:2 * n:2] - x)
        dev[k + 1] = max(np.abs(x - traj.x[k + 1]).max(), np.abs(v - traj.v[k + 1]).max())
    return float(dev.max()), dev


# --------------------------------------------------------------------------
# positive columns and row ranges
# --------------------------------------------------------------------------

@dataclass
class PositiveColumn:
    found: bool
    h: int | None  # 0-based column among the first 2n
    mu_hat: float
    n_hat: int
    block_h: list  # best column of each block
    block_mu: list  # its minimum entry
    best_observed: float

    def __bool__(self):
        return self.found


def block_boundaries(window_starts: Sequence[int], n_hat: int, horizon: int) -> list[int]:
    """Step indices ``k_0, k_{n_hat}, k_{2 n_hat}, ...`` not beyond ``horizon``."""
    out = [int(window_starts[i]) for i in range(0, len(window_starts), n_hat)]
    return [k for k in out if k <= horizon]


def positive_column_window(factors: Sequence[NDArray], window_starts: Sequence[int],
                           n_hat: int, n_agents: int) -> PositiveColumn:
    """Search blocks of ``n_hat`` windows for a uniformly positive leading column.

    ``factors[k]`` is the step factor at ``k``. For every complete block the
    product over its steps is formed and, for each of the first ``2n``
    columns, its smallest entry recorded. The reported ``h`` maximises the
    minimum of that quantity over all blocks.
    """
    bounds = block_boundaries(window_starts, n_hat, len(factors))
    if len(bounds) < 2:
        raise InsufficientHorizon(
            f"need {n_hat} windows; factors cover {len(factors)} steps, "
            f"{len(window_starts) - 1} windows"
        )
    two_n = 2 * n_agents
    mins = []
    for k0, k1 in zip(bounds[:-1], bounds[1:]):
        P = np.eye(factors[0].shape[0])
        for k in range(k0, k1):
            P = factors[k] @ P
        mins.append(P[:, :two_n].min(axis=0))
    return _positive_column_from_mins(np.array(mins), n_hat)


def _positive_column_from_mins(mins: NDArray, n_hat: int) -> PositiveColumn:
    uniform = mins.min(axis=0)
    h = int(np.argmax(uniform))
    mu_hat = float(uniform[h])
    found = mu_hat > 0.0
    return PositiveColumn(
        found=found,
        h=h if found else None,
        mu_hat=mu_hat if found else 0.0,
        n_hat=n_hat,
        block_h=[int(np.argmax(m)) for m in mins],
        block_mu=[float(m.max()) for m in mins],
        best_observed=float(mins.max()),
    )


@dataclass
class RowRangeReport:
    ranges: NDArray
    max_nonincreasing: bool
    min_nondecreasing: bool


def row_range_report(gammas: Sequence[NDArray], column: int,
                     tol: float = MONOTONE_TOL) -> RowRangeReport:
    """Row range (max - min over rows) of one column along a product sequence."""
    col = np.array([g[:, column] for g in gammas])
    hi, lo = col.max(axis=1), col.min(axis=1)
    return RowRangeReport(
        ranges=hi - lo,
        max_nonincreasing=bool(np.all(np.diff(hi) <= tol)),
        min_nondecreasing=bool(np.all(np.diff(lo) >= -tol)),
    )


# --------------------------------------------------------------------------
# exponential envelope
# --------------------------------------------------------------------------

@dataclass
class RateFit:
    C: float
    mu: float
    r2: float
    C_ls: float
    x_bar: NDArray | None
    degenerate: bool
    dominates: bool
    transient_excess: float
    segment: tuple[int, int]


def fit_exponential_rate(diameter: NDArray | Trajectory, tail_fraction: float = 0.8,
                         floor: float = 1e-12, slack: float = 1.05) -> RateFit:
    """Fit ``diameter(k) <= C (1 - mu)^k``.

    ``mu`` comes from a least-squares line through ``log diameter`` over the
    last ``tail_fraction`` of the points above ``floor``. ``C`` is the
    smallest constant for which the envelope with that rate dominates every
    such point; ``C_ls`` is the plain least-squares intercept and
    ``transient_excess`` the largest log-gap of the data above that line.
    """
    x_bar = None
    if isinstance(diameter, Trajectory):
        x_bar = diameter.x[-1].mean(axis=0)
        diameter = diameter.diameter
    D = np.asarray(diameter, float)
    k_all = np.arange(len(D))
    usable = np.flatnonzero(D > floor)
    if usable.size == 0:
        return RateFit(0.0, 1.0, 1.0, 0.0, x_bar, True, True, 0.0, (0, 0))
    if usable.size < 10:
        raise DegenerateFit(f"only {usable.size} points above {floor}")
    start = usable.size - int(math.ceil(tail_fraction * usable.size))
    seg = usable[start:]
    y = np.log(D[seg])
    slope, intercept = np.polyfit(k_all[seg].astype(float), y, 1)
    resid = y - (intercept + slope * k_all[seg])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    mu = float(-math.expm1(slope))
    log_rate = slope  # log(1 - mu)
    excess_all = np.log(D[usable]) - log_rate * k_all[usable]
    C = float(np.exp(excess_all.max()))
    transient_excess = float(np.max(np.log(D[usable]) - (intercept + slope * k_all[usable])))
    envelope = slack * C * np.exp(log_rate * k_all[usable])
    dominates = bool(np.all(envelope >= D[usable]))
    return RateFit(C, mu, r2, float(np.exp(intercept)), x_bar, False, dominates,
                   transient_excess, (int(seg[0]), int(seg[-1])))


def two_agent_contraction(p: float, a: float, T: float) -> float:
    """``1 - spectral radius`` of the unconstrained, undelayed two-agent error.

    The relative state ``(y, w) = (x_1 - x_2, v_1 - v_2)`` obeys
    ``y+ = y + T w`` and ``w+ = (1 - pT) w - 2 a T y``.
    """
    M = np.array([[1.0, T], [-2.0 * a * T, 1.0 - p * T]])
    return float(1.0 - np.max(np.abs(np.linalg.eigvals(M))))


# --------------------------------------------------------------------------
# truncation-factor bound
# --------------------------------------------------------------------------

def e_lower_bounds(traj: Trajectory, rho_under: NDArray) -> NDArray:
    """Per-agent lower bound on ``e_i(k)`` whenever truncation occurs."""
    Z0 = initial_stack(traj)
    zmax = float(np.linalg.norm(Z0, axis=1).max())
    denom = (1.0 / traj.T + 2.0 * traj.n * traj.T * traj.d) * zmax
    with np.errstate(divide="ignore"):
        return np.asarray(rho_under, float) / denom


def e_bound_violations(traj: Trajectory, rho_under: NDArray) -> int:
    bound = e_lower_bounds(traj, rho_under)
    truncated = traj.e < 1.0
    return int(np.sum(truncated & (traj.e < bound[None, :])))


# --------------------------------------------------------------------------
# full certification pass
# --------------------------------------------------------------------------

@dataclass
class AnalysisReport:
    factor_row_sum_error: NDArray
    factor_min_entry: NDArray
    gamma_row_sum_error: NDArray
    gamma_min_entry: NDArray
    col_max_increase: NDArray
    col_min_decrease: NDArray
    theta_min_nonzero: NDArray
    theta_dominated: NDArray
    theta_structural: NDArray
    window_ends: list
    window_ranges: NDArray  # (windows + 1, D); row 0 is the identity
    n_hat: int
    positive_column: PositiveColumn | None
    first_positive_window: int | None
    block_ends: list
    block_ranges: NDArray
    contraction_excess: float
    dual_deviation: float
    dual_deviation_per_step: NDArray
    e_bound: NDArray
    e_bound_violations: int
    rate: RateFit | None
    limit_row: NDArray = field(repr=False, default=None)

    @property
    def stochastic(self) -> bool:
        return bool(
            np.all(self.factor_min_entry >= 0) and np.all(self.gamma_min_entry >= 0)
            and np.all(self.factor_row_sum_error <= 1e-9)
            and np.all(self.gamma_row_sum_error <= 1e-9)
        )

    @property
    def monotone(self) -> bool:
        return bool(np.all(self.col_max_increase <= MONOTONE_TOL)
                    and np.all(self.col_min_decrease <= MONOTONE_TOL))


def default_n_hat(n: int, max_delay: int) -> int:
    return 4 * n * (max_delay + 1)


def analyze(traj: Trajectory, window_starts: Sequence[int], rho_under: NDArray,
            n_hat: int | None = None, fit_rate: bool = True) -> AnalysisReport:
    """One pass over the recorded trajectory collecting every certificate.

    ``window_starts`` are the joint-connectivity window boundaries
    ``k_0 = 0 < k_1 < ...``; ``rho_under`` the per-agent minimum reach.
    """
    n, M, K = traj.n, traj.max_delay, traj.horizon
    two_n = 2 * n
    D = two_n * (M + 1)
    n_hat = default_n_hat(n, M) if n_hat is None else int(n_hat)
    wends = [int(k) for k in window_starts if 0 < k <= K]
    wend_set = set(wends)
    bounds = block_boundaries(window_starts, n_hat, K)
    bound_set = set(bounds[1:])

    f_err = np.zeros(K)
    f_min = np.zeros(K)
    g_err = np.zeros(K)
    g_min = np.zeros(K)
    inc = np.zeros(K)
    dec = np.zeros(K)
    th_min = np.zeros(K)
    th_dom = np.zeros(K, dtype=bool)
    th_struct = np.zeros(K, dtype=bool)
    window_ranges = [np.full(D, 1.0 if D > 1 else 0.0)]  # ranges of the identity
    block_ranges = [window_ranges[0]]
    first_positive = None
    block_mins = []

    gamma = np.eye(D)
    colmax = gamma.max(axis=0)
    colmin = gamma.min(axis=0)
    block = np.eye(D)
    Z = initial_stack(traj)
    dev = np.zeros(K + 1)

    for k, sm in enumerate(step_factors(traj)):
        W = sm.step_factor
        f_err[k] = np.max(np.abs(W.sum(axis=1) - 1.0))
        f_min[k] = W.min()
        theta, th_min[k] = auxiliary_theta(sm)
        th_dom[k] = bool(np.all(W - theta >= 0))
        th_struct[k] = theta_structural_positive(theta, n, M)

        gamma, g_err[k], g_min[k], inc[k], dec[k], colmax, colmin = _kernels.fold_step(
            W, gamma, colmax, colmin)
        if g_err[k] > ROW_SUM_GUARD:
            raise StochasticityViolation(f"row sums drift by {g_err[k]:.3e} at step {k}")
        block = W @ block

        Z = W @ Z
        x = Z[0:two_n:2]
        v = traj.b[k + 1][:, None] / 2.0 * (Z[1:two_n:2] - x)
        dev[k + 1] = max(np.abs(x - traj.x[k + 1]).max(), np.abs(v - traj.v[k + 1]).max())

        end = k + 1
        if end in wend_set:
            window_ranges.append(colmax - colmin)
            if first_positive is None and np.any(colmin[:two_n] > 0):
                first_positive = len(window_ranges) - 1
        if end in bound_set:
            block_ranges.append(colmax - colmin)
            block_mins.append(block[:, :two_n].min(axis=0))
            block = np.eye(D)

    pos = _positive_column_from_mins(np.array(block_mins), n_hat) if block_mins else None
    excess = -np.inf
    if pos is not None:
        for b_idx in range(len(block_mins)):
            mu_b = pos.block_mu[b_idx]
            lhs = block_ranges[b_idx + 1]
            rhs = (1.0 - mu_b) * block_ranges[b_idx]
            excess = max(excess, float(np.max(lhs - rhs)))

    bound = e_lower_bounds(traj, rho_under)
    return AnalysisReport(
        factor_row_sum_error=f_err,
        factor_min_entry=f_min,
        gamma_row_sum_error=g_err,
        gamma_min_entry=g_min,
        col_max_increase=inc,
        col_min_decrease=dec,
        theta_min_nonzero=th_min,
        theta_dominated=th_dom,
        theta_structural=th_struct,
        window_ends=wends,
        window_ranges=np.array(window_ranges),
        n_hat=n_hat,
        positive_column=pos,
        first_positive_window=first_positive,
        block_ends=bounds,
        block_ranges=np.array(block_ranges),
        contraction_excess=excess,
        dual_deviation=float(dev.max()),
        dual_deviation_per_step=dev,
        e_bound=bound,
        e_bound_violations=e_bound_violations(traj, rho_under),
        rate=fit_exponential_rate(traj) if fit_rate else None,
        limit_row=gamma[0].copy(),
    )
