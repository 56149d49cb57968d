"""Accelerated decentralized dual solver over time-varying networks.

The solver minimizes a sum of strongly convex node objectives subject to
consensus, working entirely in the dual. Each node i exposes the gradient of
the Fenchel conjugate of its objective through a :class:`DualOracle`. The
method runs two coupled dual sequences plus a momentum stack, communicates
through the current epoch's Laplacian twice per iteration, and evaluates the
stacked oracle exactly once per iteration.

Two variants share the same update body:

* :func:`run` / :func:`adom_step` — the primary solver. Node objectives are
  gamma-strongly-convex; the dual is additionally smoothed by ``r/2 |z|^2``,
  which is equivalent to a Moreau-Yosida regularization of the primal with
  parameter r. Step sizes come from :func:`derive_params`.
* :func:`baseline_run` / :func:`baseline_step` — same dynamics for a generic
  L-smooth, mu-strongly-convex dual gradient supplied directly, with step
  sizes from :func:`derive_baseline_params`.

The dual iterates z, z_f, z_g live in the zero-mean subspace (node-sums
vanish); the momentum stack does not.
"""

from __future__ import annotations

import abc
import math
import time
from dataclasses import dataclass

import numpy as np

from .netgraph import Laplacian, NetworkSchedule, SpectralBounds, schedule_laplacian

__all__ = [
    "DualOracle",
    "QuadraticOracle",
    "AdomParams",
    "BaselineParams",
    "SolverState",
    "TrajectoryRecord",
    "Trajectory",
    "NumericalDivergenceError",
    "derive_params",
    "derive_baseline_params",
    "smoothed_oracle",
    "strongly_convex_surrogate",
    "initial_state",
    "adom_step",
    "baseline_step",
    "run",
    "baseline_run",
    "c2_bound",
    "iteration_estimate",
    "mean_pairwise_sq_dist",
    "project_zero_sum",
]


class DualOracle(abc.ABC):
    """Per-node gradient oracle for the conjugates of the node objectives.

    ``grad_conj(i, z)`` returns the gradient of node i's conjugate objective
    at the dual point z; ``gamma`` is the strong-convexity modulus of the
    primal objectives, and ``dim`` the ambient dimension. Implementations
    must be pure: node evaluations may run concurrently on distinct indices.
    """

    gamma: float
    dim: int

    @abc.abstractmethod
    def grad_conj(self, i: int, z: np.ndarray) -> np.ndarray:
        """Gradient of the i-th conjugate objective at z, shape (dim,)."""

    def grad_conj_stack(self, z_stack: np.ndarray) -> np.ndarray:
        """Stacked evaluation, one row per node. Shape (m, dim) -> (m, dim)."""
        return np.stack(
            [self.grad_conj(i, z_stack[i]) for i in range(z_stack.shape[0])]
        )


class QuadraticOracle(DualOracle):
    """Oracle for quadratics (gamma/2)|x - center_i|^2 on R^dim.

    The conjugate gradient is center_i + z / gamma. With no centers the
    objective is the plain (gamma/2)|x|^2, whose Moreau-regularized dual has
    closed forms used throughout the test suite.
    """

    def __init__(self, gamma: float, dim: int, centers: np.ndarray | None = None):
        if gamma <= 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        self.gamma = float(gamma)
        self.dim = int(dim)
        if centers is not None:
            centers = np.asarray(centers, dtype=float)
            if centers.ndim != 2 or centers.shape[1] != dim:
                raise ValueError(f"centers must have shape (m, {dim}), got {centers.shape}")
        self.centers = centers

    def grad_conj(self, i: int, z: np.ndarray) -> np.ndarray:
        base = z / self.gamma
        if self.centers is None:
            return base
        return self.centers[i] + base

    def grad_conj_stack(self, z_stack: np.ndarray) -> np.ndarray:
        base = z_stack / self.gamma
        if self.centers is None:
            return base
        return self.centers + base


def smoothed_oracle(oracle: DualOracle, r: float):
    """Stacked gradient of the r-smoothed dual: grad_conj(z) + r z.

    Adding ``(r/2)|z|^2`` to each conjugate is the dual picture of taking
    the Moreau-Yosida envelope of each primal objective with parameter r;
    the envelope is 1/r-smooth and gamma/(1 + r gamma)-strongly convex.
    """
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")

    def grad(z_stack: np.ndarray) -> np.ndarray:
        return oracle.grad_conj_stack(z_stack) + r * z_stack

    return grad


def strongly_convex_surrogate(oracle_factory, eps: float) -> DualOracle:
    """Regularized oracle for merely convex problems.

    ``oracle_factory(gamma)`` must build the oracle of the objectives with an
    added quadratic ``(gamma/2)|x|^2``; this picks ``gamma = sqrt(eps)`` so
    that an eps-accurate solve of the regularized problem is O(eps)-accurate
    for the original one.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return oracle_factory(math.sqrt(eps))


@dataclass(frozen=True)
class AdomParams:
    """Step parameters of the primary solver, all derived from (r, gamma)
    and the schedule's spectral bounds."""

    r: float
    gamma: float
    alpha: float
    eta: float
    theta: float
    sigma: float
    tau: float
    bounds: SpectralBounds

    def __post_init__(self):
        for name in ("r", "gamma", "alpha", "eta", "theta", "sigma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")


@dataclass(frozen=True)
class BaselineParams:
    """Step parameters of the baseline variant for an L-smooth,
    mu-strongly-convex dual gradient."""

    smoothness: float
    strong_convexity: float
    alpha: float
    eta: float
    theta: float
    sigma: float
    tau: float
    bounds: SpectralBounds

    def __post_init__(self):
        if self.smoothness < self.strong_convexity:
            raise ValueError("need smoothness >= strong_convexity")
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")


def derive_params(r: float, gamma: float, bounds: SpectralBounds) -> AdomParams:
    """Closed-form step parameters of the primary solver.

    With lam = bounds and rg = r*gamma:

    * alpha = r / 2
    * eta   = 2 lam_min+ sqrt(gamma) / (7 lam_max sqrt(r (1 + rg)))
    * theta = gamma / (lam_max (1 + rg))
    * sigma = 1 / lam_max
    * tau   = (lam_min+ / (7 lam_max)) sqrt(rg / (1 + rg))
    """
    if r <= 0 or gamma <= 0:
        raise ValueError(f"r and gamma must be positive, got r={r}, gamma={gamma}")
    lam_min, lam_max = bounds.lambda_min_plus, bounds.lambda_max
    rg = r * gamma
    alpha = r / 2.0
    eta = 2.0 * lam_min * math.sqrt(gamma) / (7.0 * lam_max * math.sqrt(r * (1.0 + rg)))
    theta = gamma / (lam_max * (1.0 + rg))
    sigma = 1.0 / lam_max
    tau = (lam_min / (7.0 * lam_max)) * math.sqrt(rg / (1.0 + rg))
    return AdomParams(
        r=r, gamma=gamma, alpha=alpha, eta=eta, theta=theta, sigma=sigma, tau=tau,
        bounds=bounds,
    )


def derive_baseline_params(
    smoothness: float, strong_convexity: float, bounds: SpectralBounds
) -> BaselineParams:
    """Step parameters of the baseline variant from (L, mu) directly.

    Substituting L = 1/r and mu = gamma / (1 + r gamma) reproduces
    :func:`derive_params` exactly.
    """
    if strong_convexity <= 0 or smoothness <= 0:
        raise ValueError("smoothness and strong_convexity must be positive")
    lam_min, lam_max = bounds.lambda_min_plus, bounds.lambda_max
    big_l, mu = smoothness, strong_convexity
    alpha = 1.0 / (2.0 * big_l)
    eta = 2.0 * lam_min * math.sqrt(mu * big_l) / (7.0 * lam_max)
    theta = mu / lam_max
    sigma = 1.0 / lam_max
    tau = (lam_min / (7.0 * lam_max)) * math.sqrt(mu / big_l)
    return BaselineParams(
        smoothness=big_l, strong_convexity=mu, alpha=alpha, eta=eta, theta=theta,
        sigma=sigma, tau=tau, bounds=bounds,
    )


@dataclass(frozen=True)
class SolverState:
    """Dual iterates after n completed steps.

    ``x`` caches the smoothed-dual gradient evaluated at the most recent
    z_g, which is the solver's primal output for that iteration; it is None
    before the first step.
    """

    z: np.ndarray
    z_f: np.ndarray
    z_g: np.ndarray | None
    momentum: np.ndarray
    x: np.ndarray | None
    n: int


@dataclass(frozen=True)
class TrajectoryRecord:
    """Sampled output at one iteration.

    ``x`` is the raw smoothed-dual gradient stack (the solver's output);
    ``recovered`` subtracts the r z_g smoothing term, giving the plain
    conjugate gradients, which for transport oracles are exact simplex
    points. ``wall_time`` is seconds of solver time since run start.
    """

    iteration: int
    x: np.ndarray
    recovered: np.ndarray
    consensus: float
    wall_time: float


@dataclass(frozen=True)
class Trajectory:
    records: list[TrajectoryRecord]
    state: SolverState


class NumericalDivergenceError(RuntimeError):
    """A solver iterate became non-finite.

    Carries the offending iterate's name, the iteration index, and (when
    raised through :func:`run`) the records gathered so far.
    """

    def __init__(self, iterate: str, iteration: int):
        super().__init__(
            f"non-finite values in iterate {iterate!r} at iteration {iteration}"
        )
        self.iterate = iterate
        self.iteration = iteration
        self.records: list[TrajectoryRecord] = []


def initial_state(m: int, dim: int) -> SolverState:
    """All-zero start: z = z_f = momentum = 0, nothing evaluated yet."""
    if m < 1 or dim < 1:
        raise ValueError(f"need m >= 1 and dim >= 1, got ({m}, {dim})")
    zeros = np.zeros((m, dim))
    return SolverState(
        z=zeros, z_f=zeros.copy(), z_g=None, momentum=zeros.copy(), x=None, n=0
    )


def _check_finite(name: str, arr: np.ndarray, iteration: int) -> None:
    if not np.isfinite(arr).all():
        raise NumericalDivergenceError(name, iteration)


def _advance(
    state: SolverState,
    lap: Laplacian,
    alpha: float,
    eta: float,
    theta: float,
    sigma: float,
    tau: float,
    grad_at,
) -> SolverState:
    # One stacked oracle evaluation, two Laplacian applications. Overflow
    # surfaces as non-finite entries, which the checks below turn into
    # NumericalDivergenceError; the transient warnings carry no information.
    z_g = tau * state.z + (1.0 - tau) * state.z_f
    g = grad_at(z_g)
    _check_finite("grad", np.asarray(g), state.n)
    with np.errstate(over="ignore", invalid="ignore"):
        delta = sigma * lap.apply(state.momentum - eta * g)
        momentum = state.momentum - eta * g - delta
        z = state.z + (eta * alpha) * (z_g - state.z) + delta
        z_f = z_g - theta * lap.apply(g)
    _check_finite("momentum", momentum, state.n)
    _check_finite("z", z, state.n)
    _check_finite("z_f", z_f, state.n)
    return SolverState(z=z, z_f=z_f, z_g=z_g, momentum=momentum, x=g, n=state.n + 1)


def adom_step(
    state: SolverState, lap: Laplacian, params: AdomParams, oracle: DualOracle
) -> SolverState:
    """One iteration of the primary solver.

    Evaluates the stacked oracle exactly once (at z_g, with the r z_g
    smoothing term added) and applies the Laplacian exactly twice. Raises
    :class:`NumericalDivergenceError` if any updated iterate is non-finite.
    """
    r = params.r

    def grad_at(z_g):
        return oracle.grad_conj_stack(z_g) + r * z_g

    return _advance(
        state, lap, params.alpha, params.eta, params.theta, params.sigma,
        params.tau, grad_at,
    )


def baseline_step(
    state: SolverState, lap: Laplacian, params: BaselineParams, grad_stack
) -> SolverState:
    """One iteration of the baseline variant; ``grad_stack`` maps an (m, d)
    dual stack to the stacked dual gradient."""
    return _advance(
        state, lap, params.alpha, params.eta, params.theta, params.sigma,
        params.tau, grad_stack,
    )


def _record_iterations(n_iters: int, record_every: int):
    for n in range(n_iters):
        yield n, (n % record_every == 0 or n == n_iters - 1)


def run(
    schedule: NetworkSchedule,
    oracle: DualOracle,
    params: AdomParams,
    n_iters: int,
    record_every: int = 1,
) -> Trajectory:
    """Run the primary solver for ``n_iters`` iterations from the zero state.

    Records the output stack x^n at every ``record_every``-th iteration and
    at the final one, reusing the in-step oracle evaluation (the run performs
    exactly ``n_iters`` stacked evaluations in total). On divergence the
    exception carries the records gathered so far.
    """
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    if record_every < 1:
        raise ValueError(f"record_every must be >= 1, got {record_every}")
    state = initial_state(schedule.m, oracle.dim)
    records: list[TrajectoryRecord] = []
    start = time.perf_counter()
    for n, want in _record_iterations(n_iters, record_every):
        lap = schedule_laplacian(schedule, n)
        try:
            state = adom_step(state, lap, params, oracle)
        except NumericalDivergenceError as err:
            err.records = records
            raise
        if want:
            records.append(
                TrajectoryRecord(
                    iteration=n,
                    x=state.x.copy(),
                    recovered=state.x - params.r * state.z_g,
                    consensus=mean_pairwise_sq_dist(state.x),
                    wall_time=time.perf_counter() - start,
                )
            )
    return Trajectory(records=records, state=state)


def baseline_run(
    schedule: NetworkSchedule,
    grad_stack,
    params: BaselineParams,
    dim: int,
    n_iters: int,
    record_every: int = 1,
    z0: np.ndarray | None = None,
    m0: np.ndarray | None = None,
) -> Trajectory:
    """Run the baseline variant. ``z0`` must have zero node-sum; both ``z0``
    and ``m0`` default to zero stacks."""
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    if record_every < 1:
        raise ValueError(f"record_every must be >= 1, got {record_every}")
    state = initial_state(schedule.m, dim)
    if z0 is not None:
        z0 = np.asarray(z0, dtype=float)
        drift = np.linalg.norm(z0.sum(axis=0))
        if drift > 1e-8 * max(1.0, float(np.linalg.norm(z0))):
            raise ValueError(f"z0 must have zero node-sum, drift {drift}")
        state = SolverState(
            z=z0.copy(), z_f=z0.copy(), z_g=None, momentum=state.momentum, x=None, n=0
        )
    if m0 is not None:
        state = SolverState(
            z=state.z, z_f=state.z_f, z_g=None,
            momentum=np.asarray(m0, dtype=float).copy(), x=None, n=0,
        )
    records: list[TrajectoryRecord] = []
    start = time.perf_counter()
    for n, want in _record_iterations(n_iters, record_every):
        lap = schedule_laplacian(schedule, n)
        try:
            state = baseline_step(state, lap, params, grad_stack)
        except NumericalDivergenceError as err:
            err.records = records
            raise
        if want:
            records.append(
                TrajectoryRecord(
                    iteration=n,
                    x=state.x.copy(),
                    recovered=state.x.copy(),
                    consensus=mean_pairwise_sq_dist(state.x),
                    wall_time=time.perf_counter() - start,
                )
            )
    return Trajectory(records=records, state=state)


def c2_bound(
    m: int, r: float, gamma: float, k: float, bounds: SpectralBounds
) -> float:
    """Value-gap constant of the convergence guarantee.

    ``k`` bounds the norm of every conjugate gradient over the dual domain
    (sqrt of the transport layer's k_bound for barycenter problems).
    """
    rg = r * gamma
    ratio = bounds.lambda_max / bounds.lambda_min_plus
    term1 = m * (1.0 + rg) * k / (math.sqrt(2.0) * gamma) * math.sqrt(ratio)
    term2 = m * (1.0 + rg) ** 2 / (4.0 * r * gamma**2)
    return term1 + term2


def iteration_estimate(
    eps: float, r: float, gamma: float, bounds: SpectralBounds, c2: float
) -> int:
    """Advisory iteration count for an eps-accurate value gap:
    ceil( 7 (lam_max/lam_min+) sqrt((1 + r gamma)/(r gamma)) ln(2 c2 / eps) ).
    """
    if eps <= 0 or c2 <= 0:
        raise ValueError("eps and c2 must be positive")
    rg = r * gamma
    ratio = bounds.lambda_max / bounds.lambda_min_plus
    value = 7.0 * ratio * math.sqrt((1.0 + rg) / rg) * math.log(2.0 * c2 / eps)
    return max(1, math.ceil(value))


def mean_pairwise_sq_dist(stack: np.ndarray) -> float:
    """Mean over node pairs of the squared distance between rows.

    Computed from the centered stack: with xc = x - mean(x), the pair sum
    equals m |xc|_F^2, which avoids the cancellation of the naive moment
    formula when rows nearly agree.
    """
    stack = np.asarray(stack, dtype=float)
    m = stack.shape[0]
    if m < 2:
        return 0.0
    centered = stack - stack.mean(axis=0)
    return float(2.0 * np.sum(centered * centered) / (m - 1))


def project_zero_sum(stack: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto stacks whose node-sum vanishes."""
    stack = np.asarray(stack, dtype=float)
    return stack - stack.mean(axis=0)
