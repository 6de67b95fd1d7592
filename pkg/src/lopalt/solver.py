"""Adaptive block-sparse regularization under a linear transform.

Solves

    min_x  f(L x) + lam * Psi_alpha(R x),
    Psi_alpha(z) = min { varphi(z, sigma) : ||D sigma||_1 <= alpha },

by splitting it into ``min G(w) s.t. H w = 0`` over ``w = (x, sigma, u, v,
eta)`` and running the Loris-Verhoeven primal-dual iteration on it.
"""

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import prox
from .exceptions import DimensionError, DivergenceError, InvertibilityError, ParameterError
from .linops import (
    Diff1D,
    IdentityOperator,
    LinearOperator,
    MatrixOperator,
    NormEstimate,
    StackedConstraintOperator,
    estimate_operator_norm,
    sigma_difference,
)

logger = logging.getLogger(__name__)

# Relative slack allowed when testing tau1 * tau2 * ||H||^2 <= 1.
CONDITION_SLACK = 1e-6
# Factor applied to mu1, mu2 while the convergence check fails.
MU_BACKTRACK = 0.9
# Condition number above which R^T R is treated as singular.
MAX_CONDITION = 1e12


class Loss(str, enum.Enum):
    QUADRATIC = "quadratic"
    ABSOLUTE = "absolute"


@dataclass
class LopAltProblem:
    """Observation, operators, loss and hyperparameters of one problem.

    ``D_sigma`` acts on the latent vector, which lives in the feature space of
    ``R``; when omitted it is derived from ``R`` by :func:`sigma_difference`.
    ``alpha = inf`` drops the constraint on it entirely.
    """

    y: np.ndarray
    L: LinearOperator
    R: LinearOperator
    D_sigma: Optional[LinearOperator] = None
    loss: Loss = Loss.QUADRATIC
    lam: float = 1.0
    alpha: float = math.inf

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.loss = Loss(self.loss)
        if self.D_sigma is None:
            self.D_sigma = sigma_difference(self.R)
        if self.y.size != self.L.rows:
            raise DimensionError(f"y has length {self.y.size} but L has {self.L.rows} rows")
        if self.L.cols != self.R.cols:
            raise DimensionError(f"L and R act on different sizes ({self.L.cols} vs {self.R.cols})")
        if self.D_sigma.cols != self.R.rows:
            raise DimensionError(
                f"D_sigma acts on {self.D_sigma.cols} entries, feature space has {self.R.rows}"
            )
        if not self.lam >= 0:
            raise ParameterError(f"lam must be nonnegative, got {self.lam}")
        if not self.alpha >= 0:
            raise ParameterError(f"alpha must be nonnegative, got {self.alpha}")

    @property
    def n(self) -> int:
        return self.L.cols

    def loss_value(self, u) -> float:
        if self.loss is Loss.QUADRATIC:
            return 0.5 * _sqnorm(self.y - u)
        return float(np.sum(np.abs(self.y - u)))

    def prox_loss(self, u_tilde, tau):
        if self.loss is Loss.QUADRATIC:
            return prox.prox_quadratic_loss(u_tilde, self.y, tau)
        return prox.prox_absolute_loss(u_tilde, self.y, tau)

    def objective(self, x, sigma) -> float:
        """``f(Lx) + lam * varphi(Rx, sigma)``; ``inf`` outside the domain."""
        penalty = prox.varphi(self.R.apply(x), sigma) if self.lam > 0 else 0.0
        return self.loss_value(self.L.apply(x)) + self.lam * penalty

    def constraint_operator(self, mu1, mu2, mu3) -> StackedConstraintOperator:
        return StackedConstraintOperator(self.L, self.R, self.D_sigma, mu1, mu2, mu3)


def denoising_problem(y, lam, alpha=math.inf, R=None, loss=Loss.QUADRATIC) -> LopAltProblem:
    """``L = I`` problem; ``R`` defaults to the 1-D difference operator."""
    y = np.asarray(y, dtype=float).ravel()
    if R is None:
        R = Diff1D(y.size)
    return LopAltProblem(y, IdentityOperator(y.size), R, loss=loss, lam=lam, alpha=alpha)


@dataclass
class SolverParams:
    tau1: float
    tau2: float
    mu1: float
    mu2: float
    mu3: float
    max_iter: int = 20000
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        for name in ("tau1", "tau2", "mu1", "mu2", "mu3"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be at least 1")


@dataclass
class SolverState:
    """Primal blocks ``(x, sigma, u, v, eta)``, duals ``r*`` and increments ``delta_r*``."""

    x: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    v: np.ndarray
    eta: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    delta_r1: np.ndarray
    delta_r2: np.ndarray
    delta_r3: np.ndarray

    BLOCKS = ("x", "sigma", "u", "v", "eta", "r1", "r2", "r3", "delta_r1", "delta_r2", "delta_r3")

    @classmethod
    def initial(cls, problem: LopAltProblem, params: SolverParams, x=None, sigma=None, u=None,
                v=None, eta=None, r1=None, r2=None, r3=None) -> "SolverState":
        """State with the given blocks and zeros elsewhere (``sigma`` defaults to ones).

        The increments are set to ``H w`` of the starting point, which is what
        the iteration expects of a state it produced itself.
        """
        J, N = problem.L.shape
        K, M = problem.R.rows, problem.D_sigma.rows

        def vec(a, size, fill=0.0):
            if a is None:
                return np.full(size, fill)
            a = np.array(a, dtype=float).ravel()
            if a.size != size:
                raise DimensionError(f"initial block has length {a.size}, expected {size}")
            return a

        x, sigma = vec(x, N), vec(sigma, K, 1.0)
        u, v, eta = vec(u, J), vec(v, K), vec(eta, M)
        r1, r2, r3 = vec(r1, J), vec(r2, K), vec(r3, M)
        d1, d2, d3 = _increments(problem, params, x, sigma, u, v, eta)
        return cls(x, sigma, u, v, eta, r1, r2, r3, d1, d2, d3)

    @classmethod
    def random(cls, problem, params, seed, scale=1.0) -> "SolverState":
        """Random start (``sigma >= 0``) for initialization-independence checks."""
        rng = np.random.default_rng(seed)
        J, N = problem.L.shape
        K, M = problem.R.rows, problem.D_sigma.rows
        g = lambda size: scale * rng.standard_normal(size)  # noqa: E731
        return cls.initial(problem, params, x=g(N), sigma=np.abs(g(K)), u=g(J), v=g(K),
                           eta=g(M), r1=g(J), r2=g(K), r3=g(M))

    def copy(self) -> "SolverState":
        return SolverState(*(getattr(self, b).copy() for b in self.BLOCKS))

    def primal(self) -> np.ndarray:
        return np.concatenate([self.x, self.sigma, self.u, self.v, self.eta])

    def dual(self) -> np.ndarray:
        return np.concatenate([self.r1, self.r2, self.r3])


@dataclass
class SolveReport:
    x_hat: np.ndarray
    sigma_hat: np.ndarray
    objective_trace: np.ndarray
    residual_trace: np.ndarray  # (iterations, 3): ||Lx-u||, ||Rx-v||, ||D sigma - eta||
    iterations: int
    converged: bool
    reason: str
    state: SolverState = field(repr=False)
    params: SolverParams = field(repr=False)

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1]) if len(self.objective_trace) else math.nan


def _increments(problem, params, x, sigma, u, v, eta):
    return (
        params.mu1 * (problem.L.apply(x) - u),
        params.mu2 * (problem.R.apply(x) - v),
        params.mu3 * (problem.D_sigma.apply(sigma) - eta),
    )


def derive_step_params(L_norm, R_norm, D_norm, tau1, tau2, **kwargs) -> SolverParams:
    """Scaling factors ``mu1, mu2, mu3`` for given step sizes.

    ``mu3`` saturates its (exact) bound ``mu3^2 (||D||^2 + 1) <= 1/(tau1 tau2)``;
    ``mu1, mu2`` use the heuristic bounds with ``2 ||.||^2 + 1``, which do not
    guarantee convergence on their own. Validate the result with
    :func:`check_convergence_condition`.
    """
    if not (tau1 > 0 and tau2 > 0):
        raise ParameterError(f"step sizes must be positive, got {tau1}, {tau2}")
    if min(L_norm, R_norm, D_norm) < 0:
        raise ParameterError("operator norms must be nonnegative")
    scale = 1.0 / math.sqrt(tau1 * tau2)
    return SolverParams(
        tau1=tau1,
        tau2=tau2,
        mu1=scale / math.sqrt(2.0 * L_norm**2 + 1.0),
        mu2=scale / math.sqrt(2.0 * R_norm**2 + 1.0),
        mu3=scale / math.sqrt(D_norm**2 + 1.0),
        **kwargs,
    )


def check_convergence_condition(problem: LopAltProblem, params: SolverParams,
                                max_iter=20000, tol=1e-10, use_exact=True):
    """Test ``tau1 tau2 ||H||^2 <= 1`` for the assembled constraint operator.

    ``||H||`` comes from its closed form when one is known (``L = I`` with
    difference or identity ``R``) and ``use_exact`` is set, otherwise from
    power iteration. Returns ``(ok, estimate)`` where ``estimate`` is a
    :class:`~lopalt.linops.NormEstimate` (check ``estimate.converged``).
    """
    H = problem.constraint_operator(params.mu1, params.mu2, params.mu3)
    est = estimate_operator_norm(H, tol=tol, max_iter=max_iter, seed=params.seed,
                                 use_exact=use_exact)
    if not est.converged:
        logger.warning("power iteration on H did not converge (estimate %.6g)", est.value)
    ok = params.tau1 * params.tau2 * est.value**2 <= 1.0 + CONDITION_SLACK
    return ok, est


def default_params(problem: LopAltProblem, max_iter=20000, tol=1e-6, seed=0,
                   margin=0.99, balance=1.0) -> SolverParams:
    """Step parameters satisfying the convergence condition with a safety margin.

    The ``mu``'s are derived for ``tau1 = tau2 = 1`` and backtracked (``mu1``,
    ``mu2`` by 0.9) until the condition holds; then ``tau1 = balance * t`` and
    ``tau2 = t / balance`` with ``t = margin / ||H||``. Only the product
    ``tau1 * tau2`` enters the condition, so ``balance`` trades primal against
    dual step length without affecting convergence, only its speed.
    """
    if not balance > 0:
        raise ParameterError(f"balance must be positive, got {balance}")
    norms = [estimate_operator_norm(op, seed=seed).value
             for op in (problem.L, problem.R, problem.D_sigma)]
    params = derive_step_params(*norms, 1.0, 1.0, max_iter=max_iter, tol=tol, seed=seed)
    for _ in range(200):
        ok, est = check_convergence_condition(problem, params)
        if ok:
            break
        params = replace(params, mu1=params.mu1 * MU_BACKTRACK, mu2=params.mu2 * MU_BACKTRACK)
    else:
        raise ParameterError("could not satisfy the convergence condition by backtracking")
    t = margin / est.value
    return replace(params, tau1=t * balance, tau2=t / balance)


def _check_finite(state, iteration):
    for name in SolverState.BLOCKS:
        if not np.isfinite(getattr(state, name).sum()):
            raise DivergenceError(name, iteration)


def _sqnorm(a) -> float:
    return float(np.dot(a, a))


def lv_iterate(state: SolverState, problem: LopAltProblem, params: SolverParams,
               freeze_x=False, iteration=0, check_finite=True, printed=False) -> SolverState:
    """One Loris-Verhoeven pass on the split problem.

    With ``a = r - tau2 * delta_r`` (``delta_r = H w`` of the current point):

    * gradient-like step ``w~ = w + tau1 H^T a`` on all five primal blocks,
    * ``x`` passes through, ``u`` takes the loss prox, ``(v, sigma)`` the joint
      perspective prox and ``eta`` the l1-ball projection (identity for
      ``alpha = inf``),
    * ``delta_r <- H w_new`` and ``r <- r - tau2 * delta_r``.

    ``freeze_x`` keeps ``x`` fixed (used to evaluate the penalty alone).
    ``check_finite=False`` skips the per-block divergence scan; :func:`solve`
    does its own cheaper check.

    ``printed=True`` runs the variant with ``+`` in the ``u``, ``v``, ``eta``
    steps and ``delta_r`` taken from the incoming point rather than the new
    one. It is kept for comparison only: it is not a descent step for ``H``
    and diverges in practice.
    """
    t1, t2 = params.tau1, params.tau2
    m1, m2, m3 = params.mu1, params.mu2, params.mu3
    L, R, D = problem.L, problem.R, problem.D_sigma

    a1 = state.r1 - t2 * state.delta_r1
    a2 = state.r2 - t2 * state.delta_r2
    a3 = state.r3 - t2 * state.delta_r3

    if freeze_x:
        x = state.x.copy()
    else:
        x = state.x + t1 * (m1 * L.adjoint_apply(a1) + m2 * R.adjoint_apply(a2))
    sigma_t = state.sigma + t1 * m3 * D.adjoint_apply(a3)
    sign = 1.0 if printed else -1.0
    u_t = state.u + sign * t1 * m1 * a1
    v_t = state.v + sign * t1 * m2 * a2
    eta_t = state.eta + sign * t1 * m3 * a3

    u = problem.prox_loss(u_t, t1)
    if problem.lam > 0:
        v, sigma = prox.prox_perspective_vector(v_t, sigma_t, t1 * problem.lam)
    else:
        v, sigma = v_t, np.maximum(sigma_t, 0.0)
    eta = prox.project_l1_ball(eta_t, problem.alpha)

    if printed:
        d1, d2, d3 = _increments(problem, params, state.x, state.sigma, state.u, state.v,
                                 state.eta)
    else:
        d1 = m1 * (L.apply(x) - u)
        d2 = m2 * (R.apply(x) - v)
        d3 = m3 * (D.apply(sigma) - eta)
    new = SolverState(x, sigma, u, v, eta,
                      state.r1 - t2 * d1, state.r2 - t2 * d2, state.r3 - t2 * d3,
                      d1, d2, d3)
    if check_finite:
        _check_finite(new, iteration)
    return new


def solve(problem: LopAltProblem, params: Optional[SolverParams] = None,
          init: Optional[SolverState] = None, freeze_x=False, check=True) -> SolveReport:
    """Run the iteration until the split is consistent and the iterate settles.

    Stops when every constraint residual (``||Lx-u||``, ``||Rx-v||``,
    ``||D sigma - eta||``) and the primal step ``||w_new - w||`` are at most
    ``params.tol * max(||y||, 1)``, or after ``params.max_iter`` passes.
    ``objective_trace`` records ``f(u) + lam * varphi(v, sigma)`` per pass,
    which equals the problem objective at a consistent point.

    The default start is zero everywhere except ``sigma = 1``. Raises
    :class:`DivergenceError` if any block becomes non-finite.
    """
    if params is None:
        params = default_params(problem)
    elif check:
        ok, est = check_convergence_condition(problem, params)
        if not ok:
            warnings.warn(
                f"tau1*tau2*||H||^2 = {params.tau1 * params.tau2 * est.value**2:.6g} > 1; "
                "convergence is not guaranteed",
                RuntimeWarning,
                stacklevel=2,
            )
    state = SolverState.initial(problem, params) if init is None else init.copy()

    threshold = params.tol * max(float(np.linalg.norm(problem.y)), 1.0)
    inv_mu = np.array([1.0 / params.mu1, 1.0 / params.mu2, 1.0 / params.mu3])
    objective = np.empty(params.max_iter)
    residuals = np.empty((params.max_iter, 3))
    converged = False
    it = 0
    while it < params.max_iter:
        new = lv_iterate(state, problem, params, freeze_x=freeze_x, iteration=it,
                         check_finite=False)
        res = inv_mu * np.sqrt([_sqnorm(new.delta_r1), _sqnorm(new.delta_r2),
                                _sqnorm(new.delta_r3)])
        step = math.sqrt(sum(_sqnorm(getattr(new, b) - getattr(state, b))
                             for b in ("x", "sigma", "u", "v", "eta")))
        if not (math.isfinite(step) and np.isfinite(res).all() and math.isfinite(new.r1.sum() + new.r2.sum() + new.r3.sum())):
            _check_finite(new, it)
        residuals[it] = res
        penalty = prox.varphi(new.v, new.sigma) if problem.lam > 0 else 0.0
        objective[it] = problem.loss_value(new.u) + problem.lam * penalty
        state = new
        it += 1
        if res.max() <= threshold and step <= threshold:
            converged = True
            break

    return SolveReport(
        x_hat=state.x.copy(),
        sigma_hat=state.sigma.copy(),
        objective_trace=objective[:it].copy(),
        residual_trace=residuals[:it].copy(),
        iterations=it,
        converged=converged,
        reason="converged" if converged else "max_iter",
        state=state,
        params=params,
    )


def solve_lop(y, L, lam, alpha=math.inf, D=None, loss=Loss.QUADRATIC, params=None) -> SolveReport:
    """Block-sparse regularization of ``x`` itself (``R = I``).

    Builds the ``R = I`` instance and goes through :func:`solve` unchanged.
    """
    problem = LopAltProblem(y, L, IdentityOperator(L.cols), D_sigma=D, loss=loss, lam=lam,
                            alpha=alpha)
    return solve(problem, params)


def evaluate_penalty(z, alpha, D_sigma=None, tol=1e-9, max_iter=200000) -> float:
    """``Psi_alpha(z) = min { varphi(z, sigma) : ||D sigma||_1 <= alpha }``.

    ``alpha = inf`` gives ``||z||_1`` exactly. Otherwise the solver runs with
    ``x`` frozen at ``z`` (``L = R = I``) so only ``sigma`` and the auxiliary
    blocks move; accuracy follows ``tol``.
    """
    z = np.asarray(z, dtype=float).ravel()
    if not alpha >= 0:
        raise ParameterError(f"alpha must be nonnegative, got {alpha}")
    if math.isinf(alpha):
        return float(np.sum(np.abs(z)))
    if not np.any(z):
        return 0.0
    ident = IdentityOperator(z.size)
    if D_sigma is None:
        D_sigma = Diff1D(z.size)
    problem = LopAltProblem(z, ident, ident, D_sigma=D_sigma, lam=1.0, alpha=alpha)
    params = default_params(problem, max_iter=max_iter, tol=tol)
    init = SolverState.initial(problem, params, x=z, u=z, v=z,
                               sigma=np.full(z.size, np.linalg.norm(z) / math.sqrt(z.size)))
    report = solve(problem, params, init=init, freeze_x=True, check=False)
    if not report.converged:
        logger.warning("penalty evaluation stopped after %d iterations", report.iterations)
    return prox.varphi(report.state.v, report.sigma_hat)


def tv_solve(y, R=None, lam=1.0, params=None, loss=Loss.QUADRATIC) -> SolveReport:
    """``min 0.5 ||y - x||^2 + lam ||R x||_1`` as the ``alpha = inf`` case of :func:`solve`."""
    problem = denoising_problem(y, lam=lam, alpha=math.inf, R=R, loss=loss)
    return solve(problem, params)


def taut_string_tv_1d(y, lam) -> np.ndarray:
    """Exact minimizer of ``0.5 ||y - x||^2 + lam * sum |x[k+1] - x[k]|``.

    Direct taut-string method (Condat, 2013): the string is pulled through a
    tube of half-width ``lam`` around the running sum of ``y``, tracking the
    lowest and highest admissible levels of the current segment and emitting
    a segment whenever they can no longer be reconciled. Linear in practice.
    """
    y = np.asarray(y, dtype=float).ravel()
    if lam < 0:
        raise ParameterError(f"lam must be nonnegative, got {lam}")
    n = y.size
    if n == 0:
        return y.copy()
    if lam == 0 or n == 1:
        return y.copy()
    x = np.empty(n)
    k = k0 = kminus = kplus = 0
    vmin, vmax = y[0] - lam, y[0] + lam
    umin, umax = lam, -lam
    twolam = 2.0 * lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                x[k0:kminus + 1] = vmin
                k = k0 = kminus = kminus + 1
                vmin = y[k]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                x[k0:kplus + 1] = vmax
                k = k0 = kplus = kplus + 1
                vmax = y[k]
                umax = -lam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                x[k0:k + 1] = vmin
                return x
        umin += y[k + 1] - vmin
        if umin < -lam:
            x[k0:kminus + 1] = vmin
            k = k0 = kminus = kplus = kminus + 1
            vmin = y[k]
            vmax = vmin + twolam
            umin, umax = lam, -lam
            continue
        umax += y[k + 1] - vmax
        if umax > lam:
            x[k0:kplus + 1] = vmax
            k = k0 = kminus = kplus = kplus + 1
            vmax = y[k]
            vmin = vmax - twolam
            umin, umax = lam, -lam
            continue
        k += 1
        if umin >= lam:
            kminus = k
            vmin += (umin - lam) / (kminus - k0 + 1)
            umin = lam
        if umax <= -lam:
            kplus = k
            vmax += (umax + lam) / (kplus - k0 + 1)
            umax = -lam


def reduce_invertible(problem: LopAltProblem):
    """Rewrite a problem with invertible ``R`` in terms of ``z = R x``.

    Returns ``(reduced, back)`` where ``reduced`` has operator
    ``L (R^T R)^{-1} R^T`` and ``R = I`` (the latent difference operator is
    kept), and ``back`` maps ``z`` to ``x``. Raises
    :class:`InvertibilityError` when ``R^T R`` is singular, e.g. for
    difference operators.
    """
    R = problem.R.to_dense()
    if R.shape[0] != R.shape[1]:
        raise InvertibilityError(f"R must be square to substitute z = Rx, got {R.shape}")
    gram = R.T @ R
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise InvertibilityError(f"R^T R is singular (condition number {cond:.3g})")
    back = np.linalg.solve(gram, R.T)
    L_tilde = problem.L.to_dense() @ back
    reduced = LopAltProblem(problem.y, MatrixOperator(L_tilde), IdentityOperator(R.shape[0]),
                            D_sigma=problem.D_sigma, loss=problem.loss, lam=problem.lam,
                            alpha=problem.alpha)
    return reduced, MatrixOperator(back)
