"""Proximal operators and projections used by the primal-dual solver.

All vector routines are elementwise except :func:`project_l1_ball`, and
work on ``float64`` arrays.
"""

import numpy as np

from .exceptions import DimensionError, ParameterError

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

# Newton on the perspective cubic stops once a component moves less than
# _ROOT_ATOL (or a few ulps of its magnitude), or the cubic vanishes to
# within rounding.
_ROOT_ATOL = 1e-13
_EPS = np.finfo(float).eps
_ROOT_RTOL = 4 * _EPS
_ROOT_MAXITER = 200


def soft_threshold(x, t):
    """Elementwise ``sign(x) * max(|x| - t, 0)``."""
    if t < 0:
        raise ParameterError(f"threshold must be nonnegative, got {t}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def phi(x, tau):
    r"""Perspective of ``(s^2 + 1)/2``: :math:`|x|^2/(2\tau) + \tau/2`.

    Equals 0 at ``x = tau = 0`` and ``+inf`` when ``tau < 0`` or when
    ``tau = 0`` with ``x != 0``. Broadcasts over arrays.
    """
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    pos = tau > 0
    safe = np.where(pos, tau, 1.0)
    with np.errstate(over="ignore"):
        val = np.where(pos, 0.5 * x * (x / safe) + tau / 2.0, np.inf)
    val = np.where((tau == 0) & (x == 0), 0.0, val)
    return val[()] if val.ndim == 0 else val


def _varphi_loop(x, sigma):
    total = 0.0
    for i in range(x.shape[0]):
        s = sigma[i]
        if s > 0:
            total += 0.5 * x[i] * (x[i] / s) + 0.5 * s
        elif not (s == 0 and x[i] == 0):
            return np.inf
    return total


def varphi(x, sigma) -> float:
    """Sum of :func:`phi` over components; ``inf`` if any term is."""
    x = np.asarray(x, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if x.shape != sigma.shape:
        raise DimensionError(f"length mismatch: {x.shape} vs {sigma.shape}")
    if numba is not None and x.ndim == 1:
        return float(_varphi_loop(np.ascontiguousarray(x), np.ascontiguousarray(sigma)))
    return float(np.sum(phi(x, sigma)))


def prox_quadratic_loss(u_tilde, y, tau):
    """Prox of ``tau * 0.5 ||y - u||^2`` at ``u_tilde``."""
    u_tilde = np.asarray(u_tilde, dtype=float)
    y = np.asarray(y, dtype=float)
    if u_tilde.shape != y.shape:
        raise DimensionError(f"length mismatch: {u_tilde.shape} vs {y.shape}")
    return (u_tilde + tau * y) / (1.0 + tau)


def prox_absolute_loss(u_tilde, y, tau):
    """Prox of ``tau * ||y - u||_1`` at ``u_tilde``."""
    u_tilde = np.asarray(u_tilde, dtype=float)
    y = np.asarray(y, dtype=float)
    if u_tilde.shape != y.shape:
        raise DimensionError(f"length mismatch: {u_tilde.shape} vs {y.shape}")
    return y + soft_threshold(u_tilde - y, tau)


def _perspective_objective(v, s, vt, st, gamma):
    return 0.5 * (v - vt) ** 2 + 0.5 * (s - st) ** 2 + gamma * phi(v, s)


def _cubic_root_guess(p, c):
    """Largest real root of ``t^3 - p t^2 - c = 0`` for ``c > 0``.

    Closed form (Cardano, or the trigonometric form when three real roots
    exist); only used as a Newton starting point.
    """
    m = np.abs(p) / 3.0
    q = p**3 / 27.0 + c / 2.0
    disc = c * (p**3 / 27.0 + c / 4.0)
    sq = np.sqrt(np.maximum(disc, 0.0))
    z_one = np.cbrt(q + sq) + np.cbrt(q - sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.clip(q / m**3, -1.0, 1.0)
    z_three = 2.0 * m * np.cos(np.arccos(arg) / 3.0)
    return np.where(disc >= 0, z_one, z_three) + p / 3.0


def _perspective_numpy(vt, st, g):
    c = 0.5 * g * vt * vt
    interior = vt * vt > g * (g - 2.0 * st)
    lo = np.maximum(st - 0.5 * g, 0.0)
    hi = lo + vt * vt / (2.0 * g)

    s = np.zeros_like(vt)
    idx = np.nonzero(interior)[0]
    if idx.size:
        sti, ci, loi, hii = st[idx], c[idx], lo[idx], hi[idx]
        si = np.clip(_cubic_root_guess(sti + 0.5 * g, ci) - g, loi, hii)
        si = np.where(np.isfinite(si), si, hii)
        active = np.ones(idx.size, dtype=bool)
        for _ in range(_ROOT_MAXITER):
            a = si - sti + 0.5 * g
            b = si + g
            f = a * b * b - ci
            df = b * b + 2.0 * a * b
            loi = np.where(f < 0, si, loi)
            hii = np.where(f > 0, si, hii)
            with np.errstate(divide="ignore", invalid="ignore"):
                cand = si - f / df
            bad = ~np.isfinite(cand) | (cand < loi) | (cand > hii)
            cand = np.where(bad, 0.5 * (loi + hii), cand)
            cand = np.where(f == 0, si, cand)
            tol = np.maximum(_ROOT_ATOL, _ROOT_RTOL * np.abs(si))
            # f is only known to within its own rounding error
            noise = 8 * _EPS * (np.abs(a) * b * b + ci)
            done = (np.abs(cand - si) <= tol) | (np.abs(f) <= noise)
            # converged components are frozen so each one is iterated on its own
            si = np.where(active, cand, si)
            active &= ~done
            if not active.any():
                break
        s[idx] = si

    v = np.where(interior, s * vt / (s + g), 0.0)

    obj_int = _perspective_objective(v, s, vt, st, g)
    obj_zero = 0.5 * vt * vt + 0.5 * st * st
    use_zero = ~(obj_int < obj_zero)
    v = np.where(use_zero, 0.0, v)
    s = np.where(use_zero, 0.0, s)
    return v, s


def _perspective_loop(vt, st, g, v_out, s_out):
    # scalar twin of _perspective_numpy, compiled with numba when available
    eps = 2.220446049250313e-16
    for i in range(vt.shape[0]):
        x = vt[i]
        t = st[i]
        x2 = x * x
        v_out[i] = 0.0
        s_out[i] = 0.0
        if not x2 > g * (g - 2.0 * t):
            continue
        c = 0.5 * g * x2
        lo = max(t - 0.5 * g, 0.0)
        hi = lo + x2 / (2.0 * g)

        p = t + 0.5 * g
        m = abs(p) / 3.0
        q = p * p * p / 27.0 + c / 2.0
        disc = c * (p * p * p / 27.0 + c / 4.0)
        if disc >= 0:
            sq = np.sqrt(disc)
            root = np.cbrt(q + sq) + np.cbrt(q - sq)
        else:
            arg = min(max(q / (m * m * m), -1.0), 1.0)
            root = 2.0 * m * np.cos(np.arccos(arg) / 3.0)
        s = root + p / 3.0 - g
        if not np.isfinite(s):
            s = hi
        s = min(max(s, lo), hi)

        for _ in range(200):
            a = s - t + 0.5 * g
            b = s + g
            f = a * b * b - c
            df = b * b + 2.0 * a * b
            if f < 0:
                lo = s
            elif f > 0:
                hi = s
            cand = s - f / df if df != 0 else np.nan
            if not (np.isfinite(cand) and lo <= cand <= hi):
                cand = 0.5 * (lo + hi)
            if f == 0:
                cand = s
            tol = max(1e-13, 4 * eps * abs(s))
            noise = 8 * eps * (abs(a) * b * b + c)
            done = abs(cand - s) <= tol or abs(f) <= noise
            s = cand
            if done:
                break

        v = s * x / (s + g)
        obj_int = 0.5 * (v - x) ** 2 + 0.5 * (s - t) ** 2 + g * (v * v / (2.0 * s) + 0.5 * s)
        if obj_int < 0.5 * x2 + 0.5 * t * t:
            v_out[i] = v
            s_out[i] = s


if numba is not None:
    _perspective_loop = numba.njit(cache=True)(_perspective_loop)
    _varphi_loop = numba.njit(cache=True)(_varphi_loop)


def prox_perspective_vector(v_tilde, sigma_tilde, gamma, backend=None):
    r"""Joint prox of ``gamma * varphi`` at ``(v_tilde, sigma_tilde)``.

    Solves, independently per component,

    .. math:: \min_{v,\ \sigma \ge 0}\ \tfrac12 (v - \tilde v)^2
              + \tfrac12 (\sigma - \tilde\sigma)^2 + \gamma\,\phi(v, \sigma).

    An interior minimizer has ``v = sigma * v_tilde / (sigma + gamma)`` with
    ``sigma`` the positive root of

    .. math:: (\sigma - \tilde\sigma + \gamma/2)(\sigma + \gamma)^2
              = \gamma \tilde v^2 / 2 .

    The cubic is increasing and convex on the bracket
    ``[max(0, st - g/2), max(0, st - g/2) + vt^2/(2g)]``. The closed-form
    root seeds a Newton polish; any Newton step leaving the (shrinking)
    bracket is replaced by bisection. The root exists iff
    ``vt^2 > g (g - 2 st)``; otherwise, and whenever it scores worse, the
    boundary point ``(0, 0)`` is returned.

    Components never interact, so results do not depend on how the input
    is partitioned. ``backend`` selects the compiled scalar loop (``"numba"``,
    the default when numba is installed) or the vectorized ``"numpy"`` path.
    """
    vt = np.asarray(v_tilde, dtype=float)
    st = np.asarray(sigma_tilde, dtype=float)
    if vt.shape != st.shape or vt.ndim != 1:
        raise DimensionError(f"expected two vectors of equal length, got {vt.shape} and {st.shape}")
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if backend is None:
        backend = "numba" if numba is not None else "numpy"
    if backend == "numpy":
        return _perspective_numpy(vt, st, float(gamma))
    if backend != "numba" or numba is None:
        raise ParameterError(f"unavailable backend {backend!r}")
    v = np.empty_like(vt)
    s = np.empty_like(vt)
    _perspective_loop(np.ascontiguousarray(vt), np.ascontiguousarray(st), float(gamma), v, s)
    return v, s


def prox_perspective(v_tilde: float, sigma_tilde: float, gamma: float):
    """Scalar form of :func:`prox_perspective_vector`; returns ``(v, sigma)``."""
    v, s = prox_perspective_vector(
        np.array([v_tilde], dtype=float), np.array([sigma_tilde], dtype=float), gamma
    )
    return float(v[0]), float(s[0])


def project_l1_ball(eta, alpha):
    """Euclidean projection of ``eta`` onto ``{z : ||z||_1 <= alpha}``.

    Sort-based rule: with ``rho`` the magnitudes in descending order, ``T``
    the largest ``t`` such that ``(sum(rho[:t]) - alpha) / t < rho[t-1]`` and
    ``theta = (sum(rho[:T]) - alpha) / T``, the result is
    ``sign(eta) * max(|eta| - theta, 0)``. ``alpha = inf`` is the identity,
    and so is any non-finite input (left for the caller to detect).
    """
    eta = np.asarray(eta, dtype=float)
    if not alpha >= 0:
        raise ParameterError(f"ball radius must be nonnegative, got {alpha}")
    mag = np.abs(eta)
    total = mag.sum()
    if np.isinf(alpha) or total <= alpha or not np.isfinite(total):
        return eta.copy()
    if alpha == 0:
        return np.zeros_like(eta)
    rho = np.sort(mag)[::-1]
    t = np.arange(1, rho.size + 1)
    theta = (np.cumsum(rho) - alpha) / t
    # t = 1 always qualifies in exact arithmetic; rounding can hide it
    hits = np.nonzero(theta < rho)[0]
    T = hits[-1] if hits.size else 0
    return np.sign(eta) * np.maximum(mag - theta[T], 0.0)
