"""Matrix-free linear operators over real vectors.

Every operator maps flat ``float64`` vectors of length ``cols`` to vectors of
length ``rows`` and knows its adjoint (the transpose, since only the real
field is supported). Images are vectorized in row-major (C) order.
"""

import logging
import warnings
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import DimensionError

logger = logging.getLogger(__name__)


class LinearOperator:
    """Base class for a linear map ``R^cols -> R^rows``.

    Subclasses implement ``_matvec`` and ``_rmatvec``; the public
    ``apply``/``adjoint_apply`` wrappers validate sizes and always return a
    freshly allocated array.
    """

    def __init__(self, rows: int, cols: int):
        if rows < 1 or cols < 1:
            raise DimensionError(f"operator dimensions must be positive, got {rows}x{cols}")
        self._shape = (int(rows), int(cols))

    @property
    def shape(self):
        return self._shape

    @property
    def rows(self) -> int:
        return self._shape[0]

    @property
    def cols(self) -> int:
        return self._shape[1]

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.cols,):
            raise DimensionError(f"{type(self).__name__} expects length {self.cols}, got {x.shape}")
        return self._matvec(x)

    def adjoint_apply(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.rows,):
            raise DimensionError(
                f"{type(self).__name__} adjoint expects length {self.rows}, got {y.shape}"
            )
        return self._rmatvec(y)

    def _matvec(self, x):
        raise NotImplementedError

    def _rmatvec(self, y):
        raise NotImplementedError

    def exact_norm(self):
        """Closed-form spectral norm, or ``None`` when none is known."""
        return None

    @property
    def T(self) -> "LinearOperator":
        return _AdjointOperator(self)

    def __matmul__(self, x):
        return self.apply(x)

    def __mul__(self, c):
        if np.isscalar(c):
            return ScaledOperator(self, float(c))
        return NotImplemented

    __rmul__ = __mul__

    def to_dense(self) -> np.ndarray:
        """Materialize the operator column by column (small sizes only)."""
        out = np.empty(self.shape)
        e = np.zeros(self.cols)
        for j in range(self.cols):
            e[j] = 1.0
            out[:, j] = self._matvec(e)
            e[j] = 0.0
        return out

    def __repr__(self):
        return f"{type(self).__name__}({self.rows}x{self.cols})"


class _AdjointOperator(LinearOperator):
    def __init__(self, op):
        super().__init__(op.cols, op.rows)
        self.op = op

    def _matvec(self, x):
        return self.op._rmatvec(x)

    def _rmatvec(self, y):
        return self.op._matvec(y)

    def exact_norm(self):
        return self.op.exact_norm()

    @property
    def T(self):
        return self.op


class MatrixOperator(LinearOperator):
    """Dense matrix wrapped as an operator."""

    def __init__(self, matrix):
        A = np.array(matrix, dtype=float)
        if A.ndim != 2:
            raise DimensionError("matrix must be 2-D")
        super().__init__(*A.shape)
        self.matrix = A
        self.matrix.setflags(write=False)

    def _matvec(self, x):
        return self.matrix @ x

    def _rmatvec(self, y):
        return self.matrix.T @ y

    def to_dense(self):
        return self.matrix.copy()


class IdentityOperator(LinearOperator):
    def __init__(self, n: int):
        super().__init__(n, n)

    def _matvec(self, x):
        return x.copy()

    _rmatvec = _matvec

    def exact_norm(self):
        return 1.0


class ScaledOperator(LinearOperator):
    def __init__(self, op: LinearOperator, scale: float):
        super().__init__(op.rows, op.cols)
        self.op = op
        self.scale = scale

    def _matvec(self, x):
        return self.scale * self.op._matvec(x)

    def _rmatvec(self, y):
        return self.scale * self.op._rmatvec(y)

    def exact_norm(self):
        inner = self.op.exact_norm()
        return None if inner is None else abs(self.scale) * inner


class Diff1D(LinearOperator):
    """Forward differences ``(Dx)_k = x_{k+1} - x_k``, shape ``(n-1) x n``."""

    def __init__(self, n: int):
        if n < 2:
            raise DimensionError(f"difference operator needs n >= 2, got {n}")
        super().__init__(n - 1, n)
        self.n = n

    def _matvec(self, x):
        return np.diff(x)

    def _rmatvec(self, y):
        out = np.empty(self.n)
        out[0] = -y[0]
        out[1:-1] = y[:-1] - y[1:]
        out[-1] = y[-1]
        return out

    def exact_norm(self):
        # eigenvalues of D D^T are 4 sin^2(k pi / 2n), k = 1..n-1
        n = self.n
        return 2.0 * np.sin((n - 1) * np.pi / (2 * n))


class Diff2D(LinearOperator):
    """Image gradient on an ``h x w`` grid.

    Vertical differences (within columns, ``(h-1) x w`` values) are stacked
    above horizontal differences (within rows, ``h x (w-1)`` values), each
    field flattened row-major.
    """

    def __init__(self, h: int, w: int):
        if h < 2 or w < 2:
            raise DimensionError(f"2-D difference operator needs h, w >= 2, got {h}x{w}")
        self.h, self.w = h, w
        self.n_vertical = (h - 1) * w
        super().__init__(self.n_vertical + h * (w - 1), h * w)

    def _matvec(self, x):
        img = x.reshape(self.h, self.w)
        return np.concatenate([np.diff(img, axis=0).ravel(), np.diff(img, axis=1).ravel()])

    def _rmatvec(self, y):
        h, w = self.h, self.w
        pv = y[: self.n_vertical].reshape(h - 1, w)
        ph = y[self.n_vertical:].reshape(h, w - 1)
        out = np.zeros((h, w))
        out[:-1, :] -= pv
        out[1:, :] += pv
        out[:, :-1] -= ph
        out[:, 1:] += ph
        return out.ravel()

    def exact_norm(self):
        # D^T D is a Kronecker sum of the two 1-D Laplacians
        sv = 2.0 * np.sin((self.h - 1) * np.pi / (2 * self.h))
        sh = 2.0 * np.sin((self.w - 1) * np.pi / (2 * self.w))
        return float(np.sqrt(sv**2 + sh**2))


class BlockDiagonalOperator(LinearOperator):
    """``diag(A_1, ..., A_m)`` acting on concatenated input blocks."""

    def __init__(self, blocks: Sequence[LinearOperator]):
        if not blocks:
            raise DimensionError("need at least one block")
        self.blocks = tuple(blocks)
        self._row_splits = np.cumsum([b.rows for b in self.blocks])[:-1]
        self._col_splits = np.cumsum([b.cols for b in self.blocks])[:-1]
        super().__init__(sum(b.rows for b in self.blocks), sum(b.cols for b in self.blocks))

    def _matvec(self, x):
        parts = np.split(x, self._col_splits)
        return np.concatenate([b._matvec(p) for b, p in zip(self.blocks, parts)])

    def _rmatvec(self, y):
        parts = np.split(y, self._row_splits)
        return np.concatenate([b._rmatvec(p) for b, p in zip(self.blocks, parts)])

    def exact_norm(self):
        norms = [b.exact_norm() for b in self.blocks]
        if any(n is None for n in norms):
            return None
        return max(norms)


class StackedConstraintOperator(LinearOperator):
    """Constraint matrix tying the auxiliary variables to the primal ones.

    Acts on ``w = (x, sigma, u, v, eta)`` as::

        H w = (mu1 (L x - u), mu2 (R x - v), mu3 (D sigma - eta))

    so ``H w = 0`` exactly when ``u = Lx``, ``v = Rx`` and ``eta = D sigma``.
    """

    def __init__(self, L, R, D, mu1, mu2, mu3):
        if L.cols != R.cols:
            raise DimensionError(f"L and R must share their input size ({L.cols} != {R.cols})")
        if D.cols != R.rows:
            raise DimensionError(f"D must act on the feature space of size {R.rows}, got {D.cols}")
        self.L, self.R, self.D = L, R, D
        self.mu1, self.mu2, self.mu3 = float(mu1), float(mu2), float(mu3)
        self.sizes = (L.cols, D.cols, L.rows, R.rows, D.rows)  # x, sigma, u, v, eta
        self._splits = np.cumsum(self.sizes)[:-1]
        super().__init__(L.rows + R.rows + D.rows, sum(self.sizes))

    def split(self, w):
        """Split a stacked primal vector into ``(x, sigma, u, v, eta)``."""
        return tuple(np.split(np.asarray(w, dtype=float), self._splits))

    def split_dual(self, r):
        """Split a stacked dual vector into ``(r1, r2, r3)``."""
        return tuple(np.split(np.asarray(r, dtype=float), [self.L.rows, self.L.rows + self.R.rows]))

    def _matvec(self, w):
        x, sigma, u, v, eta = self.split(w)
        return np.concatenate([
            self.mu1 * (self.L._matvec(x) - u),
            self.mu2 * (self.R._matvec(x) - v),
            self.mu3 * (self.D._matvec(sigma) - eta),
        ])

    def _rmatvec(self, r):
        r1, r2, r3 = self.split_dual(r)
        return np.concatenate([
            self.mu1 * self.L._rmatvec(r1) + self.mu2 * self.R._rmatvec(r2),
            self.mu3 * self.D._rmatvec(r3),
            -self.mu1 * r1,
            -self.mu2 * r2,
            -self.mu3 * r3,
        ])

    def exact_norm(self):
        # H H^* is block diagonal: mu3^2 (D D^T + I) for the last block, and for
        # L = I the first two blocks split along the singular values s of R into
        # 2x2 matrices [[2 mu1^2, mu1 mu2 s], [mu1 mu2 s, mu2^2 (s^2 + 1)]]
        # whose top eigenvalue grows with s.
        if not isinstance(self.L, IdentityOperator):
            return None
        r_norm, d_norm = self.R.exact_norm(), self.D.exact_norm()
        if r_norm is None or d_norm is None:
            return None
        m1, m2, m3 = self.mu1, self.mu2, self.mu3
        a = 2.0 * m1 * m1
        c = m2 * m2 * (r_norm**2 + 1.0)
        b = m1 * m2 * r_norm
        top = 0.5 * (a + c + np.sqrt((a - c) ** 2 + 4.0 * b * b))
        return float(np.sqrt(max(top, m3 * m3 * (d_norm**2 + 1.0))))


class NormEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def estimate_operator_norm(op, tol=1e-10, max_iter=5000, seed=0, use_exact=True) -> NormEstimate:
    """Largest singular value of ``op``.

    Uses the closed form when the operator provides one (and ``use_exact``),
    otherwise power iteration on ``op^T op`` from a seeded Gaussian start.
    The iteration stops once the estimate changes by less than ``tol``
    relative; if ``max_iter`` is exhausted first the best estimate is returned
    with ``converged=False``.
    """
    if use_exact:
        exact = op.exact_norm()
        if exact is not None:
            return NormEstimate(float(exact), True, 0)

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.cols)
    x /= np.linalg.norm(x)
    est = 0.0
    for it in range(1, max_iter + 1):
        z = op._rmatvec(op._matvec(x))
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return NormEstimate(0.0, True, it)
        # x is unit norm, so ||A^T A x|| -> sigma_max^2 from below
        new = np.sqrt(nz)
        x = z / nz
        if abs(new - est) <= tol * new:
            return NormEstimate(float(new), True, it)
        est = new
    return NormEstimate(float(est), False, max_iter)


def operator_norm(op, tol=1e-10, max_iter=5000, seed=0) -> float:
    """Spectral norm of ``op``; warns if power iteration did not converge."""
    est = estimate_operator_norm(op, tol=tol, max_iter=max_iter, seed=seed)
    if not est.converged:
        warnings.warn(
            f"power iteration did not converge in {max_iter} iterations; "
            f"returning best estimate {est.value:.6g}",
            RuntimeWarning,
            stacklevel=2,
        )
    return est.value


def make_diff_1d(n: int) -> Diff1D:
    return Diff1D(n)


def make_diff_2d(h: int, w: int) -> Diff2D:
    return Diff2D(h, w)


def sigma_difference(R: LinearOperator) -> LinearOperator:
    """Difference operator acting on the latent vector in R's feature space.

    For an image gradient the two directional fields are differenced
    independently on their own grids; otherwise the feature vector is treated
    as a 1-D signal.
    """
    if isinstance(R, Diff2D):
        h, w = R.h, R.w
        blocks = []
        for bh, bw in ((h - 1, w), (h, w - 1)):
            if bh >= 2 and bw >= 2:
                blocks.append(Diff2D(bh, bw))
            else:
                blocks.append(Diff1D(bh * bw))
        return BlockDiagonalOperator(blocks)
    return Diff1D(R.rows)
