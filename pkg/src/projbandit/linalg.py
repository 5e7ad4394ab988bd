"""Dense linear-algebra kernel: projectors, incremental ridge state, span eigs.

Everything here is a pure function of its inputs; returned objects are
immutable (arrays are marked read-only) so they can be shared freely
between concurrently running trials.
"""

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-10
IDEMPOTENCE_TOL = 1e-8
TRACE_TOL = 1e-8
INVERSE_TOL = 1e-8
RANK_RTOL = 1e-10
# Sherman-Morrison drift is bounded by a full re-factorization this often.
REFACTOR_PERIOD = 512


class DegenerateBasisError(ValueError):
    """Raised when a caller-supplied basis is (numerically) rank deficient."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Projector:
    """Orthogonal projection matrix onto a subspace of dimension ``subspace_dim``."""

    matrix: np.ndarray
    subspace_dim: int

    def __post_init__(self):
        m = _readonly(self.matrix)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"projector matrix must be square, got {m.shape}")
        if not 1 <= self.subspace_dim <= m.shape[0]:
            raise ValueError(f"subspace_dim {self.subspace_dim} out of range for d={m.shape[0]}")
        if np.max(np.abs(m - m.T)) > SYMMETRY_TOL:
            raise ValueError("projector is not symmetric")
        if np.max(np.abs(m @ m - m)) > IDEMPOTENCE_TOL:
            raise ValueError("projector is not idempotent")
        if abs(np.trace(m) - self.subspace_dim) > TRACE_TOL:
            raise ValueError(
                f"projector trace {np.trace(m):.12g} does not match subspace_dim {self.subspace_dim}"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def complement_matrix(self) -> np.ndarray:
        """Projection matrix onto the orthogonal complement, I - P."""
        return np.eye(self.dim) - self.matrix


def projector_from_basis(basis: np.ndarray) -> Projector:
    """Build the orthogonal projector onto the column span of ``basis``.

    Computes A (A^T A)^{-1} A^T by solving (A^T A) Z = A^T rather than
    forming the inverse; the result is symmetrized before validation.
    Raises DegenerateBasisError if the columns are numerically dependent.
    """
    a = np.asarray(basis, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"basis must be a 2-D array, got shape {a.shape}")
    d, u = a.shape
    if u < 1 or u > d:
        raise ValueError(f"basis must be d x u with 1 <= u <= d, got {a.shape}")
    svals = np.linalg.svd(a, compute_uv=False)
    if svals[-1] <= RANK_RTOL * svals[0]:
        raise DegenerateBasisError(
            f"basis columns are numerically dependent (sigma_min/sigma_max = {svals[-1] / svals[0]:.3e})"
        )
    z = np.linalg.solve(a.T @ a, a.T)
    p = a @ z
    p = 0.5 * (p + p.T)
    return Projector(matrix=p, subspace_dim=u)


def diagonal_projector(d: int, keep: int) -> Projector:
    """Projector keeping the first ``keep`` coordinates and zeroing the rest."""
    if not 1 <= keep <= d:
        raise ValueError(f"keep must satisfy 1 <= keep <= d, got keep={keep}, d={d}")
    m = np.zeros((d, d))
    m[np.arange(keep), np.arange(keep)] = 1.0
    return Projector(matrix=m, subspace_dim=keep)


def apply_projection(p: Projector, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.dim,):
        raise ValueError(f"vector shape {x.shape} does not match projector dim {p.dim}")
    return p.matrix @ x


@dataclass(frozen=True)
class RidgeState:
    """Regularized least-squares state, maintained incrementally.

    V = lam*I + sum_i x_i x_i^T, b = sum_i r_i x_i, theta_hat = V^{-1} b.
    V_inv tracks V^{-1} through rank-one updates with a periodic full
    re-factorization to bound drift.
    """

    V: np.ndarray
    V_inv: np.ndarray
    b: np.ndarray
    theta_hat: np.ndarray
    lam: float
    t: int

    def __post_init__(self):
        for name in ("V", "V_inv", "b", "theta_hat"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def dim(self) -> int:
        return self.b.shape[0]


def ridge_init(d: int, lam: float) -> RidgeState:
    if lam <= 0:
        raise ValueError(f"ridge regularizer must be positive, got {lam}")
    eye = np.eye(d)
    return RidgeState(
        V=lam * eye,
        V_inv=eye / lam,
        b=np.zeros(d),
        theta_hat=np.zeros(d),
        lam=lam,
        t=0,
    )


def ridge_update(state: RidgeState, x: np.ndarray, r: float) -> RidgeState:
    """Fold one observation (x, r) into the state.

    V grows by x x^T; V_inv follows by the Sherman-Morrison identity
    (the denominator 1 + x^T V_inv x is positive since V is positive
    definite, so there is no failure path). Every REFACTOR_PERIOD steps
    the inverse is recomputed from V directly.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (state.dim,):
        raise ValueError(f"vector shape {x.shape} does not match state dim {state.dim}")
    v = state.V + np.outer(x, x)
    t = state.t + 1
    if t % REFACTOR_PERIOD == 0:
        v_inv = np.linalg.solve(v, np.eye(state.dim))
        v_inv = 0.5 * (v_inv + v_inv.T)
    else:
        vx = state.V_inv @ x
        v_inv = state.V_inv - np.outer(vx, vx) / (1.0 + x @ vx)
    b = state.b + r * x
    return RidgeState(V=v, V_inv=v_inv, b=b, theta_hat=v_inv @ b, lam=state.lam, t=t)


def min_eigen_in_span(m: np.ndarray, span_basis: np.ndarray) -> float:
    """Smallest value of y^T M y over unit vectors y in span(span_basis).

    ``span_basis`` holds the spanning vectors as rows. M is projected into
    an orthonormal basis of the span and the smallest eigenvalue of the
    reduced matrix is returned.
    """
    m = np.asarray(m, dtype=np.float64)
    vecs = np.atleast_2d(np.asarray(span_basis, dtype=np.float64))
    if vecs.shape[0] == 0:
        raise ValueError("span_basis must be nonempty")
    if m.shape != (vecs.shape[1], vecs.shape[1]):
        raise ValueError(f"matrix shape {m.shape} does not match basis dim {vecs.shape[1]}")
    q, r = np.linalg.qr(vecs.T)
    diag = np.abs(np.diag(r))
    if np.min(diag) <= RANK_RTOL * max(np.max(diag), 1e-300):
        raise DegenerateBasisError("span_basis vectors are numerically dependent")
    reduced = q.T @ m @ q
    reduced = 0.5 * (reduced + reduced.T)
    return float(np.linalg.eigvalsh(reduced)[0])
