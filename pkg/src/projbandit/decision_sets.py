"""Decision sets (finite arm lists and the entropy ball) and their maximizers.

Both set types expose the two primitives the strategies need: an argmax of
a linear objective over the set, and a fixed subset of linearly independent
arms used for forced exploration.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .linalg import RANK_RTOL, DegenerateBasisError

DEFAULT_ENTROPY_BUDGET = 5.0
DEFAULT_MAX_TOL = 1e-10
_MU_BRACKET_LO = 1e-8
_MU_BRACKET_HI = 1e8


def select_independent_subset(arms: np.ndarray) -> tuple[int, list[int]]:
    """Greedy scan in index order keeping each arm that increases the rank.

    Rank growth is tested against an orthonormal basis of the kept arms
    with a relative residual threshold, so the result is deterministic and
    depends on input order only. Returns (k, kept_indices) where k is the
    dimension of span(arms).
    """
    arms = np.atleast_2d(np.asarray(arms, dtype=np.float64))
    if arms.shape[0] == 0:
        raise ValueError("arms must be nonempty")
    basis: list[np.ndarray] = []
    kept: list[int] = []
    for i, x in enumerate(arms):
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            continue
        resid = x.copy()
        for q in basis:
            resid -= (q @ resid) * q
        # second orthogonalization pass keeps the basis clean
        for q in basis:
            resid -= (q @ resid) * q
        rnrm = np.linalg.norm(resid)
        if rnrm > RANK_RTOL * nrm:
            basis.append(resid / rnrm)
            kept.append(i)
    return len(kept), kept


@dataclass(frozen=True)
class FiniteSet:
    """A finite list of arms (rows of ``arms``) with its independent subset.

    ``dk_indices`` point at linearly independent arms spanning span(arms);
    ``z_bound`` is the norm bound every arm is validated against (implied
    from the arms themselves when not supplied).
    """

    arms: np.ndarray
    dk_indices: tuple[int, ...]
    z_bound: float = 0.0

    def __post_init__(self):
        arms = np.ascontiguousarray(np.atleast_2d(self.arms), dtype=np.float64)
        arms.flags.writeable = False
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "dk_indices", tuple(int(i) for i in self.dk_indices))
        norms = np.linalg.norm(arms, axis=1)
        if self.z_bound <= 0.0:
            object.__setattr__(self, "z_bound", float(np.max(norms)))
        elif np.max(norms) > self.z_bound * (1.0 + 1e-12):
            raise ValueError(
                f"arm norm {np.max(norms):.6g} exceeds the declared bound {self.z_bound:.6g}"
            )
        k_all, _ = select_independent_subset(arms)
        k_sub, kept = select_independent_subset(arms[list(self.dk_indices)])
        if k_sub != len(self.dk_indices) or k_sub != k_all:
            raise DegenerateBasisError(
                f"dk_indices must be {k_all} independent arms spanning the set, "
                f"got {len(self.dk_indices)} with rank {k_sub}"
            )

    @classmethod
    def from_arms(cls, arms: np.ndarray, z_bound: float = 0.0) -> "FiniteSet":
        _, kept = select_independent_subset(arms)
        return cls(arms=np.atleast_2d(arms), dk_indices=tuple(kept), z_bound=z_bound)

    @property
    def size(self) -> int:
        return self.arms.shape[0]

    @property
    def dim(self) -> int:
        return self.arms.shape[1]

    @property
    def k(self) -> int:
        return len(self.dk_indices)

    def dk_arms(self) -> np.ndarray:
        return self.arms[list(self.dk_indices)]


def finite_argmax(fset: FiniteSet, c: np.ndarray) -> int:
    """Index of the arm maximizing <arm, c>; ties go to the lowest index."""
    return int(np.argmax(fset.arms @ np.asarray(c, dtype=np.float64)))


def entropy_ball_dk(dim: int, budget: float) -> np.ndarray:
    """Independent exploration arms for the entropy ball: the standard basis.

    Each basis vector is a member (1*log 1 = 0 <= budget) and the set has
    full rank d, with an identity Gram matrix.
    """
    if budget < 0:
        raise ValueError(f"budget must be nonnegative, got {budget}")
    return np.eye(dim)


@dataclass(frozen=True)
class EntropyBall:
    """The convex set {x >= 0 : sum_i x_i log x_i <= budget} (0 log 0 := 0)."""

    dim: int
    budget: float = DEFAULT_ENTROPY_BUDGET
    dk: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.budget < 0:
            raise ValueError(f"budget must be nonnegative, got {self.budget}")
        dk = self.dk if self.dk is not None else entropy_ball_dk(self.dim, self.budget)
        dk = np.ascontiguousarray(dk, dtype=np.float64)
        dk.flags.writeable = False
        object.__setattr__(self, "dk", dk)
        for row in dk:
            if not self.contains(row):
                raise ValueError("every exploration arm must belong to the set")
        k, _ = select_independent_subset(dk)
        if k != dk.shape[0]:
            raise DegenerateBasisError("exploration arms must be linearly independent")

    @property
    def k(self) -> int:
        return self.dk.shape[0]

    def dk_arms(self) -> np.ndarray:
        return self.dk

    def entropy(self, x: np.ndarray) -> float:
        return float(np.sum(xlogy(x, x)))

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= -tol)) and self.entropy(np.maximum(x, 0.0)) <= self.budget + tol

    def norm_bound(self) -> float:
        """Largest Euclidean norm attainable in the set (implied Z bound).

        The extreme point concentrating one coordinate (the others sitting
        at 1/e, the entropy minimizer) maximizes the norm.
        """
        e1 = np.zeros(self.dim)
        e1[0] = 1.0
        return float(np.linalg.norm(entropy_ball_linear_max(self, e1)))


def _g_and_slope(c: np.ndarray, mu: float, budget: float) -> tuple[float, float]:
    # g(mu) = sum_i x_i log x_i - budget at x_i = exp(c_i/mu - 1); note
    # log x_i = c_i/mu - 1 so no log call is needed. g is nonincreasing in mu.
    w = c / mu - 1.0
    if np.max(w) > 700.0:
        return np.inf, -np.inf
    x = np.exp(w)
    g = float(x @ w) - budget
    slope = -float((c * c) @ x) / mu**3
    return g, slope


def entropy_ball_linear_max(
    ball: EntropyBall, c: np.ndarray, tol: float = DEFAULT_MAX_TOL
) -> np.ndarray:
    """Maximize <c, x> over the entropy ball.

    For directions with max(c) > 0 the maximizer sits on the entropy shell
    and has the stationarity form x_i = exp(c_i/mu - 1); the multiplier
    mu > 0 is the root of g(mu) = sum_i x_i log x_i - budget, found by
    bisection on a sign-changing bracket (Newton steps are taken whenever
    they stay inside the bracket, which only accelerates the same search).
    For c = 0 every feasible point is optimal and the interior point
    (1/e, ..., 1/e) is returned. For nonzero c with max(c) <= 0 the shell
    is unreachable by the stationarity form; the mu -> 0 limit (1/e on
    zero components, 0 elsewhere) is returned, which attains the optimum 0.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (ball.dim,):
        raise ValueError(f"direction shape {c.shape} does not match set dim {ball.dim}")
    if not np.all(np.isfinite(c)):
        raise ValueError("direction must be finite")
    if np.max(np.abs(c)) == 0.0:
        return np.full(ball.dim, 1.0 / np.e)
    if np.max(c) <= 0.0:
        return np.where(c == 0.0, 1.0 / np.e, 0.0)

    # The argmax is invariant to positive scaling of c and the scaled root
    # always lands well inside the default bracket.
    cs = c / np.max(c)
    budget = ball.budget
    lo, hi = _MU_BRACKET_LO, _MU_BRACKET_HI
    g_lo, _ = _g_and_slope(cs, lo, budget)
    while g_lo < 0.0:
        lo /= 16.0
        g_lo, _ = _g_and_slope(cs, lo, budget)
    g_hi, _ = _g_and_slope(cs, hi, budget)
    while g_hi > 0.0:
        hi *= 16.0
        g_hi, _ = _g_and_slope(cs, hi, budget)

    mu = 0.5 * (lo + hi)
    for _ in range(300):
        g, dg = _g_and_slope(cs, mu, budget)
        if abs(g) <= tol:
            break
        if g > 0.0:
            lo = mu
        else:
            hi = mu
        nxt = 0.5 * (lo + hi)
        if np.isfinite(g) and dg < 0.0:
            cand = mu - g / dg
            if lo < cand < hi:
                nxt = cand
        mu = nxt
    else:
        raise RuntimeError("entropy-ball multiplier search did not converge")
    return np.exp(cs / mu - 1.0)
