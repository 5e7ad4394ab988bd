"""The four strategies: GENTRY, CURSE, REGRET and the UE baseline.

GENTRY, CURSE and REGRET are epsilon-greedy: with probability eps_t they
pull a uniformly random arm from the independent exploration subset, and
otherwise exploit an argmax of a linear score over the whole set. They
differ only in the score direction and in what the ridge estimator is fed:

  gentry  exploit <P x, P theta_hat>,     ridge over raw arms
  curse   exploit <x, theta_hat>,         ridge over raw arms
  regret  exploit <P x, P theta_tilde>,   ridge over projected arms

UE replaces the random branch with an ellipsoidal exploration bonus.
"""

import math
from dataclasses import dataclass

import numpy as np

from .decision_sets import EntropyBall, FiniteSet, entropy_ball_linear_max, finite_argmax
from .environment import Arm, DecisionSet
from .linalg import Projector, RidgeState, ridge_init, ridge_update

STRATEGIES = ("gentry", "curse", "regret", "ue")
UE_POOL_DEFAULT = 64
SCHEDULE_KINDS = ("finite", "infinite", "smooth")


@dataclass(frozen=True)
class EpsilonSchedule:
    """Exploration probability eps_t = min(1, alpha*k / t^p), nonincreasing in t.

    The exponent p is 1 for the finite-arm schedule, 1/3 for the
    infinite-arm schedule and 1/2 for the smooth-set variant.
    """

    kind: str
    alpha: float
    k: int

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def epsilon_value(schedule: EpsilonSchedule, t: int) -> float:
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    ak = schedule.alpha * schedule.k
    if schedule.kind == "finite":
        return min(1.0, ak / t)
    if schedule.kind == "infinite":
        return min(1.0, ak / t ** (1.0 / 3.0))
    return min(1.0, ak / math.sqrt(t))


@dataclass
class PolicyState:
    """Per-trial mutable state: the estimator plus choice bookkeeping.

    ``choice_counts[i]`` is N_t(i), the number of pulls of finite arm i;
    ``explored_counts[j]`` counts the random pulls of exploration slot j
    and never exceeds the corresponding N_t. REGRET sets
    ``update_projector`` so observations are folded in as P x.
    """

    ridge: RidgeState
    schedule: EpsilonSchedule | None = None
    update_projector: Projector | None = None
    choice_counts: np.ndarray | None = None
    explored_counts: np.ndarray | None = None
    ue_pool: np.ndarray | None = None


def make_policy_state(
    strategy: str,
    dset: DecisionSet,
    projector: Projector,
    lam: float,
    alpha: float,
    schedule_kind: str = "finite",
    rng: np.random.Generator | None = None,
    ue_pool_size: int = UE_POOL_DEFAULT,
) -> PolicyState:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    d = projector.dim
    state = PolicyState(ridge=ridge_init(d, lam))
    if isinstance(dset, FiniteSet):
        state.choice_counts = np.zeros(dset.size, dtype=np.int64)
    state.explored_counts = np.zeros(dset.k, dtype=np.int64)
    if strategy == "ue":
        if isinstance(dset, EntropyBall):
            if rng is None:
                raise ValueError("UE on an infinite set needs a generator for its candidate pool")
            dirs = rng.standard_normal((ue_pool_size, d))
            state.ue_pool = np.vstack(
                [entropy_ball_linear_max(dset, c) for c in dirs] + [dset.dk_arms()]
            )
    else:
        state.schedule = EpsilonSchedule(kind=schedule_kind, alpha=alpha, k=dset.k)
        if strategy == "regret":
            state.update_projector = projector
    return state


def _epsilon_greedy_select(
    state: PolicyState,
    dset: DecisionSet,
    c: np.ndarray,
    rng: np.random.Generator,
    t: int,
) -> tuple[Arm, bool]:
    eps = epsilon_value(state.schedule, t)
    if rng.uniform() < eps:
        j = int(rng.integers(0, dset.k))
        state.explored_counts[j] += 1
        if isinstance(dset, FiniteSet):
            idx = dset.dk_indices[j]
            state.choice_counts[idx] += 1
            return idx, True
        return dset.dk_arms()[j], True
    if isinstance(dset, FiniteSet):
        idx = finite_argmax(dset, c)
        state.choice_counts[idx] += 1
        return idx, False
    return entropy_ball_linear_max(dset, c), False


def gentry_select(
    state: PolicyState,
    dset: DecisionSet,
    projector: Projector,
    rng: np.random.Generator,
    t: int,
) -> tuple[Arm, bool]:
    """Explore a random independent arm w.p. eps_t, else exploit <P x, P theta_hat>."""
    return _epsilon_greedy_select(state, dset, projector.matrix @ state.ridge.theta_hat, rng, t)


def curse_select(
    state: PolicyState,
    dset: DecisionSet,
    rng: np.random.Generator,
    t: int,
) -> tuple[Arm, bool]:
    """Like gentry_select but exploits the unprojected estimate <x, theta_hat>."""
    return _epsilon_greedy_select(state, dset, state.ridge.theta_hat, rng, t)


def regret_select(
    state: PolicyState,
    dset: DecisionSet,
    projector: Projector,
    rng: np.random.Generator,
    t: int,
) -> tuple[Arm, bool]:
    """GENTRY's rule on the tilde estimator built from projected arms."""
    return _epsilon_greedy_select(state, dset, projector.matrix @ state.ridge.theta_hat, rng, t)


def _ellipsoid_norms(v_inv: np.ndarray, rows: np.ndarray) -> np.ndarray:
    q = np.einsum("ij,jk,ik->i", rows, v_inv, rows)
    return np.sqrt(np.maximum(q, 0.0))


def ue_select(
    state: PolicyState,
    dset: DecisionSet,
    alpha: float,
    t: int,
    rng: np.random.Generator,
    projector: Projector,
    raw_exploit: bool = False,
) -> Arm:
    """Maximize the empirical reward plus an ellipsoidal exploration bonus.

    The score is r(x) + alpha * sqrt(log t * min(d log t, |D|)) * ||x||_{V^-1}
    with r the projected empirical reward (or <x, theta_hat> when
    ``raw_exploit`` is set). Finite sets are scanned exhaustively; on the
    entropy ball the scan runs over the trial's fixed candidate pool, the
    exploration arms, and the support point of the current estimate.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    d = projector.dim
    c = state.ridge.theta_hat if raw_exploit else projector.matrix @ state.ridge.theta_hat
    logt = math.log(t)
    if isinstance(dset, FiniteSet):
        weight = alpha * math.sqrt(logt * min(d * logt, dset.size))
        scores = dset.arms @ c + weight * _ellipsoid_norms(state.ridge.V_inv, dset.arms)
        idx = int(np.argmax(scores))
        state.choice_counts[idx] += 1
        return idx
    weight = alpha * math.sqrt(logt * d * logt)
    cands = np.vstack([state.ue_pool, entropy_ball_linear_max(dset, c)])
    scores = cands @ c + weight * _ellipsoid_norms(state.ridge.V_inv, cands)
    return cands[int(np.argmax(scores))].copy()


def policy_update(state: PolicyState, x: np.ndarray, r: float) -> None:
    """Fold the observed (arm, return) pair into the policy's estimator."""
    feats = state.update_projector.matrix @ x if state.update_projector is not None else x
    state.ridge = ridge_update(state.ridge, feats, r)
