"""Ground-truth reward model: observed returns, projection rewards, regrets.

Synthetic mode draws returns <x, theta> + Gaussian noise; tabular mode
replays stored per-arm values (the wine experiment). The observed return
always mixes the projection reward with a corruption component living in
the orthogonal complement; only the projection reward enters the regret.
"""

from dataclasses import dataclass, replace

import numpy as np

from .decision_sets import EntropyBall, FiniteSet, entropy_ball_linear_max, finite_argmax
from .linalg import Projector

DecisionSet = FiniteSet | EntropyBall
Arm = int | np.ndarray


@dataclass(frozen=True)
class TabularArm:
    """One stored arm: features plus its observed (corrupted) and clean values."""

    features: np.ndarray
    observed_value: float
    projection_value: float


@dataclass(frozen=True)
class Environment:
    projector: Projector
    theta: np.ndarray | None
    noise_std: float
    mode: str  # 'synthetic' | 'tabular'
    tabular: tuple[TabularArm, ...] | None = None
    s_bound: float | None = None
    best_proj_value: float | None = None
    best_std_value: float | None = None

    def __post_init__(self):
        if self.mode not in ("synthetic", "tabular"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.mode == "synthetic":
            if self.theta is None:
                raise ValueError("synthetic mode requires theta")
            theta = np.ascontiguousarray(self.theta, dtype=np.float64)
            theta.flags.writeable = False
            object.__setattr__(self, "theta", theta)
            if theta.shape != (self.projector.dim,):
                raise ValueError("theta dimension does not match projector")
            if self.s_bound is not None and np.linalg.norm(theta) > self.s_bound * (1 + 1e-12):
                raise ValueError(
                    f"||theta|| = {np.linalg.norm(theta):.6g} exceeds bound {self.s_bound:.6g}"
                )
            if np.linalg.norm(self.projector.matrix @ theta) == 0.0:
                raise ValueError("theta has no component in the target subspace")
        else:
            if not self.tabular:
                raise ValueError("tabular mode requires stored arms")

    @property
    def dim(self) -> int:
        return self.projector.dim


def synthetic_environment(
    theta: np.ndarray,
    projector: Projector,
    noise_std: float,
    s_bound: float | None = None,
) -> Environment:
    return Environment(
        projector=projector, theta=theta, noise_std=noise_std, mode="synthetic", s_bound=s_bound
    )


def tabular_environment(
    arms: list[TabularArm], projector: Projector, noise_std: float = 0.0
) -> Environment:
    return Environment(
        projector=projector, theta=None, noise_std=noise_std, mode="tabular", tabular=tuple(arms)
    )


def observe_return(env: Environment, x: Arm, rng: np.random.Generator) -> float:
    """Sample the observed return of choosing arm ``x``.

    Synthetic: <x, theta> plus one N(0, noise_std^2) draw from ``rng``.
    Tabular: the arm's stored observed value (``x`` is an index), plus
    noise only when noise_std > 0.
    """
    if env.mode == "synthetic":
        return float(np.asarray(x) @ env.theta) + env.noise_std * float(rng.standard_normal())
    val = env.tabular[int(x)].observed_value
    if env.noise_std > 0:
        val += env.noise_std * float(rng.standard_normal())
    return float(val)


def expected_return(env: Environment, x: Arm) -> float:
    """Noise-free observed return (projection reward plus corruption)."""
    if env.mode == "synthetic":
        return float(np.asarray(x) @ env.theta)
    return float(env.tabular[int(x)].observed_value)


def projection_reward(env: Environment, x: Arm) -> float:
    """The subspace component of the expected return, <P x, P theta>."""
    if env.mode == "synthetic":
        p = env.projector.matrix
        return float((p @ np.asarray(x)) @ (p @ env.theta))
    return float(env.tabular[int(x)].projection_value)


def best_projection_arm(env: Environment, dset: DecisionSet) -> tuple[Arm, float]:
    """The arm maximizing the projection reward over the set, with its value."""
    if env.mode == "tabular":
        vals = np.array([a.projection_value for a in env.tabular])
        idx = int(np.argmax(vals))
        return idx, float(vals[idx])
    c = env.projector.matrix @ env.theta
    if isinstance(dset, FiniteSet):
        idx = finite_argmax(dset, c)
        return idx, projection_reward(env, dset.arms[idx])
    x = entropy_ball_linear_max(dset, c)
    return x, projection_reward(env, x)


def best_standard_arm(env: Environment, dset: DecisionSet) -> tuple[Arm, float]:
    """The arm maximizing the full expected return (diagnostic objective)."""
    if env.mode == "tabular":
        vals = np.array([a.observed_value for a in env.tabular])
        idx = int(np.argmax(vals))
        return idx, float(vals[idx])
    if isinstance(dset, FiniteSet):
        idx = finite_argmax(dset, env.theta)
        return idx, expected_return(env, dset.arms[idx])
    x = entropy_ball_linear_max(dset, env.theta)
    return x, expected_return(env, x)


def attach_best_values(env: Environment, dset: DecisionSet) -> Environment:
    """Precompute and store the oracle best values (once per trial)."""
    _, pv = best_projection_arm(env, dset)
    _, sv = best_standard_arm(env, dset)
    return replace(env, best_proj_value=pv, best_std_value=sv)


def step_regrets(env: Environment, x: Arm) -> tuple[float, float]:
    """Instantaneous (projection, standard) regrets of choosing ``x``.

    Requires the oracle best values attached at trial start. The
    projection regret can only dip below zero by the maximizer tolerance
    on infinite sets.
    """
    if env.best_proj_value is None or env.best_std_value is None:
        raise ValueError("best values not attached; call attach_best_values first")
    return (
        env.best_proj_value - projection_reward(env, x),
        env.best_std_value - expected_return(env, x),
    )
