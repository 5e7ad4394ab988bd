"""Experiment configurations, the trial runner, aggregation and CSV output.

A trial is a pure function of (config, strategy, trial index): the
environment stream is keyed by the trial index alone (so every strategy
faces the same random instances) and the policy stream by a stable
strategy id plus the trial index (so adding or removing strategies never
perturbs the others). Aggregation folds trials in index order, which makes
results byte-identical regardless of worker-pool width.
"""

import csv
import json
import multiprocessing
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from hashlib import blake2b
from pathlib import Path

import numpy as np

from .decision_sets import DEFAULT_ENTROPY_BUDGET, EntropyBall, FiniteSet
from .environment import (
    DecisionSet,
    Environment,
    attach_best_values,
    best_projection_arm,
    expected_return,
    observe_return,
    projection_reward,
    step_regrets,
    synthetic_environment,
    tabular_environment,
)
from .linalg import (
    DegenerateBasisError,
    Projector,
    diagonal_projector,
    min_eigen_in_span,
    projector_from_basis,
)
from .policies import (
    STRATEGIES,
    UE_POOL_DEFAULT,
    curse_select,
    gentry_select,
    make_policy_state,
    policy_update,
    regret_select,
    ue_select,
)
from .wine import build_wine_decision_set, load_wine_csv

SETTINGS = ("a", "b", "c", "wine")
STRATEGY_IDS = {name: i for i, name in enumerate(STRATEGIES)}
ENV_STREAM, POLICY_STREAM = 0, 1
PROJ_NORM_FLOOR = 1e-8
REDRAW_LIMIT = 100
REGRET_SLACK = -1e-10

_DEFAULT_ALPHAS = {
    "a": {"gentry": 1.0, "curse": 1.0, "regret": 1.0, "ue": 0.1},
    "b": {"gentry": 1.0, "curse": 1.0, "regret": 1.0, "ue": 0.1},
    "c": {"gentry": 0.01, "curse": 0.01, "regret": 0.1, "ue": 0.01},
    "wine": {"gentry": 1.0, "curse": 1.0, "regret": 1.0, "ue": 0.1},
}
_DEFAULT_DIMS = {"a": (10, 45, 5), "b": (10, 45, 5), "c": (4, 0, 2), "wine": (13, 200, 12)}


class UndefinedSlopeError(ValueError):
    """Log-log slope requested on a window with nonpositive curve values."""


@dataclass
class ExperimentConfig:
    setting: str
    d: int
    K: int
    u: int
    vartheta: float
    alpha_per_strategy: dict[str, float]
    ridge_lambda: float = 1.0
    horizon: int = 10_000
    trials: int = 2000
    base_seed: int = 12345
    strategies: tuple[str, ...] = STRATEGIES
    schedule: str = "finite"
    entropy_budget: float = DEFAULT_ENTROPY_BUDGET
    ue_candidate_pool: int = UE_POOL_DEFAULT
    ue_raw_exploit: bool = False
    wine_csv: str | None = None
    wine_noise_std: float = 0.0
    wine_standardize: bool = False
    threads: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.schedule not in ("finite", "infinite", "smooth"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        self.strategies = tuple(self.strategies)
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
            if self.alpha_per_strategy.get(s, 0.0) <= 0.0:
                raise ValueError(f"alpha for {s!r} must be positive")
        if self.horizon < 1 or self.trials < 1:
            raise ValueError("horizon and trials must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategies"] = list(self.strategies)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if "setting" not in data:
            raise ValueError("config document must contain a 'setting' key")
        base = default_config(data["setting"])
        known = set(base.to_dict())
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged = base.to_dict()
        merged.update(data)
        merged["strategies"] = tuple(merged["strategies"])
        return cls(**merged)


def default_config(setting: str, **overrides) -> ExperimentConfig:
    """Config preloaded with the per-setting defaults (d, K, u, noise, alphas)."""
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}")
    d, k_arms, u = _DEFAULT_DIMS[setting]
    cfg = ExperimentConfig(
        setting=setting,
        d=d,
        K=k_arms,
        u=u,
        vartheta=0.5 if setting != "wine" else 0.0,
        alpha_per_strategy=dict(_DEFAULT_ALPHAS[setting]),
        schedule="infinite" if setting == "c" else "finite",
    )
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


@lru_cache(maxsize=4)
def _cached_wine_records(path: str):
    return load_wine_csv(path)


def generate_setting(
    config: ExperimentConfig, rng: np.random.Generator
) -> tuple[Environment, DecisionSet]:
    """Draw one trial instance (fixed within the trial).

    Settings a/b: K arms and theta with U(-1,1) entries; the projector is
    built from a random d x u basis (a) or keeps the first u coordinates
    (b). Setting c: the entropy ball with theta and projector as in (a).
    Wine: sampled tabular arms with the protected-coordinate projector.
    theta is redrawn while its subspace component is negligible.
    """
    if config.setting == "wine":
        if not config.wine_csv:
            raise ValueError("wine setting requires wine_csv")
        records = _cached_wine_records(str(config.wine_csv))
        fset, tab, proj = build_wine_decision_set(
            records, rng, sample_size=config.K, standardize=config.wine_standardize
        )
        env = tabular_environment(tab, proj, noise_std=config.wine_noise_std)
        return attach_best_values(env, fset), fset

    d, u = config.d, config.u
    arms = rng.uniform(-1.0, 1.0, size=(config.K, d)) if config.setting in ("a", "b") else None
    theta = rng.uniform(-1.0, 1.0, size=d)
    if config.setting == "b":
        proj = diagonal_projector(d, u)
    else:
        for _ in range(REDRAW_LIMIT):
            try:
                proj = projector_from_basis(rng.uniform(-1.0, 1.0, size=(d, u)))
                break
            except DegenerateBasisError:
                continue
        else:
            raise RuntimeError("could not draw a nondegenerate projector basis")
    redraws = 0
    while np.linalg.norm(proj.matrix @ theta) <= PROJ_NORM_FLOOR:
        theta = rng.uniform(-1.0, 1.0, size=d)
        redraws += 1
        if redraws > REDRAW_LIMIT:
            raise RuntimeError("could not draw theta with a nonzero subspace component")
    env = synthetic_environment(theta, proj, config.vartheta, s_bound=float(np.sqrt(d)))
    if config.setting == "c":
        dset: DecisionSet = EntropyBall(dim=d, budget=config.entropy_budget)
    else:
        dset = FiniteSet.from_arms(arms, z_bound=float(np.sqrt(d)))
    return attach_best_values(env, dset), dset


def _vector_hash(x: np.ndarray) -> int:
    digest = blake2b(x.tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little", signed=True)


@dataclass
class TrialRecord:
    """Per-step log of one trial plus its instance-level diagnostics."""

    strategy: str
    trial_index: int
    arm_ids: np.ndarray  # arm index, or a vector hash on infinite sets
    explored: np.ndarray
    returns: np.ndarray
    proj_regrets: np.ndarray
    std_regrets: np.ndarray
    best_arm_id: int  # -1 on infinite sets
    best_proj_value: float
    dk_min_eigen: float
    k: int


def env_rng_for_trial(base_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(base_seed, spawn_key=(ENV_STREAM, trial_index))
    )


def policy_rng_for_trial(base_seed: int, strategy: str, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(base_seed, spawn_key=(POLICY_STREAM, STRATEGY_IDS[strategy], trial_index))
    )


def run_trial(config: ExperimentConfig, strategy: str, trial_index: int) -> TrialRecord:
    """Run one select -> observe -> update loop over the full horizon."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    env_rng = env_rng_for_trial(config.base_seed, trial_index)
    pol_rng = policy_rng_for_trial(config.base_seed, strategy, trial_index)
    env, dset = generate_setting(config, env_rng)
    proj = env.projector
    alpha = config.alpha_per_strategy[strategy]
    state = make_policy_state(
        strategy,
        dset,
        proj,
        lam=config.ridge_lambda,
        alpha=alpha,
        schedule_kind=config.schedule,
        rng=pol_rng,
        ue_pool_size=config.ue_candidate_pool,
    )

    n = config.horizon
    arm_ids = np.empty(n, dtype=np.int64)
    explored = np.zeros(n, dtype=bool)
    returns = np.empty(n)
    pregs = np.empty(n)
    sregs = np.empty(n)

    finite = isinstance(dset, FiniteSet)
    tabular = env.mode == "tabular"
    if finite:
        keys = range(dset.size) if tabular else dset.arms
        pr_table = np.array([projection_reward(env, a) for a in keys])
        er_table = np.array([expected_return(env, a) for a in keys])
        best_idx, _ = best_projection_arm(env, dset)
        best_arm_id = int(best_idx)
        best_pv = env.best_proj_value
        best_sv = env.best_std_value
    else:
        best_arm_id = -1

    raw_exploit = config.ue_raw_exploit
    for i in range(n):
        t = i + 1
        if strategy == "gentry":
            arm, exp_flag = gentry_select(state, dset, proj, pol_rng, t)
        elif strategy == "curse":
            arm, exp_flag = curse_select(state, dset, pol_rng, t)
        elif strategy == "regret":
            arm, exp_flag = regret_select(state, dset, proj, pol_rng, t)
        else:
            arm = ue_select(state, dset, alpha, t, pol_rng, proj, raw_exploit)
            exp_flag = False
        if finite:
            x = dset.arms[arm]
            r = observe_return(env, arm if tabular else x, env_rng)
            pregs[i] = best_pv - pr_table[arm]
            sregs[i] = best_sv - er_table[arm]
            arm_ids[i] = arm
        else:
            x = arm
            r = observe_return(env, x, env_rng)
            pregs[i], sregs[i] = step_regrets(env, x)
            arm_ids[i] = _vector_hash(x)
        policy_update(state, x, r)
        explored[i] = exp_flag
        returns[i] = r

    if float(np.min(pregs)) < REGRET_SLACK:
        raise RuntimeError(
            f"projection regret {np.min(pregs):.3e} below the oracle slack; "
            "best-arm precomputation is inconsistent"
        )
    dk = dset.dk_arms()
    return TrialRecord(
        strategy=strategy,
        trial_index=trial_index,
        arm_ids=arm_ids,
        explored=explored,
        returns=returns,
        proj_regrets=pregs,
        std_regrets=sregs,
        best_arm_id=best_arm_id,
        best_proj_value=float(env.best_proj_value),
        dk_min_eigen=min_eigen_in_span(dk.T @ dk, dk),
        k=dset.k,
    )


BEST_ARM_WINDOW = 200
BEST_ARM_THRESHOLD = 0.9


@dataclass
class AggregateCurve:
    """Across-trial summary for one strategy."""

    strategy: str
    n_trials: int
    mean_cum: np.ndarray
    stderr: np.ndarray
    best_arm_pct: float | None  # finite settings only
    dk_min_eigen_mean: float
    dk_min_eigen_min: float
    k: int

    @property
    def final_mean(self) -> float:
        return float(self.mean_cum[-1])


class CurveAccumulator:
    """Streaming fold of trial records (Welford over cumulative curves).

    Folding must happen in trial-index order for reproducible floats; the
    runner guarantees that ordering.
    """

    def __init__(self, strategy: str, horizon: int):
        self.strategy = strategy
        self.horizon = horizon
        self.count = 0
        self._mean = np.zeros(horizon)
        self._m2 = np.zeros(horizon)
        self._best_hits = 0
        self._best_applicable = False
        self._deltas: list[float] = []
        self._k = 0

    def add(self, rec: TrialRecord) -> None:
        if rec.proj_regrets.shape != (self.horizon,):
            raise ValueError("record length does not match the configured horizon")
        curve = np.cumsum(rec.proj_regrets)
        self.count += 1
        delta = curve - self._mean
        self._mean += delta / self.count
        self._m2 += delta * (curve - self._mean)
        if rec.best_arm_id >= 0:
            self._best_applicable = True
            w = min(BEST_ARM_WINDOW, rec.arm_ids.shape[0])
            frac = np.count_nonzero(rec.arm_ids[-w:] == rec.best_arm_id) / w
            self._best_hits += frac > BEST_ARM_THRESHOLD
        self._deltas.append(rec.dk_min_eigen)
        self._k = rec.k

    def result(self) -> AggregateCurve:
        if self.count == 0:
            raise ValueError("no records were folded")
        if self.count > 1:
            stderr = np.sqrt(self._m2 / (self.count - 1)) / np.sqrt(self.count)
        else:
            stderr = np.zeros(self.horizon)
        return AggregateCurve(
            strategy=self.strategy,
            n_trials=self.count,
            mean_cum=self._mean.copy(),
            stderr=stderr,
            best_arm_pct=100.0 * self._best_hits / self.count if self._best_applicable else None,
            dk_min_eigen_mean=float(np.mean(self._deltas)),
            dk_min_eigen_min=float(np.min(self._deltas)),
            k=self._k,
        )


def aggregate(records: list[TrialRecord], horizon: int | None = None) -> AggregateCurve:
    """Fold a list of records (already in trial order) into a curve."""
    if not records:
        raise ValueError("records must be nonempty")
    acc = CurveAccumulator(records[0].strategy, horizon or records[0].proj_regrets.shape[0])
    for rec in records:
        acc.add(rec)
    return acc.result()


def fit_regret_slope(curve: np.ndarray, t_min: int, t_max: int) -> float:
    """Least-squares slope of log(curve) against log t over t in [t_min, t_max]."""
    curve = np.asarray(curve, dtype=np.float64)
    if not 1 <= t_min < t_max <= curve.shape[0]:
        raise ValueError(f"need 1 <= t_min < t_max <= {curve.shape[0]}, got [{t_min}, {t_max}]")
    window = curve[t_min - 1 : t_max]
    if np.any(window <= 0.0):
        raise UndefinedSlopeError("curve must be positive on the fit window")
    z = np.log(np.arange(t_min, t_max + 1, dtype=np.float64))
    y = np.log(window)
    zc = z - z.mean()
    return float((zc @ (y - y.mean())) / (zc @ zc))


def _trial_task(args) -> TrialRecord:
    cfg_dict, strategy, idx = args
    return run_trial(ExperimentConfig.from_dict(cfg_dict), strategy, idx)


def run_experiment(config: ExperimentConfig, log=None) -> dict[str, AggregateCurve]:
    """Run all configured strategies; returns one aggregate curve each.

    Trials are independent tasks; with threads > 1 they are dispatched to a
    process pool, and results are folded in trial order either way.
    """
    curves: dict[str, AggregateCurve] = {}
    for strategy in config.strategies:
        acc = CurveAccumulator(strategy, config.horizon)
        if config.threads > 1:
            cfg_dict = config.to_dict()
            tasks = ((cfg_dict, strategy, i) for i in range(config.trials))
            chunk = max(1, config.trials // (config.threads * 8))
            with multiprocessing.Pool(config.threads) as pool:
                for rec in pool.imap(_trial_task, tasks, chunksize=chunk):
                    acc.add(rec)
        else:
            for i in range(config.trials):
                acc.add(run_trial(config, strategy, i))
        curves[strategy] = acc.result()
        if log is not None:
            log(f"{strategy}: {config.trials} trials done, final mean regret "
                f"{curves[strategy].final_mean:.4f}")
    return curves


def summary_slope_window(horizon: int) -> tuple[int, int]:
    return max(2, horizon // 10), horizon


def emit_results(
    curves: dict[str, AggregateCurve], config: ExperimentConfig, out_dir: str | Path
) -> list[Path]:
    """Write per-strategy curve CSVs, a summary CSV and a re-runnable manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    files: list[Path] = []

    for strategy in config.strategies:
        curve = curves[strategy]
        path = out / f"curve_{strategy}.csv"
        _write_rows(
            path,
            ["strategy", "t", "mean_cum_proj_regret", "stderr"],
            (
                [strategy, t + 1, repr(float(curve.mean_cum[t])), repr(float(curve.stderr[t]))]
                for t in range(config.horizon)
            ),
        )
        files.append(path)

    t_lo, t_hi = summary_slope_window(config.horizon)
    rows = []
    for strategy in config.strategies:
        curve = curves[strategy]
        try:
            slope = repr(fit_regret_slope(curve.mean_cum, t_lo, t_hi)) if t_hi > t_lo else ""
        except UndefinedSlopeError:
            slope = ""
        rows.append(
            [
                strategy,
                curve.n_trials,
                config.horizon,
                repr(curve.final_mean),
                slope,
                t_lo,
                t_hi,
                "" if curve.best_arm_pct is None else repr(curve.best_arm_pct),
                repr(curve.dk_min_eigen_mean),
                repr(curve.dk_min_eigen_min),
                curve.k,
            ]
        )
    summary = out / "summary.csv"
    _write_rows(
        summary,
        [
            "strategy",
            "trials",
            "horizon",
            "final_mean_cum_proj_regret",
            "slope",
            "slope_t_min",
            "slope_t_max",
            "best_arm_pct",
            "dk_min_eigen_mean",
            "dk_min_eigen_min",
            "k",
        ],
        rows,
    )
    files.append(summary)

    manifest = {
        "config": config.to_dict(),
        "seeds": {
            "base_seed": config.base_seed,
            "env_stream_spawn_key": [ENV_STREAM, "<trial_index>"],
            "policy_stream_spawn_key": [POLICY_STREAM, "<strategy_id>", "<trial_index>"],
            "strategy_ids": STRATEGY_IDS,
        },
        "outputs": [f.name for f in files],
    }
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    files.append(mpath)
    return files


def _write_rows(path: Path, header: list, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a config document (or a manifest wrapping one) from JSON."""
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and isinstance(doc.get("config"), dict):
        doc = doc["config"]
    return ExperimentConfig.from_dict(doc)
