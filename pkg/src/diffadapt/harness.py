"""Monte Carlo experiment runner: configs, paired-seed trials, MSD aggregation, artifacts.

All trials of an experiment advance together as one batch.  Every
(trial, node) pair owns an independent generator spawned from the run seed,
and each iteration's data realization is consumed by every strategy, so
strategy curves differ only through the strategies themselves.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import subprocess
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .costs import CostModel, LinearModelData, LocalizationCost, QuadraticCost, SparseRegCost, global_minimizer
from .graph import Network, TopologyError, averaging_weights, geometric_topology, metropolis_weights
from .strategies import GradientField, Strategy
from .theory import UnstableError, analyze

log = logging.getLogger(__name__)

DB_FLOOR = -200.0
DEFAULT_TAIL = 0.2
CHUNK = 50


class ConfigError(ValueError):
    pass


class AllTrialsDiverged(RuntimeError):
    pass


def to_db(x):
    """``10 log10(x)`` with zero mapped to ``DB_FLOOR``; negative input is an error."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("MSD must be nonnegative before dB conversion")
    with np.errstate(divide="ignore"):
        out = np.where(x > 0, 10.0 * np.log10(np.where(x > 0, x, 1.0)), DB_FLOOR)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- config


def _section(cls, doc, name: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from exc


@dataclass
class NetworkSpec:
    """Random geometric topology, or an explicit ``edges``/``positions`` document."""

    n_nodes: int = 10
    radius: float = 0.4
    seed: int = 0
    edges: list | None = None
    positions: list | None = None

    def __post_init__(self):
        if int(self.n_nodes) < 1:
            raise ConfigError("network.n_nodes must be >= 1")
        if self.edges is None and self.radius <= 0:
            raise ConfigError("network.radius must be positive")

    def build(self) -> Network:
        try:
            if self.edges is not None:
                return Network.from_dict(
                    {k: v for k, v in (("n_nodes", self.n_nodes), ("edges", self.edges), ("positions", self.positions)) if v is not None}
                )
            return geometric_topology(int(self.n_nodes), float(self.radius), int(self.seed))
        except (TopologyError, ValueError) as exc:
            raise ConfigError(f"network: {exc}") from exc


COST_MODELS = ("quadratic", "sparse", "localization")


@dataclass
class CostSpec:
    """``w_true`` is a list, ``"endpoints"`` (``[1, 0, ..., 0, 1]``) or null for the model default.

    For localization ``w_true`` is the target position and anchors are the
    node positions mapped onto ``[-anchor_scale, anchor_scale]^2``.
    """

    model: str = "quadratic"
    dim: int | None = None
    rows: int = 1
    noise_var: float | list = 1.0
    w_true: list | str | None = None
    regressor_var: list | None = None
    rho: float = 0.0
    epsilon: float = 1e-3
    anchor_scale: float = 2.0

    def __post_init__(self):
        if self.model not in COST_MODELS:
            raise ConfigError(f"cost.model must be one of {COST_MODELS}, got {self.model!r}")
        if np.any(np.asarray(self.noise_var, dtype=float) < 0):
            raise ConfigError("cost.noise_var must be >= 0")
        if self.rows < 1:
            raise ConfigError("cost.rows must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("cost.epsilon must be > 0")
        if self.rho < 0:
            raise ConfigError("cost.rho must be >= 0")

    def resolve_w_true(self) -> np.ndarray:
        if self.model == "localization":
            w = np.zeros(2) if self.w_true is None else np.asarray(self.w_true, dtype=float)
            if w.shape != (2,):
                raise ConfigError("localization target must be a 2-vector")
            return w
        w = self.w_true
        if w is None or w == "endpoints":
            if self.dim is None or self.dim < 1:
                raise ConfigError("cost.dim is required when w_true is not an explicit list")
            out = np.zeros(self.dim)
            out[0] = out[-1] = 1.0
            return out
        if isinstance(w, str):
            raise ConfigError(f"unknown w_true preset {w!r}")
        out = np.asarray(w, dtype=float)
        if out.ndim != 1 or (self.dim is not None and out.shape[0] != self.dim):
            raise ConfigError("cost.w_true does not match cost.dim")
        return out


A_RULES = ("averaging", "metropolis", "identity")
C_RULES = ("metropolis", "identity")
STRATEGIES = ("atc", "cta", "noncoop", "incremental", "consensus")


@dataclass
class StrategySpec:
    strategy: str = "atc"
    a_weights: str = "averaging"
    c_weights: str = "metropolis"
    mu: float | list = 1e-3
    mu_schedule: str = "constant"
    label: str | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.a_weights not in A_RULES:
            raise ConfigError(f"a_weights must be one of {A_RULES}, got {self.a_weights!r}")
        if self.c_weights not in C_RULES:
            raise ConfigError(f"c_weights must be one of {C_RULES}, got {self.c_weights!r}")
        if self.mu_schedule not in ("constant", "harmonic"):
            raise ConfigError(f"mu_schedule must be constant or harmonic, got {self.mu_schedule!r}")
        if self.mu_schedule == "harmonic" and self.strategy != "consensus":
            raise ConfigError("harmonic step sizes are only supported for consensus")
        if np.any(np.asarray(self.mu, dtype=float) <= 0):
            raise ConfigError("mu must be positive")
        if not self.label:
            self.label = self.strategy


@dataclass
class RunSpec:
    """``trajectory`` is a list of ``{"iteration": i, "position": [...]}`` waypoints."""

    horizon: int = 1000
    n_trials: int = 100
    seed: int = 0
    reference: str = "model_w_true"
    tail_fraction: float = DEFAULT_TAIL
    init: list | None = None
    trajectory: list | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("run.horizon must be >= 1")
        if self.n_trials < 1:
            raise ConfigError("run.n_trials must be >= 1")
        if self.reference not in ("model_w_true", "global_minimizer"):
            raise ConfigError("run.reference must be model_w_true or global_minimizer")
        if not 0 < self.tail_fraction < 1:
            raise ConfigError("run.tail_fraction must lie in (0, 1)")
        if self.trajectory is not None and self.reference != "model_w_true":
            raise ConfigError("a moving target is only measured against the model parameter")


@dataclass
class OutputSpec:
    dir: str = "out"
    prefix: str = "experiment"
    per_node: bool = False


@dataclass
class ExperimentConfig:
    network: NetworkSpec = field(default_factory=NetworkSpec)
    cost: CostSpec = field(default_factory=CostSpec)
    strategies: list[StrategySpec] = field(default_factory=lambda: [StrategySpec()])
    run: RunSpec = field(default_factory=RunSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        labels = [s.label for s in self.strategies]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"strategy labels must be unique, got {labels}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - {"network", "cost", "strategies", "run", "output"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        strategies = doc.get("strategies", [{}])
        if not isinstance(strategies, list):
            raise ConfigError("strategies must be an array")
        try:
            return cls(
                network=_section(NetworkSpec, doc.get("network"), "network"),
                cost=_section(CostSpec, doc.get("cost"), "cost"),
                strategies=[_section(StrategySpec, s, "strategies") for s in strategies],
                run=_section(RunSpec, doc.get("run"), "run"),
                output=_section(OutputSpec, doc.get("output"), "output"),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, seed=None, trials=None, out_dir=None) -> "ExperimentConfig":
        run, output = self.run, self.output
        if seed is not None:
            run = replace(run, seed=int(seed))
        if trials is not None:
            run = replace(run, n_trials=int(trials))
        if out_dir is not None:
            output = replace(output, dir=str(out_dir))
        return replace(self, run=run, output=output)


# ---------------------------------------------------------------- builders


def _per_node(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{name} must be a scalar or have one entry per node")
    return arr


def build_costs(spec: CostSpec, net: Network) -> tuple[list[CostModel], np.ndarray]:
    """Node costs and the model parameter ``w_true``."""
    n = net.n_nodes
    w_true = spec.resolve_w_true()
    noise_std = np.sqrt(_per_node(spec.noise_var, n, "cost.noise_var"))
    if spec.model == "localization":
        if net.positions is None:
            raise ConfigError("localization needs node positions")
        anchors = spec.anchor_scale * (2.0 * net.positions - 1.0)
        return [LocalizationCost(anchors[k], noise_std[k], w_true) for k in range(n)], w_true
    m = w_true.shape[0]
    if spec.regressor_var is None:
        var = np.ones((n, m))
    else:
        var = np.asarray(spec.regressor_var, dtype=float)
        if var.shape == (m,):
            var = np.broadcast_to(var, (n, m))
        if var.shape != (n, m):
            raise ConfigError("cost.regressor_var must have shape (M,) or (N, M)")
    costs: list[CostModel] = []
    for k in range(n):
        try:
            data = LinearModelData(w_true, spec.rows, float(noise_std[k]), var[k])
        except ValueError as exc:
            raise ConfigError(f"cost: {exc}") from exc
        if spec.model == "quadratic":
            costs.append(QuadraticCost(data))
        else:
            costs.append(SparseRegCost(data, spec.rho, spec.epsilon, n))
    return costs, w_true


def combination_weights(rule: str, net: Network) -> np.ndarray:
    if rule == "averaging":
        return averaging_weights(net)
    if rule == "metropolis":
        return metropolis_weights(net)
    return np.eye(net.n_nodes)


def build_strategy(spec: StrategySpec, net: Network) -> Strategy:
    """Incremental runs apply ``mu / N`` per node visit, matching diffusion's convergence rate."""
    n = net.n_nodes
    mu = np.asarray(spec.mu, dtype=float)
    if spec.strategy == "incremental":
        mu = mu / n
    return Strategy(
        kind=spec.strategy,
        a=combination_weights(spec.a_weights, net),
        c=combination_weights(spec.c_weights, net),
        mu=mu,
        schedule=spec.mu_schedule,
        label=spec.label,
    )


def make_trajectory(waypoints: Sequence[dict], dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Piecewise-linear target path; constant before the first and after the last waypoint."""
    if not waypoints:
        raise ConfigError("trajectory needs at least one waypoint")
    try:
        its = np.array([float(p["iteration"]) for p in waypoints])
        pos = np.array([np.asarray(p["position"], dtype=float) for p in waypoints])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad trajectory waypoint: {exc}") from exc
    if set().union(*(set(p) for p in waypoints)) - {"iteration", "position"}:
        raise ConfigError("trajectory waypoints accept only 'iteration' and 'position'")
    if pos.shape != (len(its), dim):
        raise ConfigError(f"trajectory positions must be {dim}-vectors")
    if np.any(np.diff(its) <= 0):
        raise ConfigError("trajectory iterations must be strictly increasing")

    def target(i):
        i = np.asarray(i, dtype=float)
        return np.stack([np.interp(i, its, pos[:, c]) for c in range(dim)], axis=-1)

    return target


@dataclass
class Setup:
    net: Network
    costs: list[CostModel]
    w_true: np.ndarray
    reference: np.ndarray
    strategies: list[Strategy]
    trajectory: Callable | None


def prepare(config: ExperimentConfig) -> Setup:
    net = config.network.build()
    costs, w_true = build_costs(config.cost, net)
    strategies = [build_strategy(s, net) for s in config.strategies]
    trajectory = None
    if config.run.trajectory is not None:
        trajectory = make_trajectory(config.run.trajectory, w_true.shape[0])
    if config.run.reference == "global_minimizer":
        reference = global_minimizer(costs)
    else:
        reference = w_true
    if config.run.init is not None and np.asarray(config.run.init).shape != w_true.shape:
        raise ConfigError("run.init must match the parameter dimension")
    return Setup(net, costs, w_true, reference, strategies, trajectory)


# ---------------------------------------------------------------- simulation


@dataclass
class SimulationResult:
    labels: list[str]
    msd_trials: dict[str, np.ndarray]  # (horizon + 1, T) network MSD per trial
    node_tail: dict[str, np.ndarray]  # (T, N) tail-averaged squared error per node
    diverged: dict[str, np.ndarray]  # (T,) bool
    node0: dict[str, np.ndarray]  # (horizon + 1, M) estimate of node 0 in trial 0
    targets: np.ndarray  # (horizon + 1, M)
    n_tail: int
    node_sq_error: dict[str, np.ndarray] | None = None  # (horizon + 1, T, N)
    aux_tail: dict[str, np.ndarray] | None = None  # (T,) tail MSD against aux reference


def tail_length(horizon: int, fraction: float) -> int:
    return max(1, min(horizon, int(round(fraction * horizon))))


def trial_generators(seed: int, n_trials: int, n_nodes: int) -> list[list[np.random.Generator]]:
    """One independent stream per (trial, node), stable under changes of the other counts."""
    root = np.random.SeedSequence(seed)
    return [[np.random.default_rng(s) for s in t.spawn(n_nodes)] for t in root.spawn(n_trials)]


def simulate(
    costs: Sequence[CostModel],
    strategies: Sequence[Strategy],
    horizon: int,
    n_trials: int,
    seed: int,
    reference=None,
    trajectory: Callable | None = None,
    init=None,
    tail_fraction: float = DEFAULT_TAIL,
    aux_reference=None,
    per_node: bool = False,
) -> SimulationResult:
    """Run every strategy on shared data for ``n_trials`` independent trials."""
    n, m = len(costs), costs[0].dim
    iters = np.arange(horizon + 1)
    if trajectory is not None:
        targets = trajectory(iters)
    else:
        targets = np.broadcast_to(np.asarray(reference, dtype=float), (horizon + 1, m))
    gens = trial_generators(seed, n_trials, n)
    w0 = np.zeros(m) if init is None else np.asarray(init, dtype=float)
    labels = [s.label for s in strategies]
    w = {lab: np.broadcast_to(w0, (n_trials, n, m)).copy() for lab in labels}
    alive = {lab: np.ones(n_trials, dtype=bool) for lab in labels}
    msd = {lab: np.empty((horizon + 1, n_trials)) for lab in labels}
    n_tail = tail_length(horizon, tail_fraction)
    tail_start = horizon - n_tail + 1
    node_tail = {lab: np.zeros((n_trials, n)) for lab in labels}
    aux = None if aux_reference is None else {lab: np.zeros(n_trials) for lab in labels}
    node_sq = {lab: np.empty((horizon + 1, n_trials, n)) for lab in labels} if per_node else None
    node0 = {lab: np.empty((horizon + 1, m)) for lab in labels}

    def record(lab, i, wl):
        err = np.sum((wl - targets[i]) ** 2, axis=-1)
        msd[lab][i] = err.mean(axis=-1)
        node0[lab][i] = wl[0, 0]
        if node_sq is not None:
            node_sq[lab][i] = err
        if i >= tail_start:
            node_tail[lab] += err
            if aux is not None:
                aux[lab] += np.sum((wl - aux_reference) ** 2, axis=-1).mean(axis=-1)

    for lab in labels:
        record(lab, 0, w[lab])
    for c0 in range(1, horizon + 1, CHUNK):
        c1 = min(c0 + CHUNK, horizon + 1)
        tgt = targets[c0:c1] if trajectory is not None else None
        chunk = []
        for k in range(n):
            per_trial = [costs[k].draw(gens[t][k], (c1 - c0,), tgt) for t in range(n_trials)]
            chunk.append(tuple(np.stack(f, axis=1) for f in zip(*per_trial)))
        for j in range(c1 - c0):
            i = c0 + j
            field = GradientField(costs, [tuple(f[j] for f in s) for s in chunk])
            for strat in strategies:
                lab = strat.label
                with np.errstate(all="ignore"):
                    wl = strat.update(w[lab], i, field)
                    # an overflowing squared norm counts as divergence as well
                    finite = np.isfinite(np.sum(wl * wl, axis=(-2, -1)))
                    if not finite.all() or not alive[lab].all():
                        newly = alive[lab] & ~finite
                        if newly.any():
                            log.info("%s: %d trial(s) diverged at iteration %d", lab, int(newly.sum()), i)
                        alive[lab] &= finite
                        wl[~alive[lab]] = 0.0
                    w[lab] = wl
                    record(lab, i, wl)
    for lab in labels:
        node_tail[lab] /= n_tail
        if aux is not None:
            aux[lab] /= n_tail
    return SimulationResult(
        labels=labels,
        msd_trials=msd,
        node_tail=node_tail,
        diverged={lab: ~alive[lab] for lab in labels},
        node0=node0,
        targets=np.array(targets),
        n_tail=n_tail,
        node_sq_error=node_sq,
        aux_tail=aux,
    )


# ---------------------------------------------------------------- aggregation


@dataclass
class LearningCurve:
    iterations: np.ndarray
    msd: dict[str, np.ndarray]
    n_trials: int
    n_diverged: dict[str, int]
    seed: int
    node_msd: dict[str, np.ndarray] | None = None

    @property
    def msd_db(self) -> dict[str, np.ndarray]:
        return {lab: to_db(v) for lab, v in self.msd.items()}


@dataclass
class SteadyState:
    msd: float
    msd_db: float
    se: float
    se_db: float
    per_trial: np.ndarray
    node_msd: np.ndarray

    @property
    def worst_node_msd(self) -> float:
        return float(self.node_msd.max())


@dataclass
class SteadyStateEstimate:
    tail_fraction: float
    by_strategy: dict[str, SteadyState | None]

    def __getitem__(self, label: str) -> SteadyState | None:
        return self.by_strategy[label]

    def __contains__(self, label: str) -> bool:
        return label in self.by_strategy

    def items(self):
        return self.by_strategy.items()


def learning_curve(sim: SimulationResult, n_trials: int, seed: int) -> LearningCurve:
    msd, node = {}, {} if sim.node_sq_error is not None else None
    for lab in sim.labels:
        ok = ~sim.diverged[lab]
        msd[lab] = sim.msd_trials[lab][:, ok].mean(axis=1) if ok.any() else np.full(len(sim.targets), np.nan)
        if node is not None:
            node[lab] = sim.node_sq_error[lab][:, ok].mean(axis=1) if ok.any() else None
    return LearningCurve(
        iterations=np.arange(len(sim.targets)),
        msd=msd,
        n_trials=n_trials,
        n_diverged={lab: int(sim.diverged[lab].sum()) for lab in sim.labels},
        seed=seed,
        node_msd=node,
    )


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    mean = float(x.mean())
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return mean, se


def steady_state(sim: SimulationResult, tail_fraction: float = DEFAULT_TAIL) -> SteadyStateEstimate:
    """Tail average over the final ``tail_fraction`` of iterations; s.e. across trials."""
    horizon = len(sim.targets) - 1
    n_tail = tail_length(horizon, tail_fraction)
    out: dict[str, SteadyState | None] = {}
    for lab in sim.labels:
        ok = ~sim.diverged[lab]
        if not ok.any():
            out[lab] = None
            continue
        per_trial = sim.msd_trials[lab][-n_tail:, ok].mean(axis=0)
        mean, se = _mean_se(per_trial)
        se_db = 10.0 / math.log(10.0) * se / mean if mean > 0 else 0.0
        out[lab] = SteadyState(mean, to_db(mean), se, se_db, per_trial, sim.node_tail[lab][ok].mean(axis=0))
    return SteadyStateEstimate(tail_fraction, out)


# ---------------------------------------------------------------- theory overlay


@dataclass
class TheoryOverlay:
    network_msd: float | None
    network_msd_db: float | None
    stable: bool
    caveat: str = ""
    error: str = ""
    report: object | None = None


def theory_overlay(config: ExperimentConfig, setup: Setup | None = None) -> dict[str, TheoryOverlay | None]:
    """Steady-state theory for each constant-step diffusion-family strategy; ``None`` otherwise."""
    setup = prepare(config) if setup is None else setup
    # linearize at the fixed point of the recursion; a biased reference adds its squared offset
    if config.cost.model == "sparse":
        w_opt = global_minimizer(setup.costs)
    else:
        w_opt = setup.w_true
    bias = float(np.sum((setup.reference - w_opt) ** 2))
    out: dict[str, TheoryOverlay | None] = {}
    for strat in setup.strategies:
        if strat.cm is None or setup.trajectory is not None:
            out[strat.label] = None
            continue
        try:
            rep = analyze(strat.cm, setup.costs, w_opt)
        except (UnstableError, np.linalg.LinAlgError) as exc:
            out[strat.label] = TheoryOverlay(None, None, False, error=str(exc))
            continue
        if not rep.stable or rep.network_mse is None:
            out[strat.label] = TheoryOverlay(None, None, False, rep.caveat, "unstable F; overlay omitted", rep)
            continue
        total = rep.network_mse + bias
        out[strat.label] = TheoryOverlay(total, to_db(total), True, rep.caveat, "", rep)
    return out


# ---------------------------------------------------------------- experiments


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    curve: LearningCurve
    steady: SteadyStateEstimate
    theory: dict[str, TheoryOverlay | None]
    sim: SimulationResult
    setup: Setup
    files: list[Path] = field(default_factory=list)

    def summary_rows(self) -> list[dict]:
        rows = []
        for lab in self.curve.msd:
            ss = self.steady[lab]
            th = self.theory.get(lab)
            rows.append(
                {
                    "strategy": lab,
                    "msd_db": None if ss is None else ss.msd_db,
                    "se_db": None if ss is None else ss.se_db,
                    "theory_msd_db": None if th is None else th.network_msd_db,
                    "stable": None if th is None else th.stable,
                    "diverged": self.curve.n_diverged[lab],
                    "caveat": "" if th is None else th.caveat,
                }
            )
        return rows


def _simulate_config(config: ExperimentConfig, setup: Setup, aux_reference=None) -> SimulationResult:
    r = config.run
    return simulate(
        setup.costs,
        setup.strategies,
        r.horizon,
        r.n_trials,
        r.seed,
        reference=setup.reference,
        trajectory=setup.trajectory,
        init=r.init,
        tail_fraction=r.tail_fraction,
        aux_reference=aux_reference,
        per_node=config.output.per_node,
    )


def _check_alive(curve: LearningCurve) -> None:
    if all(v == curve.n_trials for v in curve.n_diverged.values()):
        raise AllTrialsDiverged("every trial of every strategy diverged")


def run_experiment(config: ExperimentConfig, write: bool = False, with_theory: bool = True) -> ExperimentResult:
    """Monte Carlo learning curves and steady-state MSD for every configured strategy."""
    setup = prepare(config)
    sim = _simulate_config(config, setup)
    curve = learning_curve(sim, config.run.n_trials, config.run.seed)
    _check_alive(curve)
    steady = steady_state(sim, config.run.tail_fraction)
    theory = theory_overlay(config, setup) if with_theory else {}
    res = ExperimentResult(config, curve, steady, theory, sim, setup)
    if write:
        res.files = write_experiment(res)
    return res


@dataclass
class BiasDecomposition:
    """``total ~= bias + variance``; ``residual`` holds the measured cross term."""

    bias: float
    w_hat: np.ndarray
    total: dict[str, float]
    variance: dict[str, float]
    theory_variance: dict[str, float | None]
    residual: dict[str, float]
    residual_se: dict[str, float]


def biased_reference_msd(config: ExperimentConfig) -> BiasDecomposition:
    """Split MSD against ``w_true`` into the minimizer bias and the MSD around the minimizer."""
    if config.cost.model != "sparse":
        raise ConfigError("the bias decomposition applies to the sparse model")
    config = replace(config, run=replace(config.run, reference="model_w_true", trajectory=None))
    setup = prepare(config)
    w_hat = global_minimizer(setup.costs)
    bias = float(np.sum((setup.w_true - w_hat) ** 2))
    sim = _simulate_config(config, setup, aux_reference=w_hat)
    hat_setup = replace(setup, reference=w_hat)
    theory = theory_overlay(config, hat_setup)
    total, var, res, res_se, th = {}, {}, {}, {}, {}
    for lab in sim.labels:
        ok = ~sim.diverged[lab]
        if not ok.any():
            continue
        tot_t = sim.node_tail[lab][ok].mean(axis=1)
        var_t = sim.aux_tail[lab][ok]
        total[lab] = float(tot_t.mean())
        var[lab] = float(var_t.mean())
        res[lab], res_se[lab] = _mean_se(tot_t - var_t - bias)
        ov = theory.get(lab)
        th[lab] = None if ov is None else ov.network_msd
    return BiasDecomposition(bias, w_hat, total, var, th, res, res_se)


SWEEP_PARAMS = ("mu", "rho", "epsilon")


@dataclass
class SweepRow:
    param: str
    value: float
    strategy: str
    msd_db: float | None
    theory_msd_db: float | None
    se_db: float | None = None
    per_trial: np.ndarray | None = None
    error: str = ""


@dataclass
class SweepResult:
    rows: list[SweepRow]
    files: list[Path] = field(default_factory=list)

    def lookup(self, value: float, strategy: str) -> SweepRow:
        for r in self.rows:
            if r.value == value and r.strategy == strategy:
                return r
        raise KeyError((value, strategy))


def _with_param(config: ExperimentConfig, param: str, value: float) -> ExperimentConfig:
    if param == "mu":
        return replace(config, strategies=[replace(s, mu=value) for s in config.strategies])
    return replace(config, cost=replace(config.cost, **{param: value}))


def sweep(config: ExperimentConfig, param: str, values: Sequence[float], write: bool = False) -> SweepResult:
    """One experiment per value with identical seeds; per-value failures are recorded, not raised."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}")
    if len(values) == 0:
        raise ConfigError("sweep needs at least one value")
    rows: list[SweepRow] = []
    for v in values:
        v = float(v)
        try:
            res = run_experiment(_with_param(config, param, v))
        except (ConfigError, AllTrialsDiverged, UnstableError, FloatingPointError) as exc:
            log.warning("sweep %s=%g failed: %s", param, v, exc)
            rows.extend(SweepRow(param, v, s.label, None, None, error=str(exc)) for s in config.strategies)
            continue
        for lab in res.curve.msd:
            ss = res.steady[lab]
            th = res.theory.get(lab)
            rows.append(
                SweepRow(
                    param,
                    v,
                    lab,
                    None if ss is None else ss.msd_db,
                    None if th is None else th.network_msd_db,
                    None if ss is None else ss.se_db,
                    None if ss is None else ss.per_trial,
                    "" if ss is not None else "all trials diverged",
                )
            )
    out = SweepResult(rows)
    if write:
        out.files = write_sweep(config, out)
    return out


@dataclass
class TrackingResult:
    experiment: ExperimentResult
    overlay: list[dict]

    @property
    def curve(self) -> LearningCurve:
        return self.experiment.curve


def tracking_experiment(config: ExperimentConfig, write: bool = False) -> TrackingResult:
    """Moving-target run plus node-0 estimate (trial 0) next to the true target path."""
    if config.run.trajectory is None:
        # a single static waypoint at the model parameter reduces to a stationary run
        w = config.cost.resolve_w_true().tolist()
        config = replace(config, run=replace(config.run, trajectory=[{"iteration": 0, "position": w}]))
    res = run_experiment(config, with_theory=False)
    sim = res.sim
    overlay = [{"iteration": int(i), "strategy": "target", "w": sim.targets[i].tolist()} for i in range(len(sim.targets))]
    for lab in sim.labels:
        overlay.extend({"iteration": int(i), "strategy": lab, "w": sim.node0[lab][i].tolist()} for i in range(len(sim.targets)))
    out = TrackingResult(res, overlay)
    if write:
        res.files = write_experiment(res) + [write_overlay(config, overlay)]
    return out


# ---------------------------------------------------------------- artifacts


def version_string() -> str:
    """``git describe``-style identifier of the code that produced an artifact."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "-C", str(here), "describe", "--tags", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _out_dir(config: ExperimentConfig) -> Path:
    d = Path(config.output.dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_curves(path: Path, curve: LearningCurve) -> Path:
    per_node = curve.node_msd is not None
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "strategy", "msd_db"] + (["node"] if per_node else []))
        for lab, vals in curve.msd.items():
            for i, v in zip(curve.iterations, to_db(vals) if np.all(np.isfinite(vals)) else vals):
                wr.writerow([int(i), lab, _fmt(v)] + (["network"] if per_node else []))
            if per_node and curve.node_msd[lab] is not None:
                node_db = to_db(curve.node_msd[lab])
                for k in range(node_db.shape[1]):
                    for i in curve.iterations:
                        wr.writerow([int(i), lab, _fmt(node_db[i, k]), k])
    return path


def read_curves(path) -> list[tuple]:
    """Parse a curves CSV back into ``(iteration, strategy, msd_db[, node])`` tuples."""
    rows = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        for r in rd:
            row = (int(r[0]), r[1], float(r[2]))
            if len(header) == 4:
                row = row + (r[3] if r[3] == "network" else int(r[3]),)
            rows.append(row)
    return rows


def _metadata(config: ExperimentConfig, extra: dict) -> dict:
    return {
        "version": version_string(),
        "seed": config.run.seed,
        "n_trials": config.run.n_trials,
        "horizon": config.run.horizon,
        "config": config.to_dict(),
        **extra,
    }


def _write_json(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x).__name__)


def write_experiment(res: ExperimentResult) -> list[Path]:
    cfg = res.config
    d = _out_dir(cfg)
    p = cfg.output.prefix
    curves = write_curves(d / f"{p}_curves.csv", res.curve)
    meta = _metadata(
        cfg,
        {
            "divergent_trials": res.curve.n_diverged,
            "tail_fraction": res.steady.tail_fraction,
            "summary": res.summary_rows(),
        },
    )
    return [curves, _write_json(d / f"{p}_metadata.json", meta)]


def write_overlay(config: ExperimentConfig, overlay: list[dict]) -> Path:
    path = _out_dir(config) / f"{config.output.prefix}_overlay.csv"
    dim = len(overlay[0]["w"])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "strategy"] + [f"w_{c}" for c in range(dim)])
        for row in overlay:
            wr.writerow([row["iteration"], row["strategy"]] + [_fmt(x) for x in row["w"]])
    return path


def write_sweep(config: ExperimentConfig, result: SweepResult) -> list[Path]:
    d = _out_dir(config)
    p = config.output.prefix
    path = d / f"{p}_sweep.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["param", "value", "strategy", "msd_db", "theory_msd_db"])
        for r in result.rows:
            wr.writerow([r.param, _fmt(r.value), r.strategy, _fmt(r.msd_db), _fmt(r.theory_msd_db)])
    meta = _metadata(
        config,
        {
            "rows": [
                {"value": r.value, "strategy": r.strategy, "se_db": r.se_db, "error": r.error}
                for r in result.rows
            ]
        },
    )
    return [path, _write_json(d / f"{p}_sweep_metadata.json", meta)]


def theory_reports(config: ExperimentConfig) -> dict[str, TheoryOverlay | None]:
    return theory_overlay(config)


def write_theory(config: ExperimentConfig, overlays: dict[str, TheoryOverlay | None]) -> list[Path]:
    d = _out_dir(config)
    p = config.output.prefix
    doc, flat = {}, []
    for lab, ov in overlays.items():
        if ov is None or ov.report is None:
            doc[lab] = None if ov is None else {"error": ov.error}
            continue
        doc[lab] = ov.report.to_dict()
        flat.append({"strategy": lab, **ov.report.scalars()})
    json_path = _write_json(d / f"{p}_theory.json", _metadata(config, {"theory": doc}))
    csv_path = d / f"{p}_theory.csv"
    cols = ["strategy"] + sorted({k for row in flat for k in row} - {"strategy"})
    with open(csv_path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        wr.writeheader()
        for row in flat:
            wr.writerow({k: row.get(k, "") for k in cols})
    return [json_path, csv_path]
