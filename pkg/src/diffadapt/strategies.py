"""Diffusion, consensus and incremental iteration engines.

Network estimates are stored as arrays of shape ``(..., N, M)``.  Any leading
dimensions (typically a Monte Carlo trial axis) are carried through every
step, so a batch of independent trials advances with one call.  All updates
are synchronous: every node reads the iteration ``i - 1`` values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .costs import CostModel
from .graph import CombinationMatrices, check_column_stochastic, strategy_matrices


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, message: str = "non-finite estimate"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class StepSizeSchedule:
    """``constant``: ``mu(i) = base``; ``harmonic``: ``mu(i) = base / i`` for ``i >= 1``."""

    kind: str = "constant"
    base: float | np.ndarray = 1e-3

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic"):
            raise ValueError(f"unknown step-size schedule {self.kind!r}")
        if np.any(np.asarray(self.base) <= 0):
            raise ValueError("step-size base must be positive")

    def __call__(self, i: int):
        if self.kind == "constant":
            return self.base
        if i < 1:
            raise ValueError("harmonic schedule is defined for i >= 1")
        return np.asarray(self.base) / i


@dataclass(frozen=True)
class StrategyState:
    w: np.ndarray
    iteration: int = 0
    psi: np.ndarray | None = None

    def advanced(self, w: np.ndarray, psi: np.ndarray | None = None) -> "StrategyState":
        return StrategyState(w, self.iteration + 1, psi)


def initial_state(n_nodes: int, dim: int, init=None, batch: tuple[int, ...] = ()) -> StrategyState:
    w0 = np.zeros(dim) if init is None else np.asarray(init, dtype=float)
    w = np.broadcast_to(w0, batch + (n_nodes, dim)).copy()
    return StrategyState(w)


def _expand_sample(sample: tuple, n_lead: int) -> tuple:
    # insert a broadcast axis for the evaluating node right after the leading dims
    out = []
    for f in sample:
        f = np.asarray(f)
        out.append(f.reshape(f.shape[:n_lead] + (1,) + f.shape[n_lead:]))
    return tuple(out)


class GradientField:
    """Gradients of every node cost for one iteration.

    With ``samples=None`` exact gradients are returned.  Otherwise
    ``samples[l]`` is node ``l``'s data realization for this iteration, and it
    is reused by every node that evaluates ``l``'s gradient (gradient noise
    ``v_l`` is shared across the neighborhood).
    """

    def __init__(self, costs: Sequence[CostModel], samples: Sequence[tuple] | None = None):
        self.costs = list(costs)
        self.samples = None if samples is None else list(samples)

    @property
    def exact(self) -> bool:
        return self.samples is None

    def node(self, l: int, w: np.ndarray) -> np.ndarray:
        if self.samples is None:
            return self.costs[l].gradient(w)
        return self.costs[l].sample_gradient(w, self.samples[l])

    def local(self, points: np.ndarray) -> np.ndarray:
        """``out[..., k, :] = grad_k(points[..., k, :])``."""
        out = np.empty_like(points)
        for k in range(len(self.costs)):
            out[..., k, :] = self.node(k, points[..., k, :])
        return out

    def pairwise(self, points: np.ndarray) -> np.ndarray:
        """``out[..., l, k, :] = grad_l(points[..., k, :])``."""
        n = len(self.costs)
        lead = points.shape[:-2]
        out = np.empty(lead + (n,) + points.shape[-2:])
        for l in range(n):
            if self.samples is None:
                out[..., l, :, :] = self.costs[l].gradient(points)
            else:
                s = _expand_sample(self.samples[l], len(lead))
                out[..., l, :, :] = self.costs[l].sample_gradient(points, s)
        return out

    def combined(self, s: np.ndarray, points: np.ndarray) -> np.ndarray:
        """``sum_l s[l, k] grad_l(points_k)`` for every ``k``."""
        if _is_identity(s):
            return self.local(points)
        return np.einsum("lk,...lkm->...km", s, self.pairwise(points))


def draw_samples(costs: Sequence[CostModel], rngs, size=(), target=None) -> list[tuple]:
    """One data draw per node; ``rngs`` is a single generator or one per node."""
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs] * len(costs)
    return [c.draw(r, size, target) for c, r in zip(costs, rngs)]


def _is_identity(m: np.ndarray) -> bool:
    return m.shape[0] == m.shape[1] and np.array_equal(m, np.eye(m.shape[0]))


def _combine(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    # x_k' = sum_l p[l, k] x_l
    if _is_identity(p):
        return x
    return np.einsum("lk,...lm->...km", p, x)


def _mu_column(mu, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(mu, dtype=float), (n,))[:, None]


def diffusion_update(w: np.ndarray, cm: CombinationMatrices, field: GradientField, mu=None):
    """One synchronous general-diffusion update; returns ``(w_next, psi)``."""
    mu = cm.mu if mu is None else mu
    if mu is None:
        raise ValueError("step sizes missing: pass mu or use CombinationMatrices.with_mu")
    n = cm.n_nodes
    phi = _combine(cm.p1, w)
    psi = phi - _mu_column(mu, n) * field.combined(cm.s, phi)
    return _combine(cm.p2, psi), psi


def _fields_for(costs, rng, exact, size=()):
    if isinstance(costs, GradientField):
        return costs
    if exact:
        return GradientField(costs)
    if rng is None:
        raise ValueError("stochastic step needs an rng")
    return GradientField(costs, draw_samples(costs, rng, size))


def _check_finite(w: np.ndarray, iteration: int) -> None:
    if not np.all(np.isfinite(w)):
        raise DivergenceError(iteration)


def diffusion_step(state: StrategyState, cm: CombinationMatrices, costs, rng=None, exact: bool = False) -> StrategyState:
    """Advance the general recursion ``phi -> psi -> w`` by one iteration.

    ``costs`` may be a list of node costs (data is drawn from ``rng``) or a
    prepared :class:`GradientField`.
    """
    field = _fields_for(costs, rng, exact, state.w.shape[:-2])
    w, psi = diffusion_update(state.w, cm, field)
    _check_finite(w, state.iteration + 1)
    return state.advanced(w, psi)


def atc_step(state, a, c, mu, costs, rng=None, exact: bool = False) -> StrategyState:
    return diffusion_step(state, strategy_matrices("atc", a, c).with_mu(mu), costs, rng, exact)


def cta_step(state, a, c, mu, costs, rng=None, exact: bool = False) -> StrategyState:
    return diffusion_step(state, strategy_matrices("cta", a, c).with_mu(mu), costs, rng, exact)


def _incremental_pass(w_prev: np.ndarray, field: GradientField, mu: float) -> np.ndarray:
    psi = np.asarray(w_prev, dtype=float)
    for k in range(len(field.costs)):
        psi = psi - mu * field.node(k, psi)
    return psi


def incremental_cycle(w_prev: np.ndarray, costs, mu: float, rng=None, exact: bool = False) -> np.ndarray:
    """One pass ``psi_k = psi_{k-1} - mu grad_k(psi_{k-1})`` over nodes ``1..N`` in order."""
    field = _fields_for(costs, rng, exact, np.shape(w_prev)[:-1])
    psi = _incremental_pass(w_prev, field, mu)
    if not np.all(np.isfinite(psi)):
        raise DivergenceError(-1, "non-finite incremental estimate")
    return psi


def consensus_update(w: np.ndarray, a: np.ndarray, mu_i, field: GradientField) -> np.ndarray:
    # gradient taken at the pre-combination iterate w_{k,i-1}
    n = a.shape[0]
    return _combine(a, w) - _mu_column(mu_i, n) * field.local(w)


def consensus_step(state: StrategyState, a: np.ndarray, schedule: StepSizeSchedule, costs, rng=None, exact: bool = False) -> StrategyState:
    check_column_stochastic(a, "A")
    field = _fields_for(costs, rng, exact, state.w.shape[:-2])
    w = consensus_update(state.w, a, schedule(state.iteration + 1), field)
    _check_finite(w, state.iteration + 1)
    return state.advanced(w)


STRATEGY_NAMES = ("atc", "cta", "noncoop", "incremental", "consensus")


@dataclass(frozen=True)
class Strategy:
    """A fully specified iteration rule on a given network.

    ``a`` and ``c`` are the combination matrices; ``mu`` holds per-node step
    sizes, and for ``incremental`` it is the per-visit step actually applied.
    """

    kind: str
    a: np.ndarray
    c: np.ndarray
    mu: np.ndarray
    schedule: str = "constant"
    label: str = ""
    cm: CombinationMatrices | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGY_NAMES}")
        n = np.asarray(self.a).shape[0]
        object.__setattr__(self, "mu", np.broadcast_to(np.asarray(self.mu, dtype=float), (n,)).copy())
        if self.schedule not in ("constant", "harmonic"):
            raise ValueError(f"unknown step-size schedule {self.schedule!r}")
        if self.schedule == "harmonic" and self.kind != "consensus":
            raise ValueError("harmonic step sizes are only supported for the consensus strategy")
        if self.kind in ("atc", "cta", "noncoop"):
            kind = "noncooperative" if self.kind == "noncoop" else self.kind
            cm = strategy_matrices(kind, self.a, self.c).with_mu(self.mu)
            object.__setattr__(self, "cm", cm)
        elif self.kind == "consensus":
            check_column_stochastic(self.a, "A")
        if not self.label:
            object.__setattr__(self, "label", self.kind)

    @property
    def n_nodes(self) -> int:
        return np.asarray(self.a).shape[0]

    def step_size(self, i: int) -> np.ndarray:
        return StepSizeSchedule(self.schedule, self.mu)(i)

    def update(self, w: np.ndarray, i: int, field: GradientField) -> np.ndarray:
        """Map iteration ``i - 1`` estimates to iteration ``i`` (``i >= 1``)."""
        if self.kind == "incremental":
            # one shared estimate, replicated across the node axis
            psi = _incremental_pass(w[..., 0, :], field, float(self.mu[0]))
            return np.broadcast_to(psi[..., None, :], w.shape).copy()
        if self.kind == "consensus":
            return consensus_update(w, self.a, self.step_size(i), field)
        return diffusion_update(w, self.cm, field)[0]


@dataclass
class Trajectory:
    w: np.ndarray  # (horizon + 1, ..., N, M)
    sq_error: np.ndarray  # (horizon + 1, ..., N)

    @property
    def msd(self) -> np.ndarray:
        return self.sq_error.mean(axis=-1)


def run(
    strategy: Strategy,
    costs: Sequence[CostModel],
    horizon: int,
    rng: np.random.Generator | None,
    reference,
    init=None,
    exact: bool = False,
) -> Trajectory:
    """Iterate ``strategy`` for ``horizon`` steps from ``init`` (zeros by default).

    ``reference`` is a fixed vector or a callable ``i -> vector`` (moving
    target); data for iteration ``i`` is generated around ``reference(i)``.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    n, m = strategy.n_nodes, costs[0].dim
    ref = reference if callable(reference) else (lambda i, r=np.asarray(reference, float): r)
    moving = callable(reference)
    w = initial_state(n, m, init).w
    ws = [w]
    errs = [np.sum((w - ref(0)) ** 2, axis=-1)]
    for i in range(1, horizon + 1):
        if exact:
            field = GradientField(costs)
        else:
            field = GradientField(costs, draw_samples(costs, rng, (), ref(i) if moving else None))
        with np.errstate(over="ignore", invalid="ignore"):
            w = strategy.update(w, i, field)
            _check_finite(w, i)
            errs.append(np.sum((w - ref(i)) ** 2, axis=-1))
        ws.append(w)
    return Trajectory(np.array(ws), np.array(errs))
