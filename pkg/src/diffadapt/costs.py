"""Per-node cost models: exact and stochastic gradients, Hessians, noise statistics.

Every model evaluates gradients on arrays with arbitrary leading dimensions:
``w`` has shape ``(..., M)`` and a data sample returned by ``draw`` carries
matching leading dimensions, so one call can serve many trials (or many
evaluation points) at once.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class HessianBounds(NamedTuple):
    lam_min: float
    lam_max: float
    non_convex: bool = False


class ConvergenceError(RuntimeError):
    pass


def _as_shape(size) -> tuple[int, ...]:
    if isinstance(size, (int, np.integer)):
        return (int(size),)
    return tuple(int(n) for n in size)


class CostModel(ABC):
    """A node cost ``J_l(w)`` that is the expectation of a sampled loss."""

    dim: int

    @abstractmethod
    def cost(self, w: np.ndarray) -> np.ndarray:
        """Exact expected cost."""

    @abstractmethod
    def gradient(self, w: np.ndarray) -> np.ndarray:
        """Exact gradient of the expected cost."""

    @abstractmethod
    def hessian(self, w: np.ndarray) -> np.ndarray:
        """Hessian at a single point, shape ``(M, M)``."""

    @abstractmethod
    def draw(self, rng: np.random.Generator, size=(), target=None) -> tuple:
        """Sample one data realization per entry of ``size``.

        ``target`` overrides the generating parameter (moving-target runs); the
        random numbers consumed do not depend on it.
        """

    @abstractmethod
    def sample_gradient(self, w: np.ndarray, sample: tuple) -> np.ndarray:
        """Instantaneous gradient built from a drawn sample."""

    @abstractmethod
    def hessian_bounds(self) -> HessianBounds:
        ...

    @abstractmethod
    def noise_covariance(self, w: np.ndarray) -> np.ndarray:
        """Analytic ``E v(w) v(w)^T`` of the gradient noise at ``w``."""

    @abstractmethod
    def noise_moments(self, w_ref: np.ndarray) -> tuple[float, float]:
        """``(alpha, sigma_v2)`` with ``E||v(w)||^2 <= alpha ||w_ref - w||^2 + sigma_v2``."""

    @property
    def minimizer_hint(self) -> np.ndarray | None:
        return None

    def initial_guess(self) -> np.ndarray:
        hint = self.minimizer_hint
        return np.zeros(self.dim) if hint is None else np.array(hint, dtype=float)

    def stochastic_gradient(self, w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.sample_gradient(w, self.draw(rng, w.shape[:-1]))


@dataclass(frozen=True)
class LinearModelData:
    """Generator for ``d = U w_true + z`` with ``K x M`` Gaussian regressors.

    ``regressor_var`` holds the per-column variance of ``U`` (unit by default),
    so ``E[U^T U] = K diag(regressor_var)``.
    """

    w_true: np.ndarray
    rows: int = 1
    noise_std: float = 1.0
    regressor_var: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.w_true, dtype=float)
        if w.ndim != 1:
            raise ValueError("w_true must be a vector")
        object.__setattr__(self, "w_true", w)
        if self.rows < 1:
            raise ValueError("rows must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        var = np.ones_like(w) if self.regressor_var is None else np.asarray(self.regressor_var, dtype=float)
        if var.shape != w.shape or (var <= 0).any():
            raise ValueError("regressor_var must be a positive vector matching w_true")
        object.__setattr__(self, "regressor_var", var)

    @property
    def dim(self) -> int:
        return self.w_true.shape[0]


class QuadraticCost(CostModel):
    """``J(w) = E||d - U w||^2`` under the linear data model."""

    def __init__(self, data: LinearModelData):
        self.data = data
        self.dim = data.dim
        self._var = data.regressor_var
        self._sd = np.sqrt(self._var)

    def cost(self, w):
        e = np.asarray(w, dtype=float) - self.data.w_true
        k = self.data.rows
        return k * np.sum(self._var * e * e, axis=-1) + k * self.data.noise_std**2

    def gradient(self, w):
        e = np.asarray(w, dtype=float) - self.data.w_true
        return 2.0 * self.data.rows * self._var * e

    def hessian(self, w):
        return np.diag(2.0 * self.data.rows * self._var)

    def draw(self, rng, size=(), target=None):
        size = _as_shape(size)
        k, m = self.data.rows, self.dim
        u = rng.standard_normal(size + (k, m)) * self._sd
        z = self.data.noise_std * rng.standard_normal(size + (k,))
        t = self.data.w_true if target is None else np.asarray(target, dtype=float)
        d = (u @ t[..., None])[..., 0] + z
        return u, d

    def sample_gradient(self, w, sample):
        u, d = sample
        r = (u @ np.asarray(w, dtype=float)[..., None])[..., 0] - d
        return 2.0 * (np.swapaxes(u, -1, -2) @ r[..., None])[..., 0]

    def hessian_bounds(self):
        h = 2.0 * self.data.rows * self._var
        return HessianBounds(float(h.min()), float(h.max()))

    def _noise_quadratic_form(self) -> np.ndarray:
        # E||v(w)||^2 = a^T Q a + 4 K sigma_z^2 tr(R), a = w - w_true
        r = self._var
        return 4.0 * self.data.rows * np.diag(r.sum() * r + r * r)

    def noise_covariance(self, w):
        a = np.asarray(w, dtype=float) - self.data.w_true
        r = self._var
        k, s2 = self.data.rows, self.data.noise_std**2
        ra = r * a
        return 4.0 * k * (np.dot(a, ra) * np.diag(r) + np.outer(ra, ra)) + 4.0 * k * s2 * np.diag(r)

    def noise_moments(self, w_ref):
        q = self._noise_quadratic_form()
        alpha0 = float(np.linalg.eigvalsh(q).max())
        floor = 4.0 * self.data.rows * self.data.noise_std**2 * float(self._var.sum())
        delta = np.asarray(w_ref, dtype=float) - self.data.w_true
        if not delta.any():
            return alpha0, floor
        return 2.0 * alpha0, floor + 2.0 * float(delta @ q @ delta)

    @property
    def minimizer_hint(self):
        return self.data.w_true


def smooth_l1(w, epsilon):
    w = np.asarray(w, dtype=float)
    return np.sum(np.sqrt(w * w + epsilon * epsilon), axis=-1)


def smooth_l1_gradient(w, epsilon):
    w = np.asarray(w, dtype=float)
    return w / np.sqrt(w * w + epsilon * epsilon)


def smooth_l1_hessian_diag(w, epsilon):
    w = np.asarray(w, dtype=float)
    return epsilon**2 / (w * w + epsilon * epsilon) ** 1.5


class SparseRegCost(CostModel):
    """Least squares plus ``(rho / N)`` times a smoothed l1 penalty."""

    def __init__(self, data: LinearModelData, rho: float, epsilon: float, n_nodes_total: int):
        if rho < 0:
            raise ValueError("rho must be >= 0")
        if epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if n_nodes_total < 1:
            raise ValueError("n_nodes_total must be >= 1")
        self.base = QuadraticCost(data)
        self.data = data
        self.dim = data.dim
        self.rho = float(rho)
        self.epsilon = float(epsilon)
        self.n_nodes_total = int(n_nodes_total)
        self._weight = self.rho / self.n_nodes_total

    def regularizer(self, w):
        return smooth_l1(w, self.epsilon)

    def cost(self, w):
        return self.base.cost(w) + self._weight * smooth_l1(w, self.epsilon)

    def gradient(self, w):
        return self.base.gradient(w) + self._weight * smooth_l1_gradient(w, self.epsilon)

    def hessian(self, w):
        return self.base.hessian(w) + self._weight * np.diag(smooth_l1_hessian_diag(w, self.epsilon))

    def draw(self, rng, size=(), target=None):
        return self.base.draw(rng, size, target)

    def sample_gradient(self, w, sample):
        return self.base.sample_gradient(w, sample) + self._weight * smooth_l1_gradient(w, self.epsilon)

    def hessian_bounds(self):
        lo, hi, _ = self.base.hessian_bounds()
        # the penalty curvature eps^2 / (w^2 + eps^2)^1.5 peaks at w = 0 with value 1/eps
        return HessianBounds(lo, hi + self._weight / self.epsilon)

    def noise_covariance(self, w):
        return self.base.noise_covariance(w)

    def noise_moments(self, w_ref):
        return self.base.noise_moments(w_ref)

    def initial_guess(self):
        return np.array(self.data.w_true, dtype=float)


class LocalizationCost(CostModel):
    """``J(w) = E|d - ||w - x||^2|^2 / 4`` for a noisy squared range ``d``.

    Non-convex: the Hessian ``(||w-x||^2 - D) I + 2 (w-x)(w-x)^T`` goes
    indefinite inside the circle of radius ``sqrt(D)`` around the anchor.
    """

    dim = 2

    def __init__(self, anchor, noise_std: float, target):
        self.anchor = np.asarray(anchor, dtype=float)
        self.target = np.asarray(target, dtype=float)
        if self.anchor.shape != (2,) or self.target.shape != (2,):
            raise ValueError("anchor and target must be 2-vectors")
        if noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        self.noise_std = float(noise_std)

    def mean_range(self, target=None) -> np.ndarray:
        t = self.target if target is None else np.asarray(target, dtype=float)
        diff = t - self.anchor
        return np.sum(diff * diff, axis=-1)

    def cost(self, w):
        e = np.asarray(w, dtype=float) - self.anchor
        gap = self.mean_range() - np.sum(e * e, axis=-1)
        return 0.25 * (gap * gap + self.noise_std**2)

    def gradient(self, w):
        e = np.asarray(w, dtype=float) - self.anchor
        return (np.sum(e * e, axis=-1) - self.mean_range())[..., None] * e

    def hessian(self, w):
        e = np.asarray(w, dtype=float) - self.anchor
        return (e @ e - self.mean_range()) * np.eye(2) + 2.0 * np.outer(e, e)

    def draw(self, rng, size=(), target=None):
        size = _as_shape(size)
        z = self.noise_std * rng.standard_normal(size)
        return (self.mean_range(target) + z,)

    def sample_gradient(self, w, sample):
        (d,) = sample
        e = np.asarray(w, dtype=float) - self.anchor
        return (np.sum(e * e, axis=-1) - d)[..., None] * e

    def hessian_bounds(self, half_width: float | None = None, n_samples: int = 4096, seed: int = 0):
        """Empirical eigenvalue range over a box centred on the target."""
        d = float(self.mean_range())
        if half_width is None:
            half_width = 2.0 * np.sqrt(d) + 1.0
        rng = np.random.default_rng(seed)
        pts = self.target + rng.uniform(-half_width, half_width, size=(n_samples, 2))
        pts = np.vstack([pts, self.target, self.anchor])
        r2 = np.sum((pts - self.anchor) ** 2, axis=-1)
        lo = float(np.min(r2 - d))
        hi = float(np.max(3.0 * r2 - d))
        return HessianBounds(lo, hi, non_convex=True)

    def noise_covariance(self, w):
        e = np.asarray(w, dtype=float) - self.anchor
        return self.noise_std**2 * np.outer(e, e)

    def noise_moments(self, w_ref):
        e = np.asarray(w_ref, dtype=float) - self.anchor
        s2 = self.noise_std**2
        return 2.0 * s2, 2.0 * s2 * float(e @ e)

    @property
    def minimizer_hint(self):
        return self.target


def total_cost(costs: Sequence[CostModel], w) -> float:
    return float(sum(c.cost(w) for c in costs))


def total_gradient(costs: Sequence[CostModel], w) -> np.ndarray:
    return sum(c.gradient(w) for c in costs)


def global_minimizer(
    costs: Sequence[CostModel],
    w0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Minimize ``sum_l J_l`` by exact-gradient descent with backtracking."""
    if not costs:
        raise ValueError("need at least one cost")
    w = np.mean([c.initial_guess() for c in costs], axis=0) if w0 is None else np.array(w0, dtype=float)
    bound = sum(c.hessian_bounds().lam_max for c in costs)
    step = 1.0 / bound if bound > 0 else 1.0
    f = total_cost(costs, w)
    g = total_gradient(costs, w)
    for _ in range(max_iter):
        gnorm2 = float(g @ g)
        if np.sqrt(gnorm2) <= tol:
            return w
        step *= 2.0
        while True:
            decrease = 0.5 * step * gnorm2
            if decrease <= 1e-13 * max(1.0, abs(f)):
                # Armijo test is below cost resolution; fall back to the 1/L step
                step = min(step, 1.0 / bound) if bound > 0 else step
                cand = w - step * g
                fc = total_cost(costs, cand)
                break
            cand = w - step * g
            fc = total_cost(costs, cand)
            if fc <= f - decrease:
                break
            step *= 0.5
        w, f = cand, fc
        g = total_gradient(costs, w)
    raise ConvergenceError(f"no convergence in {max_iter} iterations (gradient norm {np.linalg.norm(g):.3g})")
