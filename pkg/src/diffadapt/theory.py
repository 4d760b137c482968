"""Mean-square stability conditions and steady-state MSE of the general diffusion recursion.

Network vectors stack node blocks of size ``M``; block matrices follow the
``kron(P, I_M)`` convention.  ``vec`` is column-major throughout, which is
what makes ``vec(U X V) = kron(V.T, U) vec(X)`` hold.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .costs import CostModel
from .graph import CombinationMatrices

KRON_MAX_MN = 40


class AssumptionViolation(ValueError):
    pass


class UnstableError(ArithmeticError):
    pass


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(-1, order="F")


def spectral_radius(x: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(x))))


def one_norm(s: np.ndarray) -> float:
    """Maximum absolute column sum."""
    return float(np.max(np.sum(np.abs(s), axis=0)))


def sigma_minmax(s: np.ndarray, lambda_bounds, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """S-weighted Hessian bounds ``sigma_k = sum_l s[l, k] lambda_l`` per node."""
    lb = np.asarray([(b[0], b[1]) for b in lambda_bounds], dtype=float)
    s = np.asarray(s, dtype=float)
    sig_min = s.T @ lb[:, 0]
    sig_max = s.T @ lb[:, 1]
    if strict:
        bad = np.flatnonzero(sig_min <= 0)
        if bad.size:
            raise AssumptionViolation(
                f"sum_l s[l,k] lambda_l,min must be positive; fails at node(s) {bad.tolist()}"
            )
    return sig_min, sig_max


def stable_stepsize_interval(sigma_min, sigma_max, alpha: float, s_one_norm: float):
    """Open interval ``(0, bound)`` of mean-square stable step sizes (vectorized over nodes)."""
    sig_min = np.asarray(sigma_min, dtype=float)
    sig_max = np.asarray(sigma_max, dtype=float)
    a = alpha * s_one_norm**2
    bound = np.minimum(2 * sig_max / (sig_max**2 + a), 2 * sig_min / (sig_min**2 + a))
    return 0.0, bound


def gamma_k(mu, sigma_min, sigma_max):
    mu = np.asarray(mu, dtype=float)
    return np.maximum(np.abs(1 - mu * np.asarray(sigma_max)), np.abs(1 - mu * np.asarray(sigma_min)))


def worst_node_mse_bound(mu, gamma, alpha: float, sigma_v2: float, s_one_norm: float, sigma_min=None):
    """Steady-state bound on ``max_k E||w_k - w_opt||^2``.

    Returns ``(bound, small_step_bound)``; the second value is the small-step
    simplification and is ``None`` when ``sigma_min`` is not supplied.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), mu.shape)
    s2 = s_one_norm**2
    contraction = float(np.max(gamma**2 + mu**2 * alpha * s2))
    if contraction >= 1:
        raise UnstableError(f"max_k(gamma_k^2 + mu_k^2 alpha ||S||_1^2) = {contraction:.6g} >= 1")
    bound = float(np.max(mu**2)) * s2 * sigma_v2 / (1 - contraction)
    simple = None
    if sigma_min is not None:
        simple = s2 * sigma_v2 * float(mu.max()) ** 2 / (2 * float(mu.min()) * float(np.min(sigma_min)))
    return bound, simple


def d_infinity(s: np.ndarray, hessians_at_opt: Sequence[np.ndarray]) -> np.ndarray:
    """Block-diagonal matrix with block ``k = sum_l s[l, k] H_l``."""
    h = np.asarray(hessians_at_opt, dtype=float)
    n, m, _ = h.shape
    blocks = np.einsum("lk,lij->kij", np.asarray(s, dtype=float), h)
    return scipy.linalg.block_diag(*blocks) if n else np.zeros((0, 0))


def _blocks(cm: CombinationMatrices, m: int):
    eye = np.eye(m)
    p1 = np.kron(cm.p1, eye)
    p2 = np.kron(cm.p2, eye)
    mm = np.kron(np.diag(cm.mu), eye)
    return p1, p2, mm


def b_matrix(cm: CombinationMatrices, d_inf: np.ndarray) -> np.ndarray:
    """Mean-error transition ``P2^T (I - M D_inf) P1^T`` (block form)."""
    if cm.mu is None:
        raise ValueError("combination matrices need step sizes")
    m = d_inf.shape[0] // cm.n_nodes
    p1, p2, mm = _blocks(cm, m)
    return p2.T @ (np.eye(d_inf.shape[0]) - mm @ d_inf) @ p1.T


def f_matrix(b: np.ndarray) -> np.ndarray:
    return np.kron(b.T, b.T)


def block_norms(x: np.ndarray, block_size: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] % block_size:
        raise ValueError(f"dimension {x.shape[0]} not divisible by block size {block_size}")
    n = x.shape[0] // block_size
    if x.ndim == 1:
        return np.linalg.norm(x.reshape(n, block_size), axis=1)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError("expected a stacked vector or a square block matrix")
    norms = np.empty(n)
    for k in range(n):
        sl = slice(k * block_size, (k + 1) * block_size)
        off = x[sl].copy()
        off[:, sl] = 0.0
        if np.any(off != 0):
            raise NotImplementedError("block maximum norm is only provided for block-diagonal matrices")
        norms[k] = np.linalg.norm(x[sl, sl], 2)
    return norms


def block_max_norm(x: np.ndarray, block_size: int) -> float:
    """Block maximum norm of a stacked vector, or of a block-diagonal matrix.

    For a matrix this returns the largest 2-induced norm among its diagonal
    blocks, an upper bound on the induced block maximum norm that is attained
    when the blocks are symmetric.
    """
    return float(np.max(block_norms(x, block_size)))


def block_max_norm_attainer(x: np.ndarray, block_size: int) -> np.ndarray:
    """A vector achieving ``||X v||_b / ||v||_b = block_max_norm(X)`` for symmetric ``X``.

    It places the dominant eigenvector of the worst block in that block and
    zeros elsewhere.
    """
    norms = block_norms(x, block_size)
    k = int(np.argmax(norms))
    sl = slice(k * block_size, (k + 1) * block_size)
    vals, vecs = np.linalg.eigh(x[sl, sl])
    out = np.zeros(x.shape[0])
    out[sl] = vecs[:, int(np.argmax(np.abs(vals)))]
    return out


def _noise_weighting(cm: CombinationMatrices, rv: np.ndarray) -> np.ndarray:
    m = rv.shape[0] // cm.n_nodes
    _, p2, mm = _blocks(cm, m)
    return p2.T @ mm @ rv @ mm @ p2


def steady_state_mse(cm: CombinationMatrices, d_inf: np.ndarray, rv: np.ndarray, method: str = "auto"):
    """Per-node and network steady-state MSE of the linearized recursion.

    ``method="kron"`` solves ``(I - F)^T x = vec(P2^T M R_v M P2)`` and reads
    ``MSE_k = x . t_k``.  ``method="lyapunov"`` solves the equivalent
    ``X = B X B^T + P2^T M R_v M P2`` for the error covariance directly, which
    keeps memory at ``O((MN)^2)``.  ``auto`` picks ``kron`` for ``MN <= KRON_MAX_MN``.
    """
    n = cm.n_nodes
    mn = d_inf.shape[0]
    m = mn // n
    b = b_matrix(cm, d_inf)
    rho_b = spectral_radius(b)
    if rho_b**2 >= 1:
        raise UnstableError(f"rho(F) = {rho_b**2:.6g} >= 1")
    y = _noise_weighting(cm, np.asarray(rv, dtype=float))
    if method == "auto":
        method = "kron" if mn <= KRON_MAX_MN else "lyapunov"
    cond_limit = 1.0 / np.sqrt(np.finfo(float).eps)
    if method == "kron":
        i_f = np.eye(mn * mn) - f_matrix(b)
        if np.linalg.cond(i_f) > cond_limit:
            raise UnstableError("I - F is too ill-conditioned for a reliable solve")
        x = np.linalg.solve(i_f.T, vec(y))
        per_node = np.empty(n)
        for k in range(n):
            t_k = vec(np.kron(np.diag(np.eye(n)[k]), np.eye(m)))
            per_node[k] = x @ t_k
        network = float(x @ vec(np.eye(mn))) / n
    elif method == "lyapunov":
        if 1.0 / (1.0 - rho_b**2) > cond_limit:
            raise UnstableError("recursion is too close to the stability boundary for a reliable solve")
        cov = scipy.linalg.solve_discrete_lyapunov(b, y)
        diag = np.diag(cov).reshape(n, m)
        per_node = diag.sum(axis=1)
        network = float(per_node.mean())
    else:
        raise ValueError(f"unknown method {method!r}")
    return per_node, network


def mean_error_dynamics_check(cm: CombinationMatrices, d_inf: np.ndarray, tol: float = 1e-12) -> bool:
    """True iff the mean error recursion is stable, i.e. ``rho(B) < 1``."""
    return spectral_radius(b_matrix(cm, d_inf)) < 1.0 - tol


def stacked_noise_covariance(per_node_cov: Sequence[np.ndarray], s: np.ndarray) -> np.ndarray:
    """Covariance of ``g = col_k{sum_l s[l,k] v_l}`` for independent node noises ``v_l``."""
    r = scipy.linalg.block_diag(*per_node_cov)
    m = r.shape[0] // len(per_node_cov)
    sk = np.kron(np.asarray(s, dtype=float), np.eye(m))
    return sk.T @ r @ sk


def rv_from_model(costs: Sequence[CostModel], w_opt, s, n_samples: int = 100_000, rng=None):
    """Monte Carlo estimate of ``R_v`` at ``w_opt``, plus the analytic value.

    Returns ``(estimate, analytic)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(rng)
    w_opt = np.asarray(w_opt, dtype=float)
    s = np.asarray(s, dtype=float)
    n, m = len(costs), w_opt.shape[0]
    v = np.empty((n_samples, n, m))
    for l, c in enumerate(costs):
        sample = c.draw(rng, (n_samples,))
        v[:, l] = c.sample_gradient(np.broadcast_to(w_opt, (n_samples, m)), sample) - c.gradient(w_opt)
    g = np.einsum("lk,tlm->tkm", s, v).reshape(n_samples, n * m)
    est = g.T @ g / n_samples
    est = 0.5 * (est + est.T)
    analytic = stacked_noise_covariance([c.noise_covariance(w_opt) for c in costs], s)
    return est, analytic


@dataclass
class TheoryReport:
    sigma_min: np.ndarray
    sigma_max: np.ndarray
    mu_bounds: np.ndarray
    gamma: np.ndarray
    w_inf_bound: float | None
    w_inf_small_step: float | None
    b_spectral_radius: float
    f_spectral_radius: float
    mse_per_node: np.ndarray | None
    network_mse: float | None
    stable: bool
    alpha: float
    sigma_v2: float
    s_one_norm: float
    caveat: str = ""

    def scalars(self) -> dict:
        """Flat name -> value mapping (one CSV column each)."""
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, np.ndarray):
                if k in ("mse_per_node",):
                    for i, x in enumerate(v):
                        out[f"{k}_{i}"] = float(x)
                else:
                    out[f"{k}_max"] = float(np.max(v))
                    out[f"{k}_min"] = float(np.min(v))
            else:
                out[k] = v
        return out

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


def analyze(
    cm: CombinationMatrices,
    costs: Sequence[CostModel],
    w_opt,
    rv: np.ndarray | None = None,
    method: str = "auto",
) -> TheoryReport:
    """Full stability and steady-state report for a strategy on a set of node costs."""
    w_opt = np.asarray(w_opt, dtype=float)
    bounds = [c.hessian_bounds() for c in costs]
    non_convex = any(len(b) > 2 and b[2] for b in bounds)
    sig_min, sig_max = sigma_minmax(cm.s, bounds, strict=False)
    moments = [c.noise_moments(w_opt) for c in costs]
    alpha = max(a for a, _ in moments)
    sigma_v2 = max(v for _, v in moments)
    s1 = one_norm(cm.s)
    assumptions_hold = bool(np.all(sig_min > 0)) and not non_convex
    if assumptions_hold:
        _, mu_bounds = stable_stepsize_interval(sig_min, sig_max, alpha, s1)
    else:
        mu_bounds = np.full(cm.n_nodes, np.nan)
    gam = gamma_k(cm.mu, sig_min, sig_max)
    w_bound = w_small = None
    if assumptions_hold:
        try:
            w_bound, w_small = worst_node_mse_bound(cm.mu, gam, alpha, sigma_v2, s1, sig_min)
        except UnstableError:
            pass
    d_inf = d_infinity(cm.s, [c.hessian(w_opt) for c in costs])
    b = b_matrix(cm, d_inf)
    rho_b = spectral_radius(b)
    if b.shape[0] <= KRON_MAX_MN // 2:
        rho_f = spectral_radius(f_matrix(b))
    else:
        rho_f = rho_b**2
    if rv is None:
        rv = stacked_noise_covariance([c.noise_covariance(w_opt) for c in costs], cm.s)
    per_node = network = None
    stable = rho_b < 1.0
    if stable:
        try:
            per_node, network = steady_state_mse(cm, d_inf, rv, method)
        except UnstableError:
            stable = False
    caveat = "local approximation: non-convex cost" if non_convex else ""
    return TheoryReport(
        sigma_min=sig_min,
        sigma_max=sig_max,
        mu_bounds=np.asarray(mu_bounds, dtype=float),
        gamma=np.asarray(gam, dtype=float),
        w_inf_bound=w_bound,
        w_inf_small_step=w_small,
        b_spectral_radius=rho_b,
        f_spectral_radius=rho_f,
        mse_per_node=per_node,
        network_mse=network,
        stable=bool(stable),
        alpha=float(alpha),
        sigma_v2=float(sigma_v2),
        s_one_norm=s1,
        caveat=caveat,
    )
