"""
EM estimation of the transformed Gaussian mixture.

The E-step carries the exact joint expectations ``E[z_ik xi_i]`` and
``E[z_ik (1 - xi_i)]``; the M-step uses them to build corrected-point
scattering matrices for unconstrained per-component covariances.

Restarts follow a short-run strategy: every initialization is iterated for
``burn_in`` steps, and only the best one is carried on to convergence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.cluster.vq import ClusterError, kmeans2
from scipy.special import logsumexp

from . import _kernels
from .model import (
    ComponentParams,
    Dataset,
    DegenerateFitError,
    MCDCError,
    NumericalError,
    Responsibilities,
    Transformation,
    log_joint_terms,
    validate_model,
)

logger = logging.getLogger(__name__)

PI_INIT = 0.75


@dataclass(frozen=True)
class EmConfig:
    """Convergence and restart settings.

    ``burn_in`` is the number of iterations each restart runs before the
    best-scoring restart is selected and iterated to convergence; ``None``
    runs every restart to convergence.
    """

    max_iter: int = 1000
    rel_tol: float = 1e-8
    restarts: int = 10
    seed: int = 0
    ridge: float = 1e-6
    burn_in: int | None = 20

    def __post_init__(self):
        if self.max_iter < 1:
            raise MCDCError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise MCDCError("rel_tol must be > 0")
        if self.restarts < 1:
            raise MCDCError("restarts must be >= 1")
        if self.burn_in is not None and self.burn_in < 1:
            raise MCDCError("burn_in must be >= 1 or None")


@dataclass(frozen=True)
class MixtureFit:
    components: tuple
    resp: Responsibilities
    loglik: float
    n_iter: int
    converged: bool
    trace: tuple = field(default=(), repr=False)
    restart: int = 0

    @property
    def g(self) -> int:
        return len(self.components)

    @property
    def cluster_sizes(self) -> np.ndarray:
        return self.resp.z.sum(axis=0)

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mu for c in self.components])


# ---------------------------------------------------------------------------
# E and M steps
# ---------------------------------------------------------------------------

def _pack(components):
    mu = np.array([c.mu for c in components], dtype=float)
    sigma = np.array([c.sigma for c in components], dtype=float)
    tau = np.array([c.tau for c in components], dtype=float)
    pi = np.array([c.pi for c in components], dtype=float)
    return mu, sigma, tau, pi


def _unpack(mu, sigma, tau, pi):
    return [ComponentParams(mu[k], sigma[k], tau[k], pi[k]) for k in range(len(tau))]


def _e_step(X, Xinv, params, log_jac, joint=None):
    mu, sigma, tau, pi = params
    if joint is None:
        joint = np.empty((X.shape[0], len(tau), 2))
    ll, bad_i, bad_k = _kernels.e_step(X, Xinv, mu, sigma, tau, pi, log_jac, joint)
    if bad_k >= 0:
        raise NumericalError(f"covariance of component {bad_k} is not positive definite")
    if bad_i >= 0:
        raise NumericalError(
            f"all components have zero density at observation index {bad_i}")
    return joint, ll


def _m_step(X, Xinv, joint, ridge):
    G = joint.shape[1]
    d = X.shape[1]
    mu, sigma = np.empty((G, d)), np.empty((G, d, d))
    tau, pi = np.empty(G), np.empty(G)
    bad = _kernels.m_step(X, Xinv, joint, ridge, mu, sigma, tau, pi)
    if bad >= 0:
        mass = joint[:, bad, :].sum()
        raise DegenerateFitError(
            f"component {bad} collapsed (responsibility mass {mass:.3g}, need >= {d + 1})")
    return mu, sigma, tau, pi


def e_step(data: Dataset, components: Sequence[ComponentParams], t: Transformation) -> Responsibilities:
    """Posterior expectations of the (cluster, untransformed) labels."""
    validate_model(components, data.dimension)
    X = data.values
    joint, _ = _e_step(X, t.apply(X, "inverse"), _pack(components), t.log_jacobian)
    return Responsibilities(joint)


def m_step(data: Dataset, resp: Responsibilities, t: Transformation, config: EmConfig = EmConfig()) -> list:
    """Maximize the expected complete-data log-likelihood given responsibilities.

    Raises
    ------
    DegenerateFitError
        If any component's responsibility mass is below ``d + 1``.
    """
    X = data.values
    return _unpack(*_m_step(X, t.apply(X, "inverse"), resp.joint, config.ridge))


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _restart_rngs(seed, restarts):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(restarts)]


def _nearest_orientation(X, Xinv):
    """Keep y or take T^-1 y, whichever is closer to the coordinate-wise median."""
    center = np.median(X, axis=0)
    keep = ((X - center) ** 2).sum(axis=1) <= ((Xinv - center) ** 2).sum(axis=1)
    return np.where(keep[:, None], X, Xinv)


def _init_from_rng(X, Xinv, g, rng, provisional=True, ridge=1e-6):
    n, d = X.shape
    if provisional:
        keep = rng.random(n) < PI_INIT
        P = np.where(keep[:, None], X, Xinv)
    else:
        P = _nearest_orientation(X, Xinv)
    if g == 1:
        centers = P.mean(axis=0, keepdims=True)
        labels = np.zeros(n, dtype=int)
    else:
        try:
            centers, labels = kmeans2(P, g, iter=10, minit="++", missing="raise",
                                      seed=rng)
        except ClusterError:
            centers = None
        if centers is None or np.bincount(labels, minlength=g).min() == 0:
            centers = P[rng.choice(n, size=g, replace=False)]
            labels = np.argmin(((P[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    resid = P - centers[labels]
    pooled = resid.T @ resid / n
    pooled = 0.5 * (pooled + pooled.T)
    floor = max(ridge * np.trace(pooled) / d, 1e-12)
    if np.linalg.eigvalsh(pooled)[0] < floor:
        pooled = pooled + floor * np.eye(d)
    tau = np.maximum(np.bincount(labels, minlength=g) / n, 1.0 / (10 * g))
    tau = tau / tau.sum()
    sigma = np.repeat(pooled[None], g, axis=0)
    return np.array(centers, dtype=float), sigma, tau, np.full(g, PI_INIT)


def initialize(data: Dataset, g: int, t: Transformation, seed=0, restart: int = 0,
               restarts: int = 1) -> list:
    """Starting values for one restart.

    Each restart draws untransformed indicators with probability 0.75, maps
    the remaining points through ``T^-1``, and runs a seeded 10-iteration
    k-means on the provisional corrected points. Means start at the k-means
    centers, covariances at the pooled within-cluster covariance, mixing
    weights at the cluster fractions (floored at ``1/(10 g)``), and every
    ``pi`` at 0.75. Restart 0 replaces the random indicators by a
    deterministic choice: each point is kept or mapped through ``T^-1``,
    whichever lands closer to the coordinate-wise median of the data.
    """
    if g < 1:
        raise MCDCError("g must be >= 1")
    X = data.values
    rng = _restart_rngs(seed, max(restarts, restart + 1))[restart]
    return _unpack(*_init_from_rng(X, t.apply(X, "inverse"), g, rng, provisional=restart > 0))


def grow_start(data: Dataset, fit: "MixtureFit", t: Transformation,
               frac: float = 0.02, ridge: float = 1e-6) -> list:
    """Starting values for ``fit.g + 1`` components built from a smaller fit.

    The new component is placed on the ``frac`` share of points (at least
    ``2 (d + 1)``) with the lowest density under ``fit``, which is where a
    small tight cluster missed by k-means tends to sit. Existing weights are
    shrunk to make room for it.
    """
    X = data.values
    n, d = X.shape
    logf = logsumexp(log_joint_terms(X, t.apply(X, "inverse"), fit.components, t.log_jacobian),
                     axis=(1, 2))
    m = min(n, max(2 * (d + 1), int(np.ceil(frac * n))))
    worst = X[np.argsort(logf, kind="stable")[:m]]
    cov = np.cov(worst, rowvar=False).reshape(d, d)
    floor = max(ridge * np.trace(cov) / d, 1e-12)
    if np.linalg.eigvalsh(cov)[0] < floor:
        cov = cov + floor * np.eye(d)
    w = m / n
    comps = [c.replace(tau=c.tau * (1.0 - w)) for c in fit.components]
    comps.append(ComponentParams(worst.mean(axis=0), cov, w, PI_INIT))
    return comps


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

class _Run:
    """State of one EM trajectory on packed parameter arrays."""

    def __init__(self, X, Xinv, log_jac, params, ridge, restart):
        self.X, self.Xinv, self.log_jac, self.ridge = X, Xinv, log_jac, ridge
        self.params = params
        self.restart = restart
        self.trace = []
        self.joint = None
        self._buf = [np.empty((X.shape[0], len(params[2]), 2)) for _ in range(2)]
        self.converged = False

    def step(self, rel_tol):
        # alternate buffers so self.joint keeps the E-step behind self.params
        buf = self._buf[len(self.trace) % 2]
        joint, ll = _e_step(self.X, self.Xinv, self.params, self.log_jac, buf)
        if self.trace:
            prev = self.trace[-1]
            if abs(ll - prev) <= rel_tol * abs(prev):
                self.converged = True
        self.trace.append(ll)
        if self.converged:
            return
        self.params = _m_step(self.X, self.Xinv, joint, self.ridge)
        self.joint = joint

    def run(self, n_steps, rel_tol):
        for _ in range(n_steps):
            if self.converged:
                break
            self.step(rel_tol)

    @property
    def loglik(self):
        return self.trace[-1] if self.trace else -np.inf


def run_em(data: Dataset, g: int, t: Transformation, config: EmConfig = EmConfig(),
           init: Sequence[ComponentParams] | None = None,
           extra_inits: Sequence[Sequence[ComponentParams]] = ()) -> MixtureFit:
    """Fit a ``g``-component transformed mixture by EM with restarts.

    Parameters
    ----------
    data : Dataset
    g : int
        Number of components.
    t : Transformation
        The known corrupting map.
    config : EmConfig
    init : list of ComponentParams, optional
        Explicit starting values; replaces the random restarts.
    extra_inits : sequence of lists of ComponentParams, optional
        Further starts tried alongside the random restarts (or ``init``).

    Returns
    -------
    MixtureFit
        The components after the final M-step, the responsibilities that
        produced them, and the observed-data log-likelihood at those
        components.

    Raises
    ------
    DegenerateFitError
        If every restart collapses a component.
    """
    X = data.values
    n, d = X.shape
    if g < 1:
        raise MCDCError("g must be >= 1")
    if n < g * (d + 1):
        raise DegenerateFitError(f"{n} points cannot support {g} components in {d} dimensions")
    if t.dimension != d:
        raise MCDCError(f"transformation dimension {t.dimension} != data dimension {d}")
    Xinv = t.apply(X, "inverse")
    log_jac = t.log_jacobian

    if init is not None:
        validate_model(init, d)
        starts = [_pack(init)]
    else:
        rngs = _restart_rngs(config.seed, config.restarts)
        starts = [_init_from_rng(X, Xinv, g, rng, provisional=r > 0, ridge=config.ridge)
                  for r, rng in enumerate(rngs)]
    for extra in extra_inits:
        validate_model(extra, d)
        starts.append(_pack(extra))

    burn = config.max_iter if config.burn_in is None else min(config.burn_in, config.max_iter)
    runs = []
    for r, start in enumerate(starts):
        run = _Run(X, Xinv, log_jac, start, config.ridge, r)
        try:
            run.run(burn, config.rel_tol)
        except (DegenerateFitError, NumericalError) as exc:
            logger.debug("restart %d for g=%d discarded: %s", r, g, exc)
            continue
        runs.append(run)

    # carry the best short run on; fall back to the next if it degenerates
    runs.sort(key=lambda r: (-r.loglik, r.restart))
    for run in runs:
        try:
            run.run(config.max_iter - len(run.trace), config.rel_tol)
            if not run.converged:
                # max_iter reached after an M-step: score the final parameters
                run.trace.append(_e_step(X, Xinv, run.params, log_jac)[1])
        except (DegenerateFitError, NumericalError) as exc:
            logger.debug("restart %d for g=%d discarded late: %s", run.restart, g, exc)
            continue
        return MixtureFit(
            components=tuple(_unpack(*run.params)),
            resp=Responsibilities(run.joint.copy()),
            loglik=run.trace[-1],
            n_iter=len(run.trace),
            converged=run.converged,
            trace=tuple(run.trace),
            restart=run.restart,
        )
    raise DegenerateFitError(
        f"every restart degenerated for g={g}; try a smaller number of components")
