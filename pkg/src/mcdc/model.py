"""
Core types for mixtures with transformed observations.

Each observation ``y_i`` is either a draw ``x_i`` from a Gaussian mixture
component or ``T x_i`` for a known invertible map ``T``. The observed-data
density of one point is

.. math::
    f(y_i) = \\sum_k \\tau_k \\left[\\pi_k f_k(y_i) + (1 - \\pi_k) f_k(T^{-1} y_i)\\right]

where ``pi_k`` is the probability that a member of component ``k`` is left
untransformed. By default the second density carries the change-of-variables
factor ``|det T^-1|`` so that it is a proper density of ``y``; the factor is 1
for swaps and rotations. ``Transformation(..., jacobian=False)`` drops it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)


class MCDCError(ValueError):
    """Base class for errors raised by this package."""


class NumericalError(MCDCError):
    pass


class DegenerateFitError(MCDCError):
    """A mixture component collapsed (too little mass or a singular covariance)."""


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

class Observation(NamedTuple):
    id: object
    y: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of ``n`` observations in ``d`` dimensions.

    Parameters
    ----------
    values : array_like, shape (n, d)
        Observed coordinates.
    ids : sequence, optional
        Opaque experiment identifiers; defaults to ``0..n-1``.
    """

    values: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise MCDCError(f"dataset must be a nonempty (n, d) array, got shape {values.shape}")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            i, j = bad[0]
            raise MCDCError(f"non-finite value at observation {i}, coordinate {j}")
        values.setflags(write=False)
        ids = tuple(self.ids) if len(self.ids) else tuple(range(values.shape[0]))
        if len(ids) != values.shape[0]:
            raise MCDCError(f"{len(ids)} ids for {values.shape[0]} observations")
        if len(set(ids)) != len(ids):
            raise MCDCError("observation ids must be unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for i, y in zip(self.ids, self.values):
            yield Observation(i, y)

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "Dataset":
        observations = list(observations)
        if not observations:
            raise MCDCError("dataset must be nonempty")
        dims = {np.size(o.y) for o in observations}
        if len(dims) != 1:
            raise MCDCError(f"observations have mixed dimensions {sorted(dims)}")
        return cls(np.vstack([np.ravel(o.y) for o in observations]), tuple(o.id for o in observations))

    def with_values(self, values: np.ndarray) -> "Dataset":
        return Dataset(values, self.ids)


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transformation:
    """An invertible linear map on observation space, stored with its inverse.

    ``jacobian`` controls whether ``|det T^-1|`` multiplies the density of a
    transformed point.
    """

    kind: str
    forward: np.ndarray
    inverse: np.ndarray
    jacobian: bool = True

    def __post_init__(self):
        if self.kind not in ("swap", "linear-map", "identity"):
            raise MCDCError(f"unknown transformation kind {self.kind!r}")
        fwd = np.array(self.forward, dtype=float)
        inv = np.array(self.inverse, dtype=float)
        if fwd.ndim != 2 or fwd.shape[0] != fwd.shape[1] or fwd.shape != inv.shape:
            raise MCDCError("forward and inverse must be square matrices of equal size")
        if np.max(np.abs(fwd @ inv - np.eye(fwd.shape[0]))) > 1e-12:
            raise MCDCError("forward @ inverse is not the identity")
        fwd.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "inverse", inv)

    @property
    def dimension(self) -> int:
        return self.forward.shape[0]

    @property
    def log_jacobian(self) -> float:
        """Log-density offset for the transformed branch."""
        if not self.jacobian:
            return 0.0
        return float(np.linalg.slogdet(self.inverse)[1])

    @classmethod
    def swap(cls) -> "Transformation":
        m = np.array([[0.0, 1.0], [1.0, 0.0]])
        return cls("swap", m, m.copy())

    @classmethod
    def identity(cls, d: int = 2) -> "Transformation":
        return cls("identity", np.eye(d), np.eye(d))

    @classmethod
    def linear(cls, matrix, jacobian: bool = True) -> "Transformation":
        matrix = np.asarray(matrix, dtype=float)
        return cls("linear-map", matrix, np.linalg.inv(matrix), jacobian)

    @classmethod
    def rotation_scale(cls, degrees: float, scale: float, jacobian: bool = True) -> "Transformation":
        """Counter-clockwise rotation by ``degrees`` followed by scaling about the origin."""
        th = np.deg2rad(degrees)
        c, s = np.cos(th), np.sin(th)
        rot = np.array([[c, -s], [s, c]])
        # R^-1 = R^T exactly, so build the inverse directly rather than via inv()
        return cls("linear-map", scale * rot, rot.T / scale, jacobian)

    def apply(self, y, direction: str = "forward") -> np.ndarray:
        """Apply the map (or its inverse) to one point or to rows of an (n, d) array."""
        if direction == "forward":
            m = self.forward
        elif direction == "inverse":
            m = self.inverse
        else:
            raise MCDCError(f"direction must be 'forward' or 'inverse', got {direction!r}")
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dimension:
            raise MCDCError(f"point has dimension {y.shape[-1]}, transformation has {self.dimension}")
        if self.kind == "identity":
            return y.copy()
        return y @ m.T


def apply_transform(t: Transformation, y, direction: str = "forward") -> np.ndarray:
    return t.apply(y, direction)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComponentParams:
    """Mean, covariance, mixing weight and untransformed-probability of one component."""

    mu: np.ndarray
    sigma: np.ndarray
    tau: float
    pi: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).ravel()
        sigma = np.array(self.sigma, dtype=float).reshape(mu.size, mu.size)
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        # absorb rounding just outside the unit interval
        for name in ("tau", "pi"):
            v = float(getattr(self, name))
            if -1e-12 < v < 0.0 or 1.0 < v < 1.0 + 1e-12:
                v = min(max(v, 0.0), 1.0)
            object.__setattr__(self, name, v)
        if not (0.0 <= self.tau <= 1.0 and 0.0 <= self.pi <= 1.0):
            raise MCDCError(f"tau={self.tau}, pi={self.pi} must lie in [0, 1]")

    def replace(self, **kw) -> "ComponentParams":
        d = dict(mu=self.mu, sigma=self.sigma, tau=self.tau, pi=self.pi)
        d.update(kw)
        return ComponentParams(**d)


def _cholesky(sigma: np.ndarray, k=None) -> np.ndarray:
    name = "covariance" if k is None else f"covariance of component {k}"
    if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-12):
        raise NumericalError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{name} is not positive definite") from None


def _logpdf_rows(X: np.ndarray, mu: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Gaussian log density of each row of ``X`` given a Cholesky factor."""
    d = mu.size
    sol = solve_triangular(chol, (X - mu).T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", sol, sol)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * LOG_2PI + logdet + maha)


def gaussian_log_density(y, params: ComponentParams, component: int | None = None) -> float:
    """Log of the multivariate normal density ``N(y; mu, sigma)``."""
    y = np.asarray(y, dtype=float).reshape(1, -1)
    if y.shape[1] != params.mu.size:
        raise MCDCError(f"point has dimension {y.shape[1]}, component has {params.mu.size}")
    chol = _cholesky(params.sigma, component)
    return float(_logpdf_rows(y, params.mu, chol)[0])


def validate_model(model: Sequence[ComponentParams], d: int) -> None:
    if len(model) == 0:
        raise MCDCError("model has no components")
    for k, c in enumerate(model):
        if c.mu.size != d:
            raise MCDCError(f"component {k} has dimension {c.mu.size}, data has {d}")
    total = sum(c.tau for c in model)
    if abs(total - 1.0) > 1e-8:
        raise MCDCError(f"mixing weights sum to {total}, not 1")


def log_joint_terms(X: np.ndarray, Xinv: np.ndarray, model: Sequence[ComponentParams],
                    log_jacobian: float = 0.0) -> np.ndarray:
    """Log joint terms for every (point, component, untransformed-flag).

    Returns an array ``a`` of shape (n, G, 2) with
    ``a[i, k, 1] = log(tau_k pi_k f_k(y_i))`` and
    ``a[i, k, 0] = log(tau_k (1 - pi_k) f_k(T^-1 y_i)) + log_jacobian``.
    One Cholesky factorization is made per component.
    """
    n, G = X.shape[0], len(model)
    out = np.empty((n, G, 2))
    both = np.vstack([X, Xinv])
    with np.errstate(divide="ignore"):
        for k, c in enumerate(model):
            lf = _logpdf_rows(both, c.mu, _cholesky(c.sigma, k))
            lt = np.log(c.tau)
            out[:, k, 1] = lt + np.log(c.pi) + lf[:n]
            out[:, k, 0] = lt + np.log1p(-c.pi) + lf[n:] + log_jacobian
    return out


def observed_log_likelihood(data: Dataset, model: Sequence[ComponentParams], t: Transformation) -> float:
    """Observed-data log-likelihood of ``data`` under the transformed mixture."""
    validate_model(model, data.dimension)
    X = data.values
    terms = log_joint_terms(X, t.apply(X, "inverse"), model, t.log_jacobian)
    per_point = logsumexp(terms.reshape(X.shape[0], -1), axis=1)
    bad = np.flatnonzero(~np.isfinite(per_point))
    if bad.size:
        raise NumericalError(f"log-likelihood is not finite at observation index {bad[0]}")
    return float(per_point.sum())


@dataclass(frozen=True)
class Responsibilities:
    """Posterior label expectations from the E-step.

    ``joint[i, k, 1] = E[z_ik xi_i]`` and ``joint[i, k, 0] = E[z_ik (1 - xi_i)]``;
    ``z`` and ``xi`` are the cluster and untransformed marginals.
    """

    joint: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return self.joint.sum(axis=2)

    @property
    def xi(self) -> np.ndarray:
        return self.joint[:, :, 1].sum(axis=1)

    @property
    def n(self) -> int:
        return self.joint.shape[0]

    @property
    def g(self) -> int:
        return self.joint.shape[1]
