"""Convex per-sample losses for linear classifiers.

Each loss is described by three per-sample scalar maps evaluated at the
margins (or residuals) of a weight vector: the loss value, a gradient
coefficient ``a_i`` with ``grad_i = a_i * x_i``, and a curvature coefficient
``c_i`` with ``hess_i = c_i * x_i x_i^T``.  Everything downstream (full
objectives, Newton steps, Hessian downdates) is assembled from these three.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

LOGISTIC = "logistic"
HUBERIZED_SVM = "huberized_svm"
SQUARED_ERROR = "squared_error"

_KINDS = (LOGISTIC, HUBERIZED_SVM, SQUARED_ERROR)

# Default gradient bound C and Hessian Lipschitz constant beta per loss kind,
# valid for feature rows normalized to norm <= 1.  The squared-error loss has
# a constant Hessian, hence beta = 0; it exists as a surrogate for exactness
# checks, so no finite gradient bound is claimed for it.
_DEFAULT_C = {LOGISTIC: 1.0, HUBERIZED_SVM: 1.0, SQUARED_ERROR: 1.0}
_DEFAULT_BETA = {LOGISTIC: 0.1, HUBERIZED_SVM: 0.5, SQUARED_ERROR: 0.0}


@dataclass(frozen=True)
class LossKind:
    """A loss family plus the constants used by certification bounds.

    ``C`` bounds the per-sample gradient norm and ``beta`` the Hessian's
    Lipschitz constant, both under row norms <= 1.  ``gamma`` is the width of
    the quadratic smoothing zone of the huberized hinge and is ignored by the
    other kinds.
    """

    kind: str = LOGISTIC
    gamma: float = 2.0
    C: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidArgumentError(f"unknown loss kind {self.kind!r}; expected one of {_KINDS}")
        if not self.gamma > 0:
            raise InvalidArgumentError(f"gamma must be positive, got {self.gamma}")
        if self.C is None:
            object.__setattr__(self, "C", _DEFAULT_C[self.kind])
        if self.beta is None:
            object.__setattr__(self, "beta", _DEFAULT_BETA[self.kind])
        if not self.C > 0:
            raise InvalidArgumentError(f"gradient bound C must be positive, got {self.C}")
        if self.beta < 0:
            raise InvalidArgumentError(f"beta must be nonnegative, got {self.beta}")

    @classmethod
    def logistic(cls, **kwargs) -> "LossKind":
        return cls(kind=LOGISTIC, **kwargs)

    @classmethod
    def huberized_svm(cls, gamma: float = 2.0, **kwargs) -> "LossKind":
        return cls(kind=HUBERIZED_SVM, gamma=gamma, **kwargs)

    @classmethod
    def squared_error(cls, **kwargs) -> "LossKind":
        return cls(kind=SQUARED_ERROR, **kwargs)

    @classmethod
    def from_name(cls, name: str, gamma: float = 2.0) -> "LossKind":
        name = name.strip().lower().replace("-", "_")
        if name in (LOGISTIC, "lr"):
            return cls.logistic()
        if name in (HUBERIZED_SVM, "svm", "huber_svm", "huberized"):
            return cls.huberized_svm(gamma=gamma)
        if name in (SQUARED_ERROR, "squared", "quadratic"):
            return cls.squared_error()
        raise InvalidArgumentError(f"unknown loss name {name!r}")


def sample_losses(loss: LossKind, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample loss values ell(w, z_i), shape (n,)."""
    scores = X @ w
    if loss.kind == LOGISTIC:
        # ln(1 + exp(-u)) evaluated stably for large |u|
        return np.logaddexp(0.0, -y * scores)
    if loss.kind == HUBERIZED_SVM:
        u = y * scores
        g = loss.gamma
        out = np.zeros_like(u)
        quad = (u > 1.0 - g) & (u <= 1.0)
        lin = u <= 1.0 - g
        out[quad] = (1.0 - u[quad]) ** 2 / (2.0 * g)
        out[lin] = 1.0 - u[lin] - g / 2.0
        return out
    # squared error on the raw score
    r = scores - y
    return 0.5 * r * r


def gradient_coefficients(loss: LossKind, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Scalars a_i with per-sample gradient a_i * x_i, shape (n,)."""
    scores = X @ w
    if loss.kind == LOGISTIC:
        u = y * scores
        # d/du ln(1+e^-u) = -sigma(-u)
        return -_sigmoid(-u) * y
    if loss.kind == HUBERIZED_SVM:
        u = y * scores
        g = loss.gamma
        dldu = np.zeros_like(u)
        quad = (u > 1.0 - g) & (u <= 1.0)
        lin = u <= 1.0 - g
        dldu[quad] = -(1.0 - u[quad]) / g
        dldu[lin] = -1.0
        return dldu * y
    return scores - y


def curvature_coefficients(loss: LossKind, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Scalars c_i with per-sample Hessian c_i * x_i x_i^T, shape (n,)."""
    scores = X @ w
    if loss.kind == LOGISTIC:
        u = y * scores
        s = _sigmoid(u)
        return s * (1.0 - s)
    if loss.kind == HUBERIZED_SVM:
        u = y * scores
        g = loss.gamma
        c = np.zeros_like(u)
        c[(u > 1.0 - g) & (u <= 1.0)] = 1.0 / g
        return c
    return np.ones_like(scores)


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out
