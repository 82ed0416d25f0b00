"""
Problem primitives for online convex optimization with long-term constraints:
the feasible box, stepsizes, and per-slot loss / constraint oracles.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from errors import ArgumentError, OracleFailureError

# Vertex enumeration is only done for boxes up to this dimension (2**16 corners).
MAX_VERTEX_DIM = 16


def as_vector(values, name="vector"):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ArgumentError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def check_finite(values, what):
    """Raise OracleFailureError when an oracle output contains NaN or inf."""
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise OracleFailureError(f"non-finite {what}: {arr}")
    return arr


@dataclass(frozen=True)
class FeasibleBox:
    """Axis-aligned box X = {lower <= x <= upper}."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = as_vector(self.lower, "lower")
        upper = as_vector(self.upper, "upper")
        if lower.shape != upper.shape:
            raise ArgumentError(f"box bounds differ in length: {lower.size} vs {upper.size}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ArgumentError("box bounds must be finite")
        if np.any(lower > upper):
            raise ArgumentError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_caps(cls, upper):
        upper = as_vector(upper, "upper")
        return cls(np.zeros_like(upper), upper)

    @property
    def dim(self):
        return self.lower.size

    @property
    def radius(self):
        """R = ||upper - lower||."""
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, x, atol=0.0):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def vertices(self):
        if self.dim > MAX_VERTEX_DIM:
            raise ArgumentError(f"refusing to enumerate 2**{self.dim} box vertices")
        for corner in itertools.product((0, 1), repeat=self.dim):
            mask = np.array(corner, dtype=bool)
            yield np.where(mask, self.upper, self.lower)

    def bounds(self):
        """(lo, hi) pairs in the format scipy.optimize expects."""
        return list(zip(self.lower.tolist(), self.upper.tolist()))


@dataclass(frozen=True)
class StepsizePair:
    alpha: float
    mu: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ArgumentError(f"alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ArgumentError(f"mu must be positive, got {self.mu}")


class LossOracle:
    """Per-slot convex loss f_t. Subclasses provide value and gradient."""

    grad_bound = None

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError


class CallableLoss(LossOracle):
    def __init__(self, value_fn, gradient_fn, grad_bound=None):
        self._value = value_fn
        self._gradient = gradient_fn
        self.grad_bound = grad_bound

    def value(self, x):
        return float(self._value(np.asarray(x, dtype=float)))

    def gradient(self, x):
        return as_vector(self._gradient(np.asarray(x, dtype=float)), "gradient")


class QuadraticLoss(LossOracle):
    """Separable quadratic f(x) = sum_i w_i x_i^2 + h^T x with w > 0."""

    def __init__(self, weights, linear=None):
        self.weights = as_vector(weights, "weights")
        if np.any(self.weights <= 0):
            raise ArgumentError("quadratic weights must be strictly positive")
        self.linear = np.zeros_like(self.weights) if linear is None else as_vector(linear, "linear")
        if self.linear.shape != self.weights.shape:
            raise ArgumentError("linear term and weights differ in length")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.dot(self.weights, x * x) + np.dot(self.linear, x))

    def gradient(self, x):
        return 2.0 * self.weights * np.asarray(x, dtype=float) + self.linear

    def grad_norm_bound(self, box):
        # |2 w x + h| is convex per coordinate, so its max sits at a box end.
        lo = np.abs(2.0 * self.weights * box.lower + self.linear)
        hi = np.abs(2.0 * self.weights * box.upper + self.linear)
        return float(np.linalg.norm(np.maximum(lo, hi)))

    def minimize_coordinatewise(self, shift, box):
        """argmin over the box of f(x) + shift^T x, solved per coordinate."""
        x = -(self.linear + shift) / (2.0 * self.weights)
        return np.clip(x, box.lower, box.upper)

    @classmethod
    def sum_of(cls, losses):
        losses = list(losses)
        weights = np.sum([loss.weights for loss in losses], axis=0)
        linear = np.sum([loss.linear for loss in losses], axis=0)
        return cls(weights, linear)


class ConstraintOracle:
    """Per-slot convex constraint g_t: R^n -> R^m, feasible when g_t(x) <= 0."""

    kind = "general"
    bound = None

    @property
    def dim(self):
        raise NotImplementedError

    def value(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError


class AffineConstraint(ConstraintOracle):
    """g(x) = A x + b."""

    kind = "affine"

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = as_vector(b, "b")
        if self.A.shape[0] != self.b.size:
            raise ArgumentError(f"A has {self.A.shape[0]} rows but b has {self.b.size} entries")

    @property
    def dim(self):
        return self.b.size

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != self.A.shape[1]:
            raise ArgumentError(f"x has {x.size} entries, A expects {self.A.shape[1]}")
        return self.A @ x + self.b

    def jacobian(self, x):
        return self.A


class GeneralConstraint(ConstraintOracle):
    """Convex g given as callables; Jacobian falls back to central differences."""

    def __init__(self, value_fn, jacobian_fn=None, dim=None, fd_step=1e-6):
        self._value = value_fn
        self._jacobian = jacobian_fn
        self._dim = dim
        self.fd_step = fd_step

    @property
    def dim(self):
        if self._dim is None:
            raise ArgumentError("constraint dimension unknown until first evaluation")
        return self._dim

    def value(self, x):
        out = as_vector(self._value(np.asarray(x, dtype=float)), "constraint value")
        if self._dim is None:
            self._dim = out.size
        return out

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self._jacobian is not None:
            return np.atleast_2d(np.asarray(self._jacobian(x), dtype=float))
        h = self.fd_step
        cols = []
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            cols.append((self.value(x + e) - self.value(x - e)) / (2.0 * h))
        return np.column_stack(cols)


class StackedConstraint(ConstraintOracle):
    """Concatenation [g_1(x); g_2(x); ...] of several constraints on one x."""

    def __init__(self, constraints):
        self.parts = list(constraints)
        if all(c.kind == "affine" for c in self.parts):
            self.kind = "affine"
            self.A = np.vstack([c.A for c in self.parts])
            self.b = np.concatenate([c.b for c in self.parts])

    @property
    def dim(self):
        return sum(c.dim for c in self.parts)

    def value(self, x):
        return np.concatenate([c.value(x) for c in self.parts])

    def jacobian(self, x):
        return np.vstack([c.jacobian(x) for c in self.parts])
