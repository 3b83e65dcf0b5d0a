"""
Separable regularizers and their proximal operators.

Every regularizer acts coordinatewise on a contiguous range, so a block prox is
the restriction of the full prox. ``prox(z, tau)`` solves
argmin_x tau * g(x) + 1/2 ||x - z||^2; ``tau = 0`` is the identity.
"""
import math
from typing import List, Sequence, Tuple

import numpy as np

from utils.errors import ConfigError, DimensionMismatchError

INF = math.inf


def soft_threshold(z: np.ndarray, thresh: float) -> np.ndarray:
    """sign(z) * max(|z| - thresh, 0); |z| == thresh maps to 0."""
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


def box_clamp(z: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip(z, lo, hi)


class Regularizer:
    """Base class: the zero function."""
    modulus: float = 0.0

    def value(self, x: np.ndarray) -> float:
        return 0.0

    def prox(self, z: np.ndarray, tau: float) -> np.ndarray:
        return np.array(z, dtype=np.float64, copy=True)

    def params(self) -> Tuple:
        return (type(self).__name__,)


class ZeroFunction(Regularizer):
    pass


class L1Norm(Regularizer):
    def __init__(self, lam: float):
        if lam < 0:
            raise ConfigError("l1 weight must be non-negative")
        self.lam = float(lam)

    def value(self, x):
        return self.lam * float(np.sum(np.abs(x)))

    def prox(self, z, tau):
        return soft_threshold(np.asarray(z, dtype=np.float64), tau * self.lam)

    def params(self):
        return ("L1Norm", self.lam)


class ElasticNetPenalty(Regularizer):
    """lam1 * ||x||_1 + lam2 / 2 * ||x||^2, which is lam2-strongly convex."""

    def __init__(self, lam1: float, lam2: float):
        if lam1 < 0 or lam2 < 0:
            raise ConfigError("elastic net weights must be non-negative")
        self.lam1 = float(lam1)
        self.lam2 = float(lam2)
        self.modulus = self.lam2

    def value(self, x):
        return self.lam1 * float(np.sum(np.abs(x))) + 0.5 * self.lam2 * float(np.dot(x, x))

    def prox(self, z, tau):
        return soft_threshold(np.asarray(z, dtype=np.float64), tau * self.lam1) / (1.0 + tau * self.lam2)

    def params(self):
        return ("ElasticNetPenalty", self.lam1, self.lam2)


class BoxIndicator(Regularizer):
    """Indicator of [lo, hi] per coordinate; the prox is the projection for every tau."""

    def __init__(self, lo: float, hi: float):
        if lo > hi:
            raise ConfigError("box needs lo <= hi")
        self.lo = float(lo)
        self.hi = float(hi)

    def value(self, x):
        x = np.asarray(x)
        if np.all((x >= self.lo) & (x <= self.hi)):
            return 0.0
        return INF

    def prox(self, z, tau):
        return box_clamp(np.asarray(z, dtype=np.float64), self.lo, self.hi)

    def diameter(self, count: int) -> float:
        return math.sqrt(count) * (self.hi - self.lo)

    def params(self):
        return ("BoxIndicator", self.lo, self.hi)


class SeparableRegularizer:
    """
    g(x) = sum over segments [start, stop) of g_s(x[start:stop]).

    Segments tile [0, dim) in order. ``prox_range`` applies the prox on an
    arbitrary contiguous coordinate range, splitting it at segment borders.
    """

    def __init__(self, segments: Sequence[Tuple[int, int, Regularizer]]):
        segs: List[Tuple[int, int, Regularizer]] = []
        pos = 0
        for start, stop, reg in segments:
            if start != pos or stop < start:
                raise DimensionMismatchError("regularizer segments must tile the coordinates in order")
            if stop > start:
                segs.append((int(start), int(stop), reg))
            pos = stop
        self.segments = segs
        self.dim = pos
        self.modulus = min((reg.modulus for _, _, reg in segs), default=0.0)

    def value(self, x: np.ndarray) -> float:
        return sum(reg.value(x[a:b]) for a, b, reg in self.segments)

    def value_range(self, start: int, z: np.ndarray) -> float:
        total = 0.0
        stop = start + z.shape[0]
        for a, b, reg in self.segments:
            lo, hi = max(a, start), min(b, stop)
            if lo < hi:
                total += reg.value(z[lo - start:hi - start])
        return total

    def prox_range(self, start: int, z: np.ndarray, tau: float) -> np.ndarray:
        if tau == 0.0:
            return np.array(z, dtype=np.float64, copy=True)
        out = np.empty(z.shape[0], dtype=np.float64)
        stop = start + z.shape[0]
        for a, b, reg in self.segments:
            lo, hi = max(a, start), min(b, stop)
            if lo < hi:
                out[lo - start:hi - start] = reg.prox(z[lo - start:hi - start], tau)
        return out

    def params(self) -> Tuple:
        return tuple((a, b) + reg.params() for a, b, reg in self.segments)
