"""Damped fixed-point iteration with optional Anderson acceleration."""

from __future__ import annotations

from collections import deque

import numpy as np


class AndersonMixer:
    """Anderson (type II) mixing for ``x = F(x)`` with damping ``beta``.

    ``depth = 0`` is plain damped iteration ``x <- x + beta (F(x) - x)``.
    Every proposal is an affine combination of past iterates, so linear
    constraints such as the total charge are preserved.
    """

    def __init__(self, beta: float = 0.3, depth: int = 5, regularization: float = 1e-12):
        if not 0 < beta <= 1:
            raise ValueError("damping must lie in (0, 1]")
        self.beta = beta
        self.depth = int(depth)
        self.reg = regularization
        self._x = deque(maxlen=self.depth + 1)
        self._r = deque(maxlen=self.depth + 1)

    def reset(self):
        self._x.clear()
        self._r.clear()

    def update(self, x: np.ndarray, fx: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float).ravel()
        r = np.asarray(fx, float).ravel() - x
        self._x.append(x.copy())
        self._r.append(r.copy())
        if self.depth == 0 or len(self._r) == 1:
            return x + self.beta * r
        R = np.array(self._r)
        X = np.array(self._x)
        dR = R[1:] - R[:-1]
        dX = X[1:] - X[:-1]
        M = dR @ dR.T
        M += self.reg * np.trace(M) * np.eye(len(M)) + 1e-300 * np.eye(len(M))
        gamma = np.linalg.solve(M, dR @ r)
        x_bar = x - gamma @ dX
        r_bar = r - gamma @ dR
        return x_bar + self.beta * r_bar
