"""Fixed-step RK4 on lists of complex arrays."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Deriv = Callable[[float, list[np.ndarray]], list[np.ndarray]]


def rk4_step(y: Sequence[np.ndarray], t: float, dt: float, deriv: Deriv) -> list[np.ndarray]:
    """One classical Runge-Kutta step for y' = deriv(t, y)."""
    y = list(y)
    k1 = deriv(t, y)
    k2 = deriv(t + 0.5 * dt, [a + (0.5 * dt) * b for a, b in zip(y, k1)])
    k3 = deriv(t + 0.5 * dt, [a + (0.5 * dt) * b for a, b in zip(y, k2)])
    k4 = deriv(t + dt, [a + dt * b for a, b in zip(y, k3)])
    return [
        a + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
    ]


def time_grid(t_start: float, t_end: float, dt: float) -> list[float]:
    """Step sizes covering [t_start, t_end] with a shortened final step if needed."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    span = t_end - t_start
    if span < 0:
        raise ValueError("t_end must be >= t_start")
    n_full = int(np.floor(span / dt + 1e-9))
    steps = [dt] * n_full
    rest = span - n_full * dt
    if rest > 1e-12:
        steps.append(rest)
    return steps
