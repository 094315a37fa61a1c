"""Variance-preserving timestep schedules for deterministic DDIM sampling.

Timesteps live in (0, 1] and run from high noise to low: tau_T, ..., tau_1.
Each step carries an (alpha, sigma) pair with alpha^2 + sigma^2 = 1. The
default mapping is alpha = cos(theta_max * tau), sigma = sin(theta_max * tau)
with theta_max just under pi/2, so alpha at the noisiest step is ~0.02 (the
prior stays close to standard normal) while alpha and sigma remain strictly
inside (0, 1] everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ParameterError, ScheduleError

DEFAULT_STEPS = 50
DEFAULT_THETA_MAX = 1.55


@dataclass(frozen=True)
class TimestepSchedule:
    taus: tuple[float, ...]
    alphas: tuple[float, ...]
    sigmas: tuple[float, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.taus)
        if n == 0:
            raise ParameterError("schedule must have at least one step")
        if len(self.alphas) != n or len(self.sigmas) != n:
            raise ParameterError("schedule taus/alphas/sigmas lengths must match")
        for i, tau in enumerate(self.taus):
            if not 0.0 < tau <= 1.0:
                raise ParameterError(f"timestep {tau} out of (0, 1]")
            if i > 0 and tau >= self.taus[i - 1]:
                raise ParameterError("timesteps must be strictly decreasing")
        for a, s in zip(self.alphas, self.sigmas):
            if not (0.0 < a <= 1.0 and 0.0 < s <= 1.0):
                raise ParameterError(f"alpha/sigma must lie in (0, 1], got ({a}, {s})")
            if abs(a * a + s * s - 1.0) > 1e-9:
                raise ParameterError(f"schedule is not variance-preserving at ({a}, {s})")
        object.__setattr__(self, "_index", {tau: i for i, tau in enumerate(self.taus)})

    def __len__(self) -> int:
        return len(self.taus)

    @classmethod
    def linear(cls, steps: int = DEFAULT_STEPS, theta_max: float = DEFAULT_THETA_MAX) -> "TimestepSchedule":
        """Linearly spaced taus m/steps for m = steps..1."""
        if steps < 1:
            raise ParameterError(f"steps must be >= 1, got {steps}")
        if not 0.0 < theta_max < math.pi / 2:
            raise ParameterError(f"theta_max must be in (0, pi/2), got {theta_max}")
        taus = tuple(m / steps for m in range(steps, 0, -1))
        alphas = tuple(math.cos(theta_max * tau) for tau in taus)
        sigmas = tuple(math.sin(theta_max * tau) for tau in taus)
        return cls(taus=taus, alphas=alphas, sigmas=sigmas)

    def lookup(self, tau: float) -> tuple[float, float]:
        """(alpha, sigma) for a scheduled timestep; unknown taus are an error."""
        i = self._index.get(tau)
        if i is None:
            raise ScheduleError(f"timestep {tau} is not on the schedule")
        return self.alphas[i], self.sigmas[i]
