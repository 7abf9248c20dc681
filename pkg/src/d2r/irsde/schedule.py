"""Discretized mean-reverting SDE coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class SDESchedule:
    """Coefficients of dx = lambda_t (mu - x) dt + phi_t dw on T unit steps of length ``dt``.

    ``lambda_bar[t]`` is the integrated reversion rate up to step t, with
    ``lambda_bar[0] == 0``. ``phi_t`` is derived from the stationary variance
    ``delta_sq = phi_t**2 / (2 lambda_t)``.
    """

    T: int
    lambda_t: np.ndarray
    phi_t: np.ndarray
    lambda_bar: np.ndarray
    delta_sq: float
    gamma_t: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        lam = np.asarray(self.lambda_t, dtype=np.float64)
        phi = np.asarray(self.phi_t, dtype=np.float64)
        lb = np.asarray(self.lambda_bar, dtype=np.float64)
        gam = np.asarray(self.gamma_t, dtype=np.float64)
        T = int(self.T)
        if T < 1:
            raise ValueError("T must be >= 1")
        if lam.shape != (T,) or phi.shape != (T,) or gam.shape != (T,) or lb.shape != (T + 1,):
            raise ValueError("schedule arrays must have lengths T, T, T and T+1")
        if np.any(lam <= 0) or np.any(phi <= 0) or np.any(gam <= 0):
            raise ValueError("lambda_t, phi_t and gamma_t must be positive")
        if self.delta_sq <= 0:
            raise ValueError("delta_sq must be positive")
        if not np.allclose(phi ** 2 / (2 * lam), self.delta_sq, rtol=1e-9, atol=0):
            raise ValueError("phi_t**2 / (2 lambda_t) must equal delta_sq at every step")
        if lb[0] != 0 or np.any(np.diff(lb) <= 0):
            raise ValueError("lambda_bar must start at 0 and increase strictly")
        if not np.allclose(np.diff(lb), lam * self.dt, rtol=1e-12, atol=0):
            raise ValueError("lambda_bar must be the prefix sum of lambda_t * dt")
        if np.exp(-lb[-1]) >= 0.01:
            raise ValueError(
                f"terminal decay exp(-lambda_bar[T]) = {np.exp(-lb[-1]):.3g} must be < 0.01")
        for name, arr in (("lambda_t", lam), ("phi_t", phi), ("lambda_bar", lb), ("gamma_t", gam)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "delta_sq", float(self.delta_sq))
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_lambdas(cls, lambda_t, delta: float, dt: float = 1.0, gamma_t=None) -> "SDESchedule":
        lam = np.asarray(lambda_t, dtype=np.float64)
        T = len(lam)
        delta_sq = float(delta) ** 2
        phi = np.sqrt(2.0 * lam * delta_sq)
        lb = np.concatenate([[0.0], np.cumsum(lam * dt)])
        gam = np.ones(T) if gamma_t is None else np.asarray(gamma_t, dtype=np.float64)
        return cls(T, lam, phi, lb, delta_sq, gam, dt)

    @classmethod
    def cosine(cls, T: int = 100, lambda_min: float = 0.005, lambda_max: float = 0.1,
               delta: float = 0.05, horizon: float = 100.0) -> "SDESchedule":
        """Cosine ramp of the reversion rate from ``lambda_min`` to ``lambda_max``.

        The continuous time horizon is fixed at ``horizon`` so the total decay
        does not depend on how finely it is discretized (dt = horizon / T).
        """
        if T < 2:
            raise ValueError("cosine schedule needs T >= 2")
        s = np.arange(T) / (T - 1)
        lam = lambda_min + (lambda_max - lambda_min) * 0.5 * (1 - np.cos(np.pi * s))
        return cls.from_lambdas(lam, delta, dt=horizon / T)

    @classmethod
    def constant(cls, T: int, lam: float, delta: float, dt: float = 1.0) -> "SDESchedule":
        return cls.from_lambdas(np.full(T, lam), delta, dt=dt)

    @property
    def delta(self) -> float:
        return float(np.sqrt(self.delta_sq))

    def step_decay(self, t: int) -> float:
        """lambda'_t = lambda_bar[t] - lambda_bar[t-1]."""
        return float(self.lambda_bar[t] - self.lambda_bar[t - 1])

    def to_dict(self) -> dict:
        return {"T": self.T, "lambda_t": self.lambda_t.tolist(), "delta": self.delta,
                "dt": self.dt, "gamma_t": self.gamma_t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SDESchedule":
        return cls.from_lambdas(d["lambda_t"], d["delta"], d.get("dt", 1.0), d.get("gamma_t"))
