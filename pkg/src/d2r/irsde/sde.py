"""Forward statistics, ideal reverse states and the maximum-likelihood loss.

Functions accept numpy arrays or torch tensors; schedule coefficients are
evaluated in float64 and broadcast as Python scalars.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .schedule import SDESchedule


def _check_t(sched: SDESchedule, t: int, lo: int = 0) -> int:
    t = int(t)
    if not lo <= t <= sched.T:
        raise ValueError(f"t must lie in [{lo}, {sched.T}], got {t}")
    return t


def state_mean(x0, mu, sched: SDESchedule, t: int):
    """m_t = mu + (x0 - mu) exp(-lambda_bar_t)."""
    t = _check_t(sched, t)
    return mu + (x0 - mu) * math.exp(-sched.lambda_bar[t])


def state_var(sched: SDESchedule, t: int) -> float:
    """n_t = delta^2 (1 - exp(-2 lambda_bar_t))."""
    t = _check_t(sched, t)
    return sched.delta_sq * -math.expm1(-2.0 * sched.lambda_bar[t])


def _normal_like(x, seed):
    if isinstance(x, torch.Tensor):
        g = torch.Generator().manual_seed(int(seed))
        return torch.randn(x.shape, generator=g, dtype=x.dtype).to(x.device)
    return np.random.default_rng(seed).standard_normal(np.shape(x))


def forward_sample(x0, mu, sched: SDESchedule, t: int, seed: int):
    """Draw x_t = m_t + sqrt(n_t) * sigma_t; returns (x_t, sigma_t)."""
    t = _check_t(sched, t, lo=1)
    sigma_t = _normal_like(x0, seed)
    return state_mean(x0, mu, sched, t) + math.sqrt(state_var(sched, t)) * sigma_t, sigma_t


def terminal_state(mu, sched: SDESchedule, seed: int):
    """x_T ~ mu + N(0, delta^2)."""
    return mu + sched.delta * _normal_like(mu, seed)


def posterior_coefficients(sched: SDESchedule, t: int) -> tuple[float, float, float]:
    """(a, b, var) with E[x_{t-1} | x_t, x0] = mu + a (x_t - mu) + b (x0 - mu).

    ``var`` is the matching conditional variance.
    """
    t = _check_t(sched, t, lo=1)
    lb_t, lb_prev = sched.lambda_bar[t], sched.lambda_bar[t - 1]
    step = lb_t - lb_prev
    denom = -math.expm1(-2.0 * lb_t)
    ratio = -math.expm1(-2.0 * lb_prev) / denom  # lambda-hat_t
    a = ratio * math.exp(-step)
    b = math.exp(-lb_prev) * -math.expm1(-2.0 * step) / denom
    var = sched.delta_sq * -math.expm1(-2.0 * step) * ratio
    return a, b, var


def ideal_prev_state(x_t, x0, mu, sched: SDESchedule, t: int):
    """x*_{t-1}: posterior mean of the previous state given x_t and the clean start."""
    a, b, _ = posterior_coefficients(sched, t)
    return mu + a * (x_t - mu) + b * (x0 - mu)


def noise_step_coefficients(sched: SDESchedule, t: int) -> tuple[float, float]:
    """(c_x, c_eps) with the predicted-noise reverse mean mu + c_x (x_t - mu) - c_eps * eps.

    Obtained by substituting x0 = mu + (x_t - mu - sqrt(n_t) eps) exp(lambda_bar_t)
    into :func:`ideal_prev_state`; computed without forming exp(lambda_bar_t).
    """
    a, _, _ = posterior_coefficients(sched, t)
    lb_t, lb_prev = sched.lambda_bar[t], sched.lambda_bar[t - 1]
    step = lb_t - lb_prev
    # b * exp(lambda_bar_t) = exp(step) (1 - exp(-2 step)) / (1 - exp(-2 lambda_bar_t))
    b_scaled = math.exp(step) * -math.expm1(-2.0 * step) / -math.expm1(-2.0 * lb_t)
    return a + b_scaled, b_scaled * math.sqrt(state_var(sched, t))


def predicted_prev_mean(x_t, mu, eps, sched: SDESchedule, t: int):
    """Reverse-step mean x_t - (dx_t) driven by a noise estimate ``eps``.

    Equals :func:`ideal_prev_state` exactly when ``eps`` is the true forward draw.
    """
    c_x, c_eps = noise_step_coefficients(sched, t)
    return mu + c_x * (x_t - mu) - c_eps * eps


def score_from_noise(eps, sched: SDESchedule, t: int):
    """Conditional score -(x_t - m_t) / n_t expressed through the noise draw."""
    return -eps / math.sqrt(state_var(sched, t))


def _as_batch(batch, device=None, dtype=torch.float32):
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], torch.Tensor):
        clean, degraded = batch
    else:
        clean = torch.stack([torch.as_tensor(np.asarray(getattr(c, "data", c)), dtype=dtype)
                             for c, _ in batch])
        degraded = torch.stack([torch.as_tensor(np.asarray(getattr(d, "data", d)), dtype=dtype)
                                for _, d in batch])
    if clean.ndim == 3:
        clean, degraded = clean[:, None], degraded[:, None]
    if device is not None:
        clean, degraded = clean.to(device), degraded.to(device)
    return clean, degraded


def diffusion_loss(predictor, batch, sched: SDESchedule, seed: int) -> torch.Tensor:
    """sum_t gamma_t E || x_t - (dx_t)_f - x*_{t-1} ||_1 estimated on one batch.

    ``batch`` is a list of (clean, degraded) pairs or a ``(clean, degraded)``
    tuple of ``(B, 1, H, W)`` tensors. Each sample draws its own step t
    uniformly from [1, T]. ``predictor(x_t, mu, t)`` returns a noise estimate
    shaped like ``x_t``; ``t`` is a ``(B,)`` long tensor.
    """
    clean, mu = _as_batch(batch)
    if clean.shape[0] == 0:
        raise ValueError("empty batch")
    g = torch.Generator().manual_seed(int(seed))
    b = clean.shape[0]
    ts = torch.randint(1, sched.T + 1, (b,), generator=g)
    noise = torch.randn(clean.shape, generator=g, dtype=clean.dtype).to(clean.device)

    def per_sample(fn):
        vals = [fn(int(t)) for t in ts]
        return torch.tensor(vals, dtype=clean.dtype, device=clean.device).view(b, 1, 1, 1)

    decay = per_sample(lambda t: math.exp(-sched.lambda_bar[t]))
    std = per_sample(lambda t: math.sqrt(state_var(sched, t)))
    x_t = mu + (clean - mu) * decay + std * noise

    eps = predictor(x_t, mu, ts.to(clean.device))
    if eps.shape != x_t.shape:
        raise ValueError(f"predictor output {tuple(eps.shape)} does not match state {tuple(x_t.shape)}")

    coef = [posterior_coefficients(sched, int(t)) for t in ts]
    steps = [noise_step_coefficients(sched, int(t)) for t in ts]

    def col(vals):
        return torch.tensor(vals, dtype=clean.dtype, device=clean.device).view(b, 1, 1, 1)

    a, bb = col([c[0] for c in coef]), col([c[1] for c in coef])
    c_x, c_eps = col([s[0] for s in steps]), col([s[1] for s in steps])
    target = mu + a * (x_t - mu) + bb * (clean - mu)
    pred = mu + c_x * (x_t - mu) - c_eps * eps
    gamma = col([sched.gamma_t[int(t) - 1] for t in ts])
    per = (pred - target).abs().flatten(1).mean(dim=1, keepdim=True).view(b, 1, 1, 1)
    return (gamma * per).mean()


@torch.no_grad()
def reverse_sample(predictor, mu: torch.Tensor, sched: SDESchedule, generators,
                   x_T: torch.Tensor | None = None, clip_x0: tuple[float, float] | None = None) -> torch.Tensor:
    """Ancestral sampling from x_T down to x_0 for a ``(B, 1, H, W)`` batch.

    ``generators`` holds one torch.Generator per batch element so each
    sample's noise depends only on its own seed. With ``clip_x0`` the clean
    estimate implied by the predicted noise is clamped to that range before
    forming the posterior mean, which keeps early high-noise steps from
    drifting outside the data range.
    """
    b = mu.shape[0]
    if len(generators) != b:
        raise ValueError("need one generator per batch element")

    def draw():
        return torch.stack([torch.randn(mu.shape[1:], generator=g, dtype=mu.dtype)
                            for g in generators]).to(mu.device)

    x = mu + sched.delta * draw() if x_T is None else x_T
    for t in range(sched.T, 0, -1):
        ts = torch.full((b,), t, dtype=torch.long, device=mu.device)
        eps = predictor(x, mu, ts)
        if clip_x0 is None:
            x = predicted_prev_mean(x, mu, eps, sched, t)
        else:
            x0 = mu + (x - mu - math.sqrt(state_var(sched, t)) * eps) * math.exp(sched.lambda_bar[t])
            x = ideal_prev_state(x, x0.clamp(*clip_x0), mu, sched, t)
        _, _, var = posterior_coefficients(sched, t)
        z = draw()
        if t > 1:
            x = x + math.sqrt(var) * z
    return x
