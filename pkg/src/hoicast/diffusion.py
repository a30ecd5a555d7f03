"""Noise schedule, forward noising, and ancestral sampling.

The denoiser predicts the clean signal directly (x0 parameterization); the
reverse step plugs that prediction into the standard posterior mean. Step
indices are zero-based: t ranges over [0, steps), the sampler runs
t = steps-1 .. 1 and finishes with a final clean projection at t = 0.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, RangeError, ShapeMismatch


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise fractions beta and cumulative signal fractions alpha_bar."""

    steps: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, float)
        alpha_bar = np.asarray(self.alpha_bar, float)
        if beta.shape != (self.steps,) or alpha_bar.shape != (self.steps,):
            raise ConfigError("schedule arrays must have length equal to steps")
        if np.any(np.diff(alpha_bar) >= 0):
            raise ConfigError("alpha_bar must be strictly decreasing")
        if alpha_bar[0] <= 0.99:
            raise ConfigError(
                f"alpha_bar[0] = {alpha_bar[0]:.4f} <= 0.99; increase steps or "
                "use the linear schedule")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", alpha_bar)


def make_schedule(steps, kind="cosine") -> NoiseSchedule:
    """Build a schedule; alpha_bar is the exact cumulative product of 1-beta."""
    if steps < 2:
        raise ConfigError(f"steps must be >= 2, got {steps}")
    if kind == "linear":
        beta = np.linspace(1e-4, 0.02, steps)
    elif kind == "cosine":
        s = 0.008
        grid = np.arange(steps + 1) / steps
        f = np.cos((grid + s) / (1 + s) * np.pi / 2) ** 2
        target = f[1:] / f[0]
        prev = np.concatenate([[1.0], target[:-1]])
        beta = np.clip(1.0 - target / prev, 1e-8, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind '{kind}'")
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(steps=steps, beta=beta, alpha_bar=alpha_bar)


def _check_t(sched, t, lo=0):
    if not lo <= t < sched.steps:
        raise RangeError(f"t={t} outside [{lo}, {sched.steps})")


def q_sample(x0, t, eps, sched: NoiseSchedule):
    """Forward marginal: x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps."""
    _check_t(sched, t)
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    ab = float(sched.alpha_bar[t])
    return float(np.sqrt(ab)) * x0 + float(np.sqrt(1.0 - ab)) * eps


def q_sample_batch(x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
                   sched: NoiseSchedule) -> torch.Tensor:
    """q_sample with a per-element timestep vector t of shape (B,)."""
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    ab = torch.as_tensor(sched.alpha_bar, dtype=x0.dtype)[t]
    shape = (-1,) + (1,) * (x0.dim() - 1)
    ab = ab.reshape(shape)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def posterior_coefficients(sched: NoiseSchedule, t):
    """(coef_x0, coef_xt, variance) of the reverse-step posterior at step t >= 1."""
    _check_t(sched, t, lo=1)
    ab_t = float(sched.alpha_bar[t])
    ab_prev = float(sched.alpha_bar[t - 1])
    beta_t = float(sched.beta[t])
    c0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    c1 = np.sqrt(1.0 - beta_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return c0, c1, var


def ddpm_step(x_t, x0_hat, t, sched: NoiseSchedule, noise=None):
    """One reverse step from level t to t-1 given the clean prediction.

    At t = 1 the posterior mean is returned with no added noise.
    """
    if x_t.shape != x0_hat.shape:
        raise ShapeMismatch(f"x_t {tuple(x_t.shape)} vs x0_hat {tuple(x0_hat.shape)}")
    c0, c1, var = posterior_coefficients(sched, t)
    mean = c0 * x0_hat + c1 * x_t
    if t == 1:
        return mean
    if noise is None:
        raise ShapeMismatch("noise is required for steps with t > 1")
    if noise.shape != x_t.shape:
        raise ShapeMismatch(f"noise {tuple(noise.shape)} vs x_t {tuple(x_t.shape)}")
    return mean + float(np.sqrt(var)) * noise


def sample_loop(denoiser, conditions, shape, sched: NoiseSchedule, seed,
                dtype=torch.float32) -> torch.Tensor:
    """Ancestral sampling with an x0-predicting denoiser.

    denoiser(x_t, t, conditions) must return a tensor of the same shape.
    The returned sample is the final clean projection at t = 0;
    deterministic for a fixed seed.
    """
    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(shape, generator=gen, dtype=dtype)
    for t in range(sched.steps - 1, 0, -1):
        x0_hat = denoiser(x, t, conditions)
        if x0_hat.shape != x.shape:
            raise ShapeMismatch(
                f"denoiser returned {tuple(x0_hat.shape)}, expected {tuple(x.shape)}")
        noise = None
        if t > 1:
            noise = torch.randn(shape, generator=gen, dtype=dtype)
        x = ddpm_step(x, x0_hat, t, sched, noise)
    return denoiser(x, 0, conditions)
