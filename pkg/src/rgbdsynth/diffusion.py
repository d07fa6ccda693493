"""Noise schedules and every piece of sampling math.

Forward process, ancestral (DDPM) step, strided DDIM step, the masked
inpainting merge, classifier-free guidance, and the full inpainting
sample loop. All arrays are float64; images live in the normalized
[-1, 1] space (conversion from metric frames happens in pipeline).
"""

import numpy as np


class InvalidScheduleError(ValueError):
    pass


class InvalidTimestepError(ValueError):
    pass


class InvalidEtaError(ValueError):
    pass


class NoiseSchedule:
    """Tables beta_t, alpha_t, alpha_bar_t for t = 1..T, with alpha_bar_0 = 1.

    Arrays are indexed directly by timestep: index 0 is the t = 0
    convention slot (beta[0] = 0, alpha_bar[0] = 1).
    """

    def __init__(self, beta):
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) < 1:
            raise InvalidScheduleError("need at least one beta")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise InvalidScheduleError("betas must lie in (0, 1)")
        if len(beta) > 1 and np.any(np.diff(beta) <= 0):
            raise InvalidScheduleError("betas must be strictly increasing")
        self.T = len(beta)
        self.beta = np.concatenate([[0.0], beta])
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)
        for a in (self.beta, self.alpha, self.alpha_bar):
            a.setflags(write=False)

    def check_t(self, t):
        if not (1 <= t <= self.T):
            raise InvalidTimestepError(f"t={t} outside [1, {self.T}]")


def make_linear_schedule(T, beta_start=1e-4, beta_end=0.02):
    """Linear beta schedule from beta_start to beta_end inclusive."""
    if T < 1:
        raise InvalidScheduleError("T must be >= 1")
    if not (0 < beta_start < beta_end < 1):
        raise InvalidScheduleError("need 0 < beta_start < beta_end < 1")
    if T == 1:
        return NoiseSchedule(np.array([beta_start]))
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def strided_taus(T, S):
    """Uniform strided subsequence tau_i = round(i * T / S), i = 1..S."""
    if not (1 <= S <= T):
        raise InvalidScheduleError("need 1 <= S <= T")
    taus = np.unique(np.rint(np.arange(1, S + 1) * T / S).astype(np.int64))
    taus = taus[taus >= 1]
    return taus


class SamplerConfig:
    """Inference-time knobs: step count, stride, eta, guidance factor."""

    def __init__(self, S=50, tau=None, eta=0.0, guidance_beta=1.0,
                 clip_x0=True):
        if eta < 0:
            raise ValueError("eta must be >= 0")
        if guidance_beta < 0:
            raise ValueError("guidance_beta must be >= 0")
        self.S = int(S)
        self.tau = None if tau is None else np.asarray(tau, dtype=np.int64)
        self.eta = float(eta)
        self.guidance_beta = float(guidance_beta)
        # clamp the implied clean image to [-1, 1] inside the sample loop;
        # keeps imperfect noise estimates from blowing up through 1/sqrt(abar)
        self.clip_x0 = bool(clip_x0)

    def taus_for(self, sched):
        if self.tau is not None:
            tau = self.tau
            if np.any(np.diff(tau) <= 0) or tau[-1] != sched.T:
                raise InvalidScheduleError("tau must increase strictly to T")
            return tau
        return strided_taus(sched.T, self.S)


def forward_sample(x0, t, eps, sched):
    """q(x_t | x_0): sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Accepts t = 0."""
    if not (0 <= t <= sched.T):
        raise InvalidTimestepError(f"t={t} outside [0, {sched.T}]")
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddpm_step(x_t, t, eps_hat, noise, sched):
    """One ancestral reverse step x_t -> x_{t-1}; no noise added at t = 1."""
    sched.check_t(t)
    a = sched.alpha[t]
    ab = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    mu = (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    if t == 1:
        return mu
    sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab) * sched.beta[t])
    return mu + sigma * noise


def ddim_step(x_t, t, t_prev, eps_hat, noise, eta, sched):
    """Strided DDIM update from timestep t down to t_prev (t_prev may be 0).

    sigma^2 = eta * (1 - abar_prev) / (1 - abar_t) * (1 - abar_t / abar_prev);
    the last factor is the effective beta of the strided jump, reducing to
    beta_t for consecutive steps. eta = 0 makes the step deterministic.
    """
    sched.check_t(t)
    if not (0 <= t_prev < t):
        raise InvalidTimestepError("need 0 <= t_prev < t")
    ab = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t_prev]
    sigma2 = eta * (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)
    if sigma2 > 1.0 - ab_prev + 1e-15:
        raise InvalidEtaError("sigma^2 exceeds 1 - abar_prev")
    x0_hat = (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    dir_coef = np.sqrt(max(1.0 - ab_prev - sigma2, 0.0))
    out = np.sqrt(ab_prev) * x0_hat + dir_coef * eps_hat
    if eta > 0:
        out = out + np.sqrt(sigma2) * noise
    return out


def inpaint_merge(x_prev_full, x0_hat, mask, t, eps_vis, sched):
    """Replace the visible region with a forward-diffused copy of x0_hat.

    x_vis = (sqrt(abar_t) x0_hat + sqrt(1 - abar_t) eps_vis) * mask;
    the invisible region keeps the reverse-step output.
    """
    m = _expand_mask(mask, x_prev_full)
    x_vis = forward_sample(x0_hat, t, eps_vis, sched) * m
    return x_vis + x_prev_full * (1.0 - m)


def cfg_combine(eps_uncond, eps_cond, guidance_beta):
    """Classifier-free guidance: uncond + beta * (cond - uncond)."""
    if np.shape(eps_uncond) != np.shape(eps_cond):
        raise ValueError("shape mismatch")
    # the endpoints must reduce exactly; u + 1 * (c - u) is not bitwise c
    if guidance_beta == 0.0:
        return np.asarray(eps_uncond)
    if guidance_beta == 1.0:
        return np.asarray(eps_cond)
    return eps_uncond + guidance_beta * (eps_cond - eps_uncond)


def inpaint_sample(denoiser, x0_hat, mask, sched, cfg=None, rng_seed=0):
    """Full masked inpainting loop over the strided schedule.

    denoiser(x, cond, t) -> eps_hat; the unconditional branch passes the
    all-zero null condition. After the loop the visible pixels are
    overwritten with x0_hat exactly. Deterministic given rng_seed.
    """
    if cfg is None:
        cfg = SamplerConfig()
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    m = _expand_mask(mask, x0_hat)
    rng = np.random.Generator(np.random.Philox(rng_seed))

    taus = cfg.taus_for(sched)
    x = rng.standard_normal(x0_hat.shape)
    null_cond = np.zeros_like(x0_hat)
    for i in range(len(taus) - 1, -1, -1):
        t = int(taus[i])
        t_prev = int(taus[i - 1]) if i > 0 else 0
        eps_u = denoiser(x, null_cond, t)
        eps_c = denoiser(x, x0_hat, t)
        eps_tilde = cfg_combine(eps_u, eps_c, cfg.guidance_beta)
        if cfg.clip_x0:
            ab = sched.alpha_bar[t]
            x0_pred = (x - np.sqrt(1.0 - ab) * eps_tilde) / np.sqrt(ab)
            x0_pred = np.clip(x0_pred, -1.0, 1.0)
            eps_tilde = (x - np.sqrt(ab) * x0_pred) / np.sqrt(1.0 - ab)
        noise = rng.standard_normal(x.shape)
        x = ddim_step(x, t, t_prev, eps_tilde, noise, cfg.eta, sched)
        eps_vis = rng.standard_normal(x.shape)
        x = inpaint_merge(x, x0_hat, m, t_prev, eps_vis, sched)

    return x0_hat * m + x * (1.0 - m)


def _expand_mask(mask, like):
    m = np.asarray(mask, dtype=np.float64)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask must be binary")
    if m.ndim == like.ndim - 1:
        m = m[..., None]
    if m.shape != like.shape and m.shape != like.shape[:-1] + (1,):
        raise ValueError("mask shape incompatible with image")
    return m
