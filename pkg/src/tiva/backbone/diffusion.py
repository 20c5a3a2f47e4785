"""Per-token diffusion head: a compact MLP denoiser over continuous video
tokens, conditioned on the backbone hidden state for that token slot.

Training draws one cosine-schedule timestep per token and regresses the
injected noise; sampling runs an ancestral reverse pass over a strided subset
of the schedule.  Every token owns its own rng stream, so all tokens of a
frame sample simultaneously and the result is invariant to processing order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import Linear, Module, Tensor, no_grad
from ..nn.modules import trunc_normal


@dataclass
class DiffusionSchedule:
    train_steps: int = 100
    sampler_steps: int = 20
    s: float = 0.008

    def __post_init__(self):
        if self.train_steps < 1 or self.sampler_steps < 1:
            raise ValueError("schedule needs at least one step")
        t = np.arange(self.train_steps + 1) / self.train_steps
        f = np.cos((t + self.s) / (1 + self.s) * np.pi / 2) ** 2
        raw = f / f[0]
        # beta clipping keeps abar[T] strictly positive (x0 reconstruction
        # divides by sqrt(abar) at the first sampler step)
        betas = np.clip(1.0 - raw[1:] / raw[:-1], 0.0, 0.999)
        self.alphas_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        levels = np.sqrt(1 - self.alphas_bar[1:])
        if not np.all(np.diff(levels) > 0):
            raise ValueError("noise levels must increase strictly")
        self.noise_levels = levels

    def sampler_timesteps(self, steps: int | None = None) -> np.ndarray:
        n = self.sampler_steps if steps is None else steps
        if n < 1:
            raise ValueError("sampler needs at least one step")
        ts = np.unique(np.round(np.linspace(self.train_steps, 1, n)).astype(int))[::-1]
        return ts


def timestep_embedding(t: np.ndarray, dim: int, max_t: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, [N] -> [N, dim]."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = (np.asarray(t, np.float64) / max_t)[:, None] * freqs[None, :] * max_t
    return np.concatenate([np.cos(ang), np.sin(ang)], axis=-1).astype(np.float32)


class DiffusionHead(Module):
    def __init__(self, rng: np.random.Generator, token_dim: int, cond_dim: int,
                 width: int = 256, layers: int = 3, time_dim: int = 64,
                 schedule: DiffusionSchedule | None = None):
        self.token_dim = token_dim
        self.cond_dim = cond_dim
        self.time_dim = time_dim
        self.schedule = schedule or DiffusionSchedule()
        din = token_dim + cond_dim + time_dim
        self.layers = []
        for i in range(layers):
            self.layers.append(Linear(rng, din if i == 0 else width, width))
        self.out = Linear(rng, width, token_dim, zero_init=True)

    def predict(self, z_t: Tensor, t: np.ndarray, cond: Tensor) -> Tensor:
        """z_t [N, token_dim], t [N] ints, cond [N, cond_dim] -> noise estimate."""
        from ..nn import concat
        temb = Tensor(timestep_embedding(t, self.time_dim, self.schedule.train_steps))
        h = concat([z_t, cond, temb], axis=-1)
        for lin in self.layers:
            h = lin(h).silu()
        return self.out(h)

    def loss(self, targets: Tensor | np.ndarray, cond: Tensor,
             rng: np.random.Generator, weights: np.ndarray | None = None) -> Tensor:
        """Mean squared noise-prediction error at uniformly drawn timesteps.

        targets [N, token_dim] (constants), cond [N, cond_dim] (backbone
        gradients flow through), optional per-row weights in {0,1}.
        """
        z0 = targets.data if isinstance(targets, Tensor) else np.asarray(targets, np.float32)
        if z0.shape[0] != cond.data.shape[0]:
            raise ValueError(f"targets {z0.shape} vs conditions {cond.data.shape}")
        n = z0.shape[0]
        sch = self.schedule
        t = rng.integers(1, sch.train_steps + 1, size=n)
        eps = rng.standard_normal(z0.shape).astype(np.float32)
        ab = sch.alphas_bar[t][:, None].astype(np.float32)
        z_t = np.sqrt(ab) * z0 + np.sqrt(1 - ab) * eps
        pred = self.predict(Tensor(z_t), t, cond)
        err = (pred - Tensor(eps)) ** 2.0
        if weights is None:
            return err.mean()
        w = np.asarray(weights, np.float32)[:, None]
        total = float(w.sum()) * z0.shape[1]
        if total <= 0:
            raise ValueError("diffusion loss: no active rows")
        return (err * Tensor(w)).sum() * (1.0 / total)

    def sample(self, cond: np.ndarray, token_rngs: list[np.random.Generator],
               steps: int | None = None) -> np.ndarray:
        """Denoise all N tokens in parallel; token i draws only from
        token_rngs[i], so any processing order yields identical samples."""
        n = cond.shape[0]
        if len(token_rngs) != n:
            raise ValueError("need one rng stream per token")
        sch = self.schedule
        ts = sch.sampler_timesteps(steps)
        if ts.size < 1:
            raise ValueError("sampler needs at least one timestep")
        z = np.stack([r.standard_normal(self.token_dim) for r in token_rngs]).astype(np.float32)
        cond_t = Tensor(np.asarray(cond, np.float32))
        with no_grad():
            for j, tc in enumerate(ts):
                tn = ts[j + 1] if j + 1 < ts.size else 0
                ab_c = sch.alphas_bar[tc]
                ab_n = sch.alphas_bar[tn]
                eps_hat = self.predict(Tensor(z), np.full(n, tc), cond_t).data
                x0 = (z - np.sqrt(1 - ab_c) * eps_hat) / np.sqrt(ab_c)
                if tn == 0:
                    z = x0.astype(np.float32)
                    break
                # ancestral (eta=1) update
                sigma = np.sqrt((1 - ab_n) / (1 - ab_c)) * np.sqrt(1 - ab_c / ab_n)
                coef = np.sqrt(max(1 - ab_n - sigma ** 2, 0.0))
                noise = np.stack([r.standard_normal(self.token_dim) for r in token_rngs])
                z = (np.sqrt(ab_n) * x0 + coef * eps_hat + sigma * noise).astype(np.float32)
        return z


def token_rng_streams(seed: int, frame_index: int, num_tokens: int) -> list[np.random.Generator]:
    """Independent per-token generators keyed by (seed, frame, token)."""
    return [np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                         spawn_key=(frame_index, l)))
            for l in range(num_tokens)]
