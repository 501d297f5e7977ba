"""Simulated channel impairments and noise bookkeeping.

All functions treat the last axis as the sample axis, so a single frame and
a ``(batch, L)`` stack of frames are handled alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = np.inf
    phase_offset_rad: float = 0.0
    time_shift_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if not -np.pi <= self.phase_offset_rad <= np.pi:
            raise ValueError(f"phase offset {self.phase_offset_rad} outside [-pi, pi]")
        if self.time_shift_samples < 0:
            raise ValueError("time shift must be non-negative")


def measure_power(frame) -> np.ndarray | float:
    """Mean of ``|sample|**2`` along the last axis."""
    p = np.mean(np.abs(np.asarray(frame)) ** 2, axis=-1)
    return float(p) if np.ndim(p) == 0 else p


def add_awgn(frame, snr_db, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex Gaussian noise at ``snr_db`` relative to each frame's power.

    ``snr_db`` may be a scalar or one value per frame.  ``+inf`` means no
    noise.  The result is not renormalized.
    """
    frame = np.asarray(frame)
    snr_db = np.asarray(snr_db, dtype=float)
    if np.any(np.isnan(snr_db)) or np.any(np.isneginf(snr_db)):
        raise ValueError(f"SNR must be finite or +inf, got {snr_db}")
    power = np.mean(np.abs(frame) ** 2, axis=-1)
    if np.any(power <= 0):
        raise ValueError("cannot reference SNR to a zero-power frame")
    noise_var = power / 10.0 ** (snr_db / 10.0)  # +inf SNR gives 0
    scale = np.sqrt(noise_var / 2.0)[..., None]
    noise = rng.standard_normal(frame.shape) + 1j * rng.standard_normal(frame.shape)
    return frame + (scale * noise).astype(np.result_type(frame.dtype, np.complex64))


def phase_rotate(frame, theta) -> np.ndarray:
    """Multiply by ``exp(1j * theta)``; ``theta`` may hold one angle per frame."""
    theta = np.asarray(theta, dtype=float)
    rot = np.exp(1j * theta)
    if rot.ndim:
        rot = rot[..., None]
    return np.asarray(frame) * rot


def circular_shift(frame, k) -> np.ndarray:
    """Delay by ``k`` samples circularly: ``out[n] = frame[n - k]``.

    ``k`` may be one integer per frame for a 2-D stack.
    """
    frame = np.asarray(frame)
    k = np.asarray(k)
    if k.ndim == 0:
        return np.roll(frame, int(k), axis=-1)
    n = frame.shape[-1]
    idx = (np.arange(n)[None, :] - k[:, None]) % n
    return np.take_along_axis(frame, idx, axis=-1)


def noise_std_for_pan(sigma_a: float, pan: float) -> float:
    """Channel-noise standard deviation giving post-adversarial noise ``pan`` dB."""
    return sigma_a / 10.0 ** (pan / 20.0)


def pan_db(sigma_a: float, sigma_gwn: float) -> float:
    """Post-adversarial noise level, ``20 log10(sigma_a / sigma_gwn)`` in dB.

    Both arguments are standard deviations: of the adversarial perturbation
    and of the channel noise added after it.
    """
    if not (sigma_a > 0 and sigma_gwn > 0):
        raise ValueError(f"PAN needs positive deviations, got {sigma_a}, {sigma_gwn}")
    return 20.0 * np.log10(sigma_a / sigma_gwn)


def worker_rng(base_seed: int, worker_index: int) -> np.random.Generator:
    """Independent stream for a parallel worker."""
    return np.random.default_rng(int(base_seed) ^ int(worker_index))


def apply_channel(frame, cfg: ChannelConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Phase offset, then circular delay, then AWGN."""
    out = circular_shift(phase_rotate(frame, cfg.phase_offset_rad), cfg.time_shift_samples)
    if np.isfinite(cfg.snr_db):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        out = add_awgn(out, cfg.snr_db, rng)
    return out
