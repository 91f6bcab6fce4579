"""Training data: SNR-blended LLR mixtures and their single-Gaussian surrogate.

A minibatch blended from ``I`` SNR points has LLRs distributed as the
equal-weight mixture of ``Normal(2/s_i, 4/s_i)`` components (``s_i`` the noise
variance at point ``i``).  Its first two moments give a single Gaussian that
can be sampled directly instead of the mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .channel import ChannelBatch, snr_to_sigma2, stream_rng
from .tanner import CodeParams


@dataclass(frozen=True)
class MixtureSpec:
    """SNR range in dB; ``n_points=None`` selects the continuous limit."""

    snr_lo_db: float
    snr_hi_db: float
    n_points: int | None
    code: CodeParams

    def __post_init__(self):
        if self.snr_lo_db > self.snr_hi_db:
            raise ValueError("snr_lo_db must not exceed snr_hi_db")
        if self.n_points is not None and self.n_points < 1:
            raise ValueError("n_points must be >= 1")

    @property
    def continuous(self) -> bool:
        return self.n_points is None

    def snr_points(self) -> np.ndarray:
        if self.n_points is None:
            raise ValueError("continuous spec has no discrete SNR points")
        if self.n_points == 1:
            return np.array([0.5 * (self.snr_lo_db + self.snr_hi_db)])
        return np.linspace(self.snr_lo_db, self.snr_hi_db, self.n_points)

    def sigma2_points(self) -> np.ndarray:
        return np.array([snr_to_sigma2(s, self.code) for s in self.snr_points()])


@dataclass(frozen=True)
class ApproxMoments:
    mu_a: float
    sigma2_a: float


def mixture_moments_discrete(spec: MixtureSpec) -> ApproxMoments:
    if spec.n_points is None or spec.n_points < 1:
        raise ValueError("discrete moments need a finite n_points >= 1")
    means = 2.0 / spec.sigma2_points()
    mu = float(means.mean())
    second = float(np.mean(means ** 2 + 2.0 * means))  # E[Z_i^2] = (2/s)^2 + 4/s
    return ApproxMoments(mu, second - mu * mu)


def mixture_moments_continuous(spec: MixtureSpec) -> ApproxMoments:
    """Limit ``I -> inf`` with the components spread uniformly in sigma."""
    s_start = math.sqrt(snr_to_sigma2(spec.snr_hi_db, spec.code))
    s_end = math.sqrt(snr_to_sigma2(spec.snr_lo_db, spec.code))
    if not s_end > s_start:
        raise ValueError("degenerate SNR range; use the single-point moments")
    width = s_end - s_start
    mu = 2.0 / (s_start * s_end)
    # integral of 4/x^4 + 4/x^2 over [s_start, s_end]
    second = 4.0 * ((s_start ** -3 - s_end ** -3) / 3.0 + (1.0 / s_start - 1.0 / s_end)) / width
    return ApproxMoments(mu, second - mu * mu)


def mixture_moments(spec: MixtureSpec) -> ApproxMoments:
    return mixture_moments_continuous(spec) if spec.continuous else mixture_moments_discrete(spec)


def mixture_cdf(spec: MixtureSpec, z) -> np.ndarray:
    """CDF of the equal-weight LLR mixture at ``z`` (discrete specs only)."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    for s2 in spec.sigma2_points():
        out += ndtr((z - 2.0 / s2) / math.sqrt(4.0 / s2))
    return out / spec.n_points


def sample_approx_batch(m: ApproxMoments, batch_size: int, n: int, seed: int,
                        batch_index: int = 0) -> ChannelBatch:
    """I.i.d. ``Normal(mu_a, sigma2_a)`` LLRs with all-zero labels."""
    if not m.sigma2_a > 0:
        raise ValueError("sigma2_a must be positive")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = stream_rng(seed, batch_index)
    llrs = m.mu_a + math.sqrt(m.sigma2_a) * rng.standard_normal((batch_size, n))
    meta = {"kind": "approx", "mu_a": m.mu_a, "sigma2_a": m.sigma2_a}
    return ChannelBatch(llrs, np.zeros((batch_size, n), dtype=np.uint8), meta)


def point_shares(batch_size: int, n_points: int) -> list[int]:
    """Frames per SNR point; the remainder goes to the lowest SNR points first."""
    base, extra = divmod(batch_size, n_points)
    return [base + (1 if i < extra else 0) for i in range(n_points)]


def sample_blended_batch(spec: MixtureSpec, batch_size: int, seed: int,
                         batch_index: int = 0) -> ChannelBatch:
    """Frames drawn from the discrete SNR points, then shuffled."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = spec.code.n
    shares = point_shares(batch_size, spec.n_points)
    blocks, tags = [], []
    for idx, (share, s2) in enumerate(zip(shares, spec.sigma2_points())):
        if share == 0:
            continue
        rng = stream_rng(seed, batch_index, idx)
        y = 1.0 + math.sqrt(s2) * rng.standard_normal((share, n))
        blocks.append(2.0 * y / s2)
        tags.extend([idx] * share)
    perm = stream_rng(seed, batch_index, spec.n_points).permutation(batch_size)
    llrs = np.vstack(blocks)[perm]
    meta = {"kind": "blended", "snr_db": spec.snr_points().tolist(),
            "point_index": np.asarray(tags)[perm].tolist()}
    return ChannelBatch(llrs, np.zeros((batch_size, n), dtype=np.uint8), meta)


def initial_ber(m: ApproxMoments) -> float:
    """Probability that a surrogate LLR is negative, ``Phi(-mu_a / sigma_a)``."""
    if not m.sigma2_a > 0:
        raise ValueError("sigma2_a must be positive")
    return float(ndtr(-m.mu_a / math.sqrt(m.sigma2_a)))
