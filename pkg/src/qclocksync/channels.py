"""Classical channel models and the Einstein-synchronization baseline.

The protocol must tolerate arbitrary classical-channel quality, so the
channel model is deliberately simple: additive delay, truncated Gaussian
jitter, Bernoulli loss. The baseline simulates round-trip light-pulse
exchange through a medium with a fluctuating refractive index; its error
grows with distance and fluctuation strength, which is exactly the
dependence the entanglement-based protocol is free of.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s


@dataclass(frozen=True)
class ChannelModel:
    base_delay: float = 0.0
    jitter_sigma: float = 0.0
    loss_probability: float = 0.0

    def __post_init__(self):
        if self.base_delay < 0.0:
            raise ValueError("base_delay must be >= 0")
        if self.jitter_sigma < 0.0:
            raise ValueError("jitter_sigma must be >= 0")
        if not (0.0 <= self.loss_probability <= 1.0):
            raise ValueError("loss_probability must lie in [0, 1]")


def deliver(channel: ChannelModel, send_time: float, rng: np.random.Generator) -> float | None:
    """Delivery time for a message sent at send_time, or None if lost.

    Always consumes one loss draw and one jitter draw so the channel rng
    stream has the same shape across channel settings. Realized delay is
    truncated at zero: deliver_time >= send_time always.
    """
    if not math.isfinite(send_time):
        raise ValueError("send_time must be finite")
    lost = rng.random() < channel.loss_probability
    jitter = rng.standard_normal() * channel.jitter_sigma
    if lost:
        return None
    return send_time + max(0.0, channel.base_delay + jitter)


@dataclass(frozen=True)
class MediumModel:
    """Line-of-sight medium for the classical baseline."""

    distance: float  # meters
    mean_index: float = 1.0
    index_fluctuation_sigma: float = 0.0
    correlation_time: float = 0.0  # reserved for a future correlated model

    def __post_init__(self):
        if self.distance <= 0.0:
            raise ValueError("distance must be > 0")
        if self.mean_index < 1.0:
            raise ValueError("mean_index must be >= 1")
        if self.index_fluctuation_sigma < 0.0:
            raise ValueError("index_fluctuation_sigma must be >= 0")


@dataclass(frozen=True)
class BaselineResult:
    estimated_offset: float
    true_offset: float

    @property
    def error(self) -> float:
        return self.estimated_offset - self.true_offset


def einstein_sync(medium: MediumModel, rng: np.random.Generator,
                  true_offset: float = 0.0) -> BaselineResult:
    """One round-trip Einstein-synchronization exchange through the medium.

    Each leg's refractive index is an independent Gaussian draw (floored at
    vacuum); Bob's offset estimate uses the standard midpoint rule, so the
    error is the index asymmetry between the two legs.
    """
    n_fwd = max(1.0, medium.mean_index + rng.standard_normal() * medium.index_fluctuation_sigma)
    n_back = max(1.0, medium.mean_index + rng.standard_normal() * medium.index_fluctuation_sigma)
    t_fwd = medium.distance * n_fwd / SPEED_OF_LIGHT
    t_back = medium.distance * n_back / SPEED_OF_LIGHT
    # Bob timestamps the pulse arrival on his clock; Alice assumes the one-way
    # time is half the measured round trip.
    estimated = true_offset + (t_fwd - t_back) / 2.0
    return BaselineResult(estimated_offset=estimated, true_offset=true_offset)


def es_rms_error(medium: MediumModel, n_trials: int, rng: np.random.Generator,
                 true_offset: float = 0.0) -> float:
    """RMS midpoint-rule error over n_trials independent exchanges."""
    errs = np.empty(n_trials)
    for i in range(n_trials):
        errs[i] = einstein_sync(medium, rng, true_offset).error
    return float(np.sqrt(np.mean(errs**2)))
