"""Air-to-ground uplink model.

The channel is an average path-loss model: a probabilistic LoS/NLoS blend on
top of free-space loss, evaluated once per slot from end-of-movement
positions and held constant within the slot.  Rates share each UAV's
bandwidth equally among its served users and see co-channel interference
from every transmitting user served by a different UAV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import SPEED_OF_LIGHT, RadioParams


@dataclass(frozen=True)
class LinkGeometry:
    """One UAV-GU link: 3D distance and elevation angle in degrees."""

    uav_pos: tuple[float, float, float]
    gu_pos: tuple[float, float, float]
    distance: float
    elevation_deg: float

    @classmethod
    def from_points(
        cls,
        uav_xy: tuple[float, float],
        gu_xy: tuple[float, float],
        altitude: float,
        elevation_from_horizontal: bool = False,
    ) -> "LinkGeometry":
        dx = uav_xy[0] - gu_xy[0]
        dy = uav_xy[1] - gu_xy[1]
        horizontal = math.hypot(dx, dy)
        distance = math.sqrt(horizontal * horizontal + altitude * altitude)
        reference = horizontal if elevation_from_horizontal else distance
        elevation = math.degrees(math.atan2(altitude, reference))
        return cls(
            uav_pos=(uav_xy[0], uav_xy[1], altitude),
            gu_pos=(gu_xy[0], gu_xy[1], 0.0),
            distance=distance,
            elevation_deg=elevation,
        )


def los_probability(geometry: LinkGeometry, radio: RadioParams) -> float:
    """LoS probability 1 / (1 + l1 * exp(-l2 * (theta - l1))); in (0, 1)."""
    theta = geometry.elevation_deg
    return 1.0 / (1.0 + radio.lambda1 * math.exp(-radio.lambda2 * (theta - radio.lambda1)))


def path_loss_db(geometry: LinkGeometry, radio: RadioParams) -> float:
    """Average path loss: free-space term plus LoS/NLoS-blended excess loss."""
    d = geometry.distance
    if d <= 0.0:
        raise ValueError("path loss undefined at zero distance")
    p_los = los_probability(geometry, radio)
    free_space = (
        20.0 * math.log10(d)
        + 20.0 * math.log10(radio.carrier_freq)
        + 20.0 * math.log10(4.0 * math.pi / SPEED_OF_LIGHT)
    )
    return free_space + p_los * radio.eta_los + (1.0 - p_los) * radio.eta_nlos


def channel_gain(geometry: LinkGeometry, radio: RadioParams) -> float:
    """Linear gain through the dB pipeline: 10^(-PL/10)."""
    return 10.0 ** (-path_loss_db(geometry, radio) / 10.0)


def channel_gain_closed_form(geometry: LinkGeometry, radio: RadioParams) -> float:
    """Linear gain via the closed form (excess-loss blend over squared FSPL).

    Mathematically identical to :func:`channel_gain`; kept as an independent
    expression so the two routes can be cross-checked.
    """
    d = geometry.distance
    if d <= 0.0:
        raise ValueError("channel gain undefined at zero distance")
    p_los = los_probability(geometry, radio)
    excess = (radio.eta_los - radio.eta_nlos) * p_los + radio.eta_nlos
    numerator = 10.0 ** (-excess / 10.0)
    return numerator / (d * d * (4.0 * math.pi * radio.carrier_freq / SPEED_OF_LIGHT) ** 2)


def gain_matrix(
    uav_xy: np.ndarray,
    gu_xy: np.ndarray,
    altitude: float,
    radio: RadioParams,
) -> np.ndarray:
    """Vectorized linear gains, shape (num_uavs, num_gus)."""
    uav_xy = np.asarray(uav_xy, dtype=float)
    gu_xy = np.asarray(gu_xy, dtype=float)
    diff = uav_xy[:, None, :] - gu_xy[None, :, :]
    horizontal = np.hypot(diff[..., 0], diff[..., 1])
    distance = np.sqrt(horizontal * horizontal + altitude * altitude)
    reference = horizontal if radio.elevation_from_horizontal else distance
    theta = np.degrees(np.arctan2(altitude, reference))
    p_los = 1.0 / (1.0 + radio.lambda1 * np.exp(-radio.lambda2 * (theta - radio.lambda1)))
    pl = (
        20.0 * np.log10(distance)
        + 20.0 * math.log10(radio.carrier_freq)
        + 20.0 * math.log10(4.0 * math.pi / SPEED_OF_LIGHT)
        + p_los * radio.eta_los
        + (1.0 - p_los) * radio.eta_nlos
    )
    return 10.0 ** (-pl / 10.0)


@dataclass
class RateContext:
    """Everything the rate model needs for one slot.

    ``gu_to_uav`` holds the serving UAV index per GU (-1 when unassigned);
    ``transmit_mask`` marks GUs that actually have data to send; only those
    radiate interference.
    """

    gains: np.ndarray        # (U, G) linear gains
    tx_powers: np.ndarray    # (G,) watts
    gu_to_uav: np.ndarray    # (G,) int, -1 = unassigned
    transmit_mask: np.ndarray  # (G,) bool

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        self.tx_powers = np.asarray(self.tx_powers, dtype=float)
        self.gu_to_uav = np.asarray(self.gu_to_uav, dtype=int)
        self.transmit_mask = np.asarray(self.transmit_mask, dtype=bool)

    @property
    def num_uavs(self) -> int:
        return self.gains.shape[0]

    def served_count(self, uav: int) -> int:
        return int(np.count_nonzero(self.gu_to_uav == uav))

    def served_counts(self) -> np.ndarray:
        served = self.gu_to_uav >= 0
        return np.bincount(self.gu_to_uav[served], minlength=self.num_uavs)


def interference_at(uav: int, ctx: RateContext) -> float:
    """Received co-channel power at ``uav`` from users served by other UAVs."""
    others = ctx.transmit_mask & (ctx.gu_to_uav >= 0) & (ctx.gu_to_uav != uav)
    if not others.any():
        return 0.0
    return float(ctx.gains[uav, others] @ ctx.tx_powers[others])


def uplink_rate(gu: int, uav: int, ctx: RateContext, radio: RadioParams) -> float:
    """Achievable uplink rate of ``gu`` served by ``uav``, bits/s."""
    if ctx.gu_to_uav[gu] != uav:
        raise ValueError(f"GU {gu} is not associated with UAV {uav}")
    share = ctx.served_count(uav)
    bandwidth = radio.bandwidth / share
    noise = radio.noise_psd_w * bandwidth
    interference = interference_at(uav, ctx)
    signal = ctx.tx_powers[gu] * ctx.gains[uav, gu]
    return bandwidth * math.log2(1.0 + signal / (interference + noise))


def rate_vector(ctx: RateContext, radio: RadioParams) -> np.ndarray:
    """Rates for every served GU at once (0 for unassigned), bits/s."""
    num_gus = ctx.gu_to_uav.shape[0]
    rates = np.zeros(num_gus)
    served = ctx.gu_to_uav >= 0
    if not served.any():
        return rates
    counts = ctx.served_counts().astype(float)
    tx = ctx.transmit_mask & served
    received = ctx.gains @ (ctx.tx_powers * tx)  # (U,) total received power
    gu_idx = np.nonzero(served)[0]
    uavs = ctx.gu_to_uav[gu_idx]
    own = ctx.gains[uavs, gu_idx] * ctx.tx_powers[gu_idx]
    # Interference at each serving UAV excludes its own cell's users.
    own_cell = np.zeros(ctx.num_uavs)
    np.add.at(own_cell, uavs, ctx.gains[uavs, gu_idx] * (ctx.tx_powers[gu_idx] * tx[gu_idx]))
    interference = np.maximum(received[uavs] - own_cell[uavs], 0.0)
    share = radio.bandwidth / counts[uavs]
    noise = radio.noise_psd_w * share
    rates[gu_idx] = share * np.log2(1.0 + own / (interference + noise))
    return rates
