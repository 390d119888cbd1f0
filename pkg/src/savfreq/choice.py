"""Multinomial logit split of OD demand across transit, point-to-point SAV and driving."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .scenario import ChoiceParams


@dataclass(frozen=True)
class ModeSplit:
    transit_trips_per_h: float
    p2p_trips_per_h: float
    drive_trips_per_h: float

    @property
    def total(self) -> float:
        return self.transit_trips_per_h + self.p2p_trips_per_h + self.drive_trips_per_h


def transit_utility(t_min: float, fare: float, cp: ChoiceParams) -> float:
    """Systematic utility of transit for a journey of ``t_min`` minutes at ``fare``."""
    return cp.asc_transit + cp.beta_time * t_min + cp.beta_fare * fare


def mode_split(q: float, u_transit: float, u_p2p: float, u_drive: float) -> ModeSplit:
    """Split ``q`` trips/h by logit shares.

    ``u_transit = -inf`` marks transit as unreachable; the remaining two
    alternatives then share the demand. Utilities are shifted by their maximum
    before exponentiation, and the drive share is taken as the remainder so the
    three parts sum to ``q`` exactly.
    """
    if q <= 0.0:
        return ModeSplit(0.0, 0.0, 0.0)
    top = max(u_transit, u_p2p, u_drive)
    e_t = math.exp(u_transit - top) if u_transit != -math.inf else 0.0
    e_p = math.exp(u_p2p - top)
    e_d = math.exp(u_drive - top)
    denom = e_t + e_p + e_d
    transit = q * e_t / denom
    p2p = q * e_p / denom
    drive = max(q - transit - p2p, 0.0)
    return ModeSplit(transit, p2p, drive)
