"""Local east/north metres <-> WGS-84 degrees around a reference point."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular projection; accurate to centimetres over a few hundred metres."""

    lat0_deg: float = 42.3398
    lon0_deg: float = -71.0892

    def to_latlon(self, x_m: float, y_m: float) -> tuple[float, float]:
        lat = self.lat0_deg + math.degrees(y_m / EARTH_RADIUS_M)
        lon = self.lon0_deg + math.degrees(x_m / (EARTH_RADIUS_M * math.cos(math.radians(self.lat0_deg))))
        return lat, lon

    def to_xy(self, lat_deg: float, lon_deg: float) -> tuple[float, float]:
        y = math.radians(lat_deg - self.lat0_deg) * EARTH_RADIUS_M
        x = math.radians(lon_deg - self.lon0_deg) * EARTH_RADIUS_M * math.cos(math.radians(self.lat0_deg))
        return x, y


def heading_deg(vx: float, vy: float) -> float:
    """Compass heading of a velocity: 0 is north, 90 is east."""
    if vx == 0 and vy == 0:
        return 0.0
    return math.degrees(math.atan2(vx, vy)) % 360.0


def velocity(speed: float, heading: float) -> tuple[float, float]:
    rad = math.radians(heading)
    return speed * math.sin(rad), speed * math.cos(rad)
