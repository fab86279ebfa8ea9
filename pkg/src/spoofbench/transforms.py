"""Attack transform parameters and the shared rigid-map helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    out = math.remainder(theta, 2.0 * math.pi)
    if out <= -math.pi:
        out += 2.0 * math.pi
    return out


@dataclass(frozen=True)
class TransformParams:
    """The attack's three optimization variables.

    theta rotates about the sensor z axis, tau_x translates along x, and
    s_h scales point heights.  theta is wrapped into (-pi, pi] on
    construction.
    """

    theta: float = 0.0
    tau_x: float = 0.0
    s_h: float = 1.0

    def __post_init__(self):
        if not all(np.isfinite([self.theta, self.tau_x, self.s_h])):
            raise ValidationError("transform parameters must be finite")
        if self.s_h <= 0.0:
            raise ValidationError(f"height scale must be positive, got {self.s_h}")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "tau_x", float(self.tau_x))
        object.__setattr__(self, "s_h", float(self.s_h))

    def to_array(self) -> np.ndarray:
        return np.array([self.theta, self.tau_x, self.s_h])

    @classmethod
    def from_array(cls, arr) -> "TransformParams":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    @classmethod
    def identity(cls) -> "TransformParams":
        return cls(0.0, 0.0, 1.0)

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 point-space matrix: rotate theta about z,
        translate tau_x along x, scale z by s_h."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array(
            [
                [c, -s, 0.0, self.tau_x],
                [s, c, 0.0, 0.0],
                [0.0, 0.0, self.s_h, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
