"""Affine individual-ridership model anchored to a school-wide mean."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMeanRidership

_TRANSFORMS = {
    "identity": lambda d: np.asarray(d, dtype=float),
    "log1p": lambda d: np.log1p(np.asarray(d, dtype=float)),
}


@dataclass(frozen=True)
class RidershipModel:
    rho0: float
    rho1: float
    g_kind: str = "identity"
    mean: float = float("nan")

    def __post_init__(self):
        if self.g_kind not in _TRANSFORMS:
            raise ValueError(f"unknown g_kind {self.g_kind!r}")
        if self.rho1 < 0:
            raise ValueError("rho1 must be >= 0")

    def to_dict(self):
        return {"rho0": self.rho0, "rho1": self.rho1, "g_kind": self.g_kind, "mean": self.mean}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["rho0"]), float(d["rho1"]), d.get("g_kind", "identity"),
                   float(d.get("mean", float("nan"))))


def transform(d, g_kind="identity"):
    return _TRANSFORMS[g_kind](d)


def fit_ridership(distances, mean_ridership, g_kind="identity"):
    """Steepest nonnegative slope whose fitted probabilities stay in [0, 1]
    and average exactly to ``mean_ridership``.

    With gbar the mean of g(d), the slope is limited by the nearest student
    (rho1 * (gbar - min g) <= rbar) and the farthest one
    (rho1 * (max g - gbar) <= 1 - rbar).
    """
    rbar = float(mean_ridership)
    if not 0.0 < rbar < 1.0:
        raise InvalidMeanRidership(f"mean ridership must lie in (0, 1), got {mean_ridership}")
    g = transform(distances, g_kind)
    if g.size == 0:
        raise ValueError("distances must be non-empty")
    gbar = float(np.mean(g))
    lo = float(g.min())
    hi = float(g.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return RidershipModel(rbar, 0.0, g_kind, rbar)
    # mean of g lies strictly inside (lo, hi) once the spread is nonzero
    rho1 = min(rbar / (gbar - lo), (1.0 - rbar) / (hi - gbar))
    rho0 = rbar - rho1 * gbar
    return RidershipModel(rho0, rho1, g_kind, rbar)


def individual_ridership(model, d):
    """rho0 + rho1 * g(d), clamped to [0, 1]; scalar in, scalar out."""
    val = model.rho0 + model.rho1 * transform(d, model.g_kind)
    out = np.clip(val, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out
