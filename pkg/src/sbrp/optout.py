"""Logistic opt-out model: evaluation, anchor calibration and sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleCalibration

_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class OptOutModel:
    """theta(d, tau) = 1 / (1 + exp(a*d + b*tau + c)).

    Defaults make near-school students likely to accept incentives in the
    low thousands of USD while far students stay mostly on the bus.
    """

    a: float = 2.0
    b: float = -0.004
    c: float = 6.0
    check_signs: bool = True

    def __post_init__(self):
        if self.check_signs and not (self.a > 0 and self.b < 0 and self.c > 0):
            raise ValueError(f"opt-out model needs a > 0, b < 0, c > 0; got a={self.a}, b={self.b}, c={self.c}")

    def to_dict(self):
        return {"a": self.a, "b": self.b, "c": self.c}

    @classmethod
    def unchecked(cls, a, b, c):
        """Model without sign checks, for stubs (always/never opt out)."""
        return cls(a, b, c, check_signs=False)


def _logistic_neg(z):
    if z > _EXP_LIMIT:
        return 0.0
    if z < -_EXP_LIMIT:
        return 1.0
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def optout_probability(model, d, tau):
    """Opt-out probability for a student at distance ``d`` offered ``tau`` USD.

    Accepts scalars or arrays for ``d``.
    """
    if np.ndim(d) == 0:
        return _logistic_neg(model.a * float(d) + model.b * float(tau) + model.c)
    z = model.a * np.asarray(d, dtype=float) + model.b * float(tau) + model.c
    out = np.empty_like(z)
    for k, zk in enumerate(z.ravel()):
        out.flat[k] = _logistic_neg(float(zk))
    return out


def _logit_complement(p):
    # z such that 1/(1+exp(z)) = p
    return math.log(1.0 / p - 1.0)


def calibrate(d_close, p_high, tau_high, d_far, p_low, tau_low, epsilon0):
    """Fit (a, b, c) through two behavioural anchors and the zero-incentive floor.

    c pins theta(0, 0) = epsilon0; a and b then solve the 2x2 system that
    makes theta(d_close, tau_high) = p_high and theta(d_far, tau_low) = p_low.
    """
    if not d_close < d_far:
        raise ValueError("need d_close < d_far")
    if not tau_low < tau_high:
        raise ValueError("need tau_low < tau_high")
    if not p_low < p_high:
        raise ValueError("need p_low < p_high")
    if not 0.0 < epsilon0 < p_low:
        raise ValueError("need 0 < epsilon0 < p_low")
    if not 0.0 < p_high < 1.0:
        raise ValueError("need p_high in (0, 1)")
    c = _logit_complement(epsilon0)
    rhs = np.array([_logit_complement(p_high) - c, _logit_complement(p_low) - c])
    mat = np.array([[d_close, tau_high], [d_far, tau_low]], dtype=float)
    try:
        a, b = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        raise InfeasibleCalibration("anchor system is singular") from None
    if not (a > 0 and b < 0):
        raise InfeasibleCalibration(f"anchors imply a={a:.6g}, b={b:.6g}; need a > 0 and b < 0")
    return OptOutModel(float(a), float(b), float(c))


def replica_seed(base_seed, replica_index):
    """64-bit seed for one replica, hashed from (base_seed, replica_index)."""
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), int(replica_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def replica_rng(base_seed, replica_index):
    return np.random.default_rng(replica_seed(base_seed, replica_index))


def student_uniforms(instance, rng):
    """One uniform per student in ascending id order, keyed by id."""
    ids = sorted(s.id for s in instance.students)
    u = rng.random(len(ids))
    return dict(zip(ids, u))


def optouts_from_uniforms(instance, model, tau, uniforms):
    """Students with u_i < theta_i(tau); reusing ``uniforms`` across tau gives
    opt-out sets that grow with the incentive."""
    ids = [s.id for s in instance.students]
    theta = optout_probability(model, instance.distances_to_school, tau)
    return frozenset(sid for sid, th in zip(ids, np.atleast_1d(theta)) if uniforms[sid] < th)


def sample_optouts(instance, model, tau, rng):
    return optouts_from_uniforms(instance, model, tau, student_uniforms(instance, rng))
