"""Closed-form bounds, constants and envelopes for fBM path properties.

All evaluators are pure functions.  Exponents are computed in log space; an
``OverflowError`` is raised when an exponent exceeds 700 and exponents below
-700 are clamped, so reports never carry silent infinities.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

from .kernel import as_hurst

__all__ = [
    "CapacityParams",
    "BoundReport",
    "CH_MODES",
    "increment_capacity_bound",
    "gamma_factor",
    "sup_capacity_bound",
    "ch_constant",
    "cap_prob_factor",
    "mgf_sup_bound",
    "modulus_envelope",
    "lil_envelope",
    "gaussian_tail_lower",
    "gaussian_tail_upper",
    "double_point_dimension_threshold",
]

EXP_LIMIT = 700.0
CH_MODES = ("literal", "derived")
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class CapacityParams:
    p: float = 2.0
    r: int = 1
    M_r: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if int(self.r) != self.r or self.r < 0:
            raise ValueError("r must be a non-negative integer")
        object.__setattr__(self, "r", int(self.r))
        if not self.M_r > 0:
            raise ValueError("M_r must be positive")
        if self.M_r < 1:
            warnings.warn("M_r < 1: the cut-off derivative constant is assumed to be >= 1", stacklevel=2)
        if not self.c > 0:
            raise ValueError("c must be positive")


@dataclass(frozen=True)
class BoundReport:
    formula_id: str
    inputs: dict
    bound_value: float
    mode_flags: dict = field(default_factory=dict)

    FORMULAS = ("increment", "sup1", "sup2", "sup3", "cap_prob_factor", "mgf_sup",
                "modulus_env", "lil_env", "tail_lower", "tail_upper")

    def __post_init__(self):
        if self.formula_id not in self.FORMULAS:
            raise ValueError(f"unknown formula_id {self.formula_id!r}")
        if not (math.isfinite(self.bound_value) and self.bound_value >= 0):
            raise ValueError("bound_value must be finite and non-negative")

    def to_dict(self) -> dict:
        return {"formula_id": self.formula_id, "inputs": dict(self.inputs),
                "bound_value": self.bound_value, "mode_flags": dict(self.mode_flags)}


def _exp(x: float, what: str) -> float:
    if x > EXP_LIMIT:
        raise OverflowError(f"{what}: exponent {x!r} exceeds {EXP_LIMIT}")
    # raising a vanishing upper bound to e^-700 keeps it a valid upper bound
    return math.exp(max(x, -EXP_LIMIT))


def _check_interval(s: float, t: float) -> float:
    if not (0 <= s < t):
        raise ValueError(f"need 0 <= s < t, got s={s!r}, t={t!r}")
    return t - s


def increment_capacity_bound(H, params: CapacityParams, s: float, t: float, eta: float) -> float:
    """(2 sum_{l<=r} (eta/(p (t-s)^H))^{lp})^{1/p} exp(-eta^2 / (2p (t-s)^{2H}))."""
    h = as_hurst(H).value
    d = _check_interval(s, t)
    if not eta > 0:
        raise ValueError("eta must be positive")
    p, r = params.p, params.r
    a = p * math.log(eta / (p * d ** h))
    logs = [l * a for l in range(r + 1)]
    top = max(logs)
    log_sum = top + math.log(sum(math.exp(x - top) for x in logs))
    expo = (math.log(2.0) + log_sum) / p - eta * eta / (2 * p * d ** (2 * h))
    return _exp(expo, "increment_capacity_bound")


def gamma_factor(H) -> float:
    return 1.0 if as_hurst(H).value <= 0.5 else 1.5


def _sup_denominator(h: float, d: float) -> float:
    return gamma_factor(h) * d ** (2 * h) + d


def sup_capacity_bound(H, s: float, t: float, eta: float, variant: str = "one_sided") -> float:
    """C_{s,t,eta,H} exp(-eta^2 / (4 [gamma_H (t-s)^{2H} + (t-s)])), times sqrt(2) unless one-sided."""
    h = as_hurst(H).value
    d = _check_interval(s, t)
    if not eta > 0:
        raise ValueError("eta must be positive")
    if variant not in ("one_sided", "two_sided", "terminal"):
        raise ValueError(f"unknown variant {variant!r}")
    den = _sup_denominator(h, d)
    C = math.sqrt(eta * eta * d ** (2 * h) / (2 * den * den) + 2.0)
    one = C * _exp(-eta * eta / (4 * den), "sup_capacity_bound")
    return one if variant == "one_sided" else math.sqrt(2.0) * one


def ch_constant(H, mode: str = "literal") -> float:
    """C_H as printed (max{2^{2H-1}-1, 1}) or the derived bound |2^{2H-1}-1|."""
    h = as_hurst(H).value
    if mode == "literal":
        return max(2 ** (2 * h - 1) - 1, 1.0)
    if mode == "derived":
        return abs(2 ** (2 * h - 1) - 1)
    raise ValueError(f"ch mode must be one of {CH_MODES}")


def cap_prob_factor(N: int, params: CapacityParams, H, mode: str = "literal") -> float:
    """(sum_{l<=r} N^{lp} C_H^{lp/2} (M_r/c)^{lp})^{1/p}."""
    if int(N) != N or N < 1:
        raise ValueError("N must be an integer >= 1")
    CH = ch_constant(H, mode)
    p, r = params.p, params.r
    if r == 0:
        return 1.0
    if CH == 0.0:
        return 1.0
    a = p * (math.log(N) + 0.5 * math.log(CH) + math.log(params.M_r / params.c))
    logs = [l * a for l in range(r + 1)]
    top = max(logs)
    log_sum = top + math.log(sum(math.exp(x - top) for x in logs))
    return _exp(log_sum / p, "cap_prob_factor")


def mgf_sup_bound(H, alpha: float, s: float, t: float) -> float:
    """2 exp((alpha^2/2) [gamma_H (t-s)^{2H} + (t-s)])."""
    h = as_hurst(H).value
    d = _check_interval(s, t)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return 2.0 * _exp(0.5 * alpha * alpha * _sup_denominator(h, d), "mgf_sup_bound")


def modulus_envelope(H, delta: float) -> float:
    """g(delta) = sqrt(2 delta^{2H} log(1/delta))."""
    h = as_hurst(H).value
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(2 * delta ** (2 * h) * math.log(1 / delta))


def lil_envelope(H, t: float) -> float:
    """h(t) = sqrt(2 t^{2H} log log(1/t))."""
    h = as_hurst(H).value
    if not (0 < t < math.exp(-1)):
        raise ValueError("t must lie in (0, 1/e)")
    return math.sqrt(2 * t ** (2 * h) * math.log(math.log(1 / t)))


def gaussian_tail_lower(a: float) -> float:
    """phi(a) a / (1 + a^2), a lower bound for P(Z > a)."""
    if not a > 0:
        raise ValueError("a must be positive")
    return _INV_SQRT_2PI * a / (1 + a * a) * math.exp(-0.5 * a * a)


def gaussian_tail_upper(a: float) -> float:
    """phi(a) / a, an upper bound for P(Z > a)."""
    if not a > 0:
        raise ValueError("a must be positive")
    return _INV_SQRT_2PI / a * math.exp(-0.5 * a * a)


def double_point_dimension_threshold(H) -> int:
    """Smallest d with d > 2/H + 2 (H <= 1/2) or d > 6 (H > 1/2).

    The comparison is done in exact rational arithmetic on the decimal
    representation of H, so H = 0.4 gives 2/H + 2 = 7 exactly and d = 8.
    """
    h = as_hurst(H).value
    if h > 0.5:
        return 7
    bound = 2 / Fraction(repr(h)) + 2
    return math.floor(bound) + 1


def report(formula_id: str, value: float, mode_flags: dict | None = None, **inputs) -> BoundReport:
    return BoundReport(formula_id, inputs, float(value), mode_flags or {})
