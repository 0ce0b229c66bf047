import math
from typing import Optional, Sequence, Tuple

import numpy as np

from pyrejective.errors import ValidationError

#
# Elementary symmetric polynomials e_0..e_kmax kept as mantissa * 2**exponent per column.
# Weights are divided by their geometric mean before the recursion, the scale is
# carried separately in log form.
#

ZERO_EXPONENT = -(1 << 40)
_LDEXP_FLOOR = -2100


def _shifted(mantissas: np.ndarray, exponents: np.ndarray, top: np.ndarray) -> np.ndarray:
    shift = np.clip(exponents - top, _LDEXP_FLOOR, 0).astype(np.int32)
    return np.ldexp(mantissas, shift)


def push(mantissas: np.ndarray, exponents: np.ndarray, x: float) \
        -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Add one item of weight x: e_k <- e_k + x e_{k-1} for every k >= 1.

    :param mantissas:   current mantissas, index k
    :param exponents:   current binary exponents, index k
    :param x:           weight of the new item (already scaled)
    :return:            new mantissas, new exponents, and for k >= 1 the shares of the
                        updated e_k coming from the old e_k and from x e_{k-1}
    """
    top = np.maximum(exponents[1:], exponents[:-1])
    keep = _shifted(mantissas[1:], exponents[1:], top)
    add = _shifted(x * mantissas[:-1], exponents[:-1], top)
    total = keep + add
    frac, shift = np.frexp(total)
    positive = total > 0

    new_m = mantissas.copy()
    new_e = exponents.copy()
    new_m[1:] = frac
    new_e[1:] = np.where(positive, top + shift, ZERO_EXPONENT)

    w_keep = np.zeros_like(total)
    w_add = np.zeros_like(total)
    np.divide(keep, total, out=w_keep, where=positive)
    np.divide(add, total, out=w_add, where=positive)
    return new_m, new_e, w_keep, w_add


def empty_columns(k_max: int) -> Tuple[np.ndarray, np.ndarray]:
    mantissas = np.zeros(k_max + 1)
    exponents = np.full(k_max + 1, ZERO_EXPONENT, dtype=np.int64)
    mantissas[0], exponents[0] = np.frexp(1.0)
    return mantissas, exponents


def accumulate(scaled_weights: Sequence[float], k_max: int,
               start: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[np.ndarray, np.ndarray]:
    if start is None:
        mantissas, exponents = empty_columns(k_max)
    else:
        mantissas, exponents = start[0].copy(), start[1].copy()
    for x in scaled_weights:
        mantissas, exponents, _, _ = push(mantissas, exponents, float(x))
    return mantissas, exponents


class SymmetricPolyTable:
    """e_k(x) = mantissas[k] * 2**exponents[k] * exp(k * log_scale), k = 0..k_max"""

    def __init__(self, mantissas: np.ndarray, exponents: np.ndarray, log_scale: float):
        self.mantissas = mantissas
        self.exponents = exponents
        self.log_scale = log_scale

    @property
    def k_max(self) -> int:
        return len(self.mantissas) - 1

    def _check(self, k: int):
        if k < 0 or k > self.k_max:
            raise ValidationError(f'order {k} outside 0..{self.k_max}', {'k': k, 'k_max': self.k_max})

    def is_zero(self, k: int) -> bool:
        self._check(k)
        return self.mantissas[k] == 0

    def log_value(self, k: int) -> float:
        self._check(k)
        if self.mantissas[k] == 0:
            return -math.inf
        return math.log(self.mantissas[k]) + float(self.exponents[k]) * math.log(2.0) + k * self.log_scale

    def value(self, k: int) -> float:
        """plain float value; may overflow to inf for large populations"""
        self._check(k)
        if self.mantissas[k] == 0:
            return 0.0
        with np.errstate(over='ignore'):
            scaled = float(np.ldexp(self.mantissas[k], int(np.clip(self.exponents[k], -2100, 2100))))
            return scaled * math.exp(k * self.log_scale)

    def scaled_ratio(self, k: int, other: 'SymmetricPolyTable', k_other: int) -> float:
        """e_k(this) / e_k_other(other) with the common scale factor removed, i.e. g**(k_other - k)
        times the true ratio. Both tables must share log_scale."""
        self._check(k)
        other._check(k_other)
        if self.mantissas[k] == 0:
            return 0.0
        diff = int(np.clip(self.exponents[k] - other.exponents[k_other], -2100, 2100))
        with np.errstate(over='ignore'):
            return float(np.ldexp(self.mantissas[k] / other.mantissas[k_other], diff))


def scale_weights(weights: np.ndarray) -> Tuple[np.ndarray, float]:
    log_w = np.log(weights)
    log_scale = float(np.mean(log_w)) if len(weights) > 0 else 0.0
    return np.exp(log_w - log_scale), log_scale


def build_table(weights: np.ndarray, k_max: int, log_scale: Optional[float] = None) -> SymmetricPolyTable:
    """symmetric polynomials of `weights`; pass log_scale to share the scale of a parent population"""
    weights = np.asarray(weights, dtype=float)
    if k_max < 0:
        raise ValidationError(f'negative order {k_max}', {'k_max': k_max})
    if log_scale is None:
        scaled, log_scale = scale_weights(weights)
    else:
        scaled = weights * math.exp(-log_scale)
    mantissas, exponents = accumulate(scaled, k_max)
    return SymmetricPolyTable(mantissas, exponents, log_scale)


def extend_table(table: SymmetricPolyTable, scaled_weights: Sequence[float]) -> SymmetricPolyTable:
    """table of the population grown by items whose weights are already divided by the table scale"""
    mantissas, exponents = accumulate(scaled_weights, table.k_max, start=(table.mantissas, table.exponents))
    return SymmetricPolyTable(mantissas, exponents, table.log_scale)
