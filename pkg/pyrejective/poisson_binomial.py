import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import factorial2

from pyrejective.errors import LatticeError, QuadratureError, ValidationError
from pyrejective.utils import fit_loglog_slope, warn

LATTICE_TOLERANCE = 1e-9
QUADRATURE_TOLERANCE = 1e-12
CONDITION_EPSILON = 0.01
MAX_ORDER = 16
MAX_EXPANSION = 12

_NODES, _WEIGHTS = leggauss(32)


class BernoulliEnsemble:
    """Success probabilities p_j of independent indicators; X_n is their sum"""

    def __init__(self, probs: Sequence[float]):
        probs = np.array(probs, dtype=float).ravel()
        if len(probs) == 0:
            raise ValidationError('ensemble needs at least one probability')
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0.0) or np.any(probs >= 1.0):
            bad = [float(p) for p in probs if not (0.0 < p < 1.0)]
            raise ValidationError('probabilities must lie strictly inside (0,1)', {'offending': bad[:10]})
        probs.setflags(write=False)
        self._probs = probs
        self._grouped = None

    @classmethod
    def from_pattern(cls, pattern: Sequence[float], n: int) -> 'BernoulliEnsemble':
        if n < 1:
            raise ValidationError('ensemble size must be positive', {'n': n})
        pattern = list(pattern)
        if len(pattern) == 0:
            raise ValidationError('empty pattern')
        return cls([pattern[i % len(pattern)] for i in range(n)])

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def n(self) -> int:
        return len(self._probs)

    @property
    def grouped(self) -> Tuple[np.ndarray, np.ndarray]:
        """distinct probabilities and their multiplicities"""
        if self._grouped is None:
            self._grouped = np.unique(self._probs, return_counts=True)
        return self._grouped

    def __len__(self):
        return self.n

    def __repr__(self):
        return f'BernoulliEnsemble(n={self.n})'


@dataclass(frozen=True)
class EnsembleMoments:
    mean: float
    v2: float
    w: float


@dataclass(frozen=True)
class FourierCoefficient:
    j: int
    value: complex
    quadrature_error: float


@dataclass(frozen=True)
class LcltExpansion:
    s: int
    nu: float
    value: float
    coefficients: Tuple[complex, ...]
    condition_ok: bool = True
    imaginary_residue: float = 0.0


@dataclass
class ErrorTable:
    """(size, value) rows of an asymptotic study and the fitted log-log slope"""

    sizes: List[int] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    slope: Optional[float] = None

    def add(self, size: int, value: float):
        self.sizes.append(int(size))
        self.values.append(float(value))

    def fit(self) -> 'ErrorTable':
        self.slope = fit_loglog_slope(self.sizes, self.values)
        return self

    def to_rows(self) -> List[tuple]:
        return [(size, value, self.slope) for size, value in zip(self.sizes, self.values)]


def pmf_exact(ensemble: BernoulliEnsemble) -> np.ndarray:
    """P(X_n = k), k = 0..n, by forward convolution"""
    pmf = np.zeros(ensemble.n + 1)
    pmf[0] = 1.0
    for j, p in enumerate(ensemble.probs, start=1):
        q = 1.0 - p
        head = pmf[:j + 1].copy()
        pmf[:j + 1] = head * q
        pmf[1:j + 1] += head[:j] * p
    return pmf


def moments(ensemble: BernoulliEnsemble) -> EnsembleMoments:
    p = ensemble.probs
    q = 1.0 - p
    return EnsembleMoments(mean=float(np.sum(p)), v2=float(np.sum(p * q)), w=float(np.sum(p * q * (p - q))))


def _phi(ensemble: BernoulliEnsemble, t: np.ndarray) -> np.ndarray:
    # q e^{-itp} + p e^{itq} = e^{-itp} (q + p e^{it}); integer multiplicities make the branch irrelevant
    t = np.asarray(t, dtype=float)
    values, counts = ensemble.grouped
    z = (1.0 - values)[None, :] + values[None, :] * np.exp(1j * t)[:, None]
    zero = np.any(z == 0, axis=1)
    log_z = np.log(np.where(z == 0, 1.0, z))
    log_phi = -1j * t * float(np.sum(ensemble.probs)) + log_z @ counts.astype(float)
    phi = np.exp(log_phi)
    phi[zero] = 0.0
    return phi


def char_fn(ensemble: BernoulliEnsemble, t: float) -> complex:
    if not (-math.pi - 1e-12 <= t <= math.pi + 1e-12):
        raise ValidationError('t must lie in [-pi, pi]', {'t': t})
    return complex(_phi(ensemble, np.array([t]))[0])


def panel_count(n: int) -> int:
    return int(math.ceil(4 + n / 8))


def _grid(panels: int) -> Tuple[np.ndarray, np.ndarray]:
    """composite Gauss-Legendre nodes and weights on [0, pi]"""
    edges = np.linspace(0.0, math.pi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
    weights = (half[:, None] * _WEIGHTS[None, :]).ravel()
    return nodes, weights


def _coefficients_on(ensemble: BernoulliEnsemble, j_max: int, panels: int) -> Tuple[np.ndarray, np.ndarray]:
    t, w = _grid(panels)
    phi = _phi(ensemble, t)
    values = np.zeros(j_max + 1, dtype=complex)
    scales = np.zeros(j_max + 1)
    tj = np.ones_like(t)
    for j in range(j_max + 1):
        # phi(-t) is conj(phi(t)): even orders keep Re, odd orders keep i*Im
        if j % 2 == 0:
            values[j] = np.dot(w, tj * phi.real) / math.pi
        else:
            values[j] = 1j * np.dot(w, tj * phi.imag) / math.pi
        scales[j] = np.dot(w, tj * np.abs(phi)) / math.pi
        tj = tj * t
    return values, scales


def fourier_coefficients(ensemble: BernoulliEnsemble, j_max: int) -> List[FourierCoefficient]:
    """I_{n,j} = (1/2pi) int_{-pi}^{pi} t^j phi_n(t) dt for j = 0..j_max"""
    if j_max < 0 or j_max > MAX_ORDER:
        raise ValidationError(f'order must lie in 0..{MAX_ORDER}', {'j': j_max})
    panels = panel_count(ensemble.n)
    coarse, _ = _coefficients_on(ensemble, j_max, panels)
    fine, scales = _coefficients_on(ensemble, j_max, 2 * panels)
    errors = np.abs(fine - coarse)
    # absolute tolerance, relative to the integral of |t^j phi| once that exceeds one
    limit = QUADRATURE_TOLERANCE * np.maximum(1.0, scales)
    failed = np.nonzero(errors > limit)[0]
    if len(failed) > 0:
        j = int(failed[0])
        raise QuadratureError('Fourier coefficient did not converge',
                              {'j': j, 'n': ensemble.n, 'error_estimate': float(errors[j])})
    return [FourierCoefficient(j, complex(fine[j]), float(errors[j])) for j in range(j_max + 1)]


def fourier_coefficient(ensemble: BernoulliEnsemble, j: int) -> FourierCoefficient:
    return fourier_coefficients(ensemble, j)[j]


def leading_coefficient(ensemble: BernoulliEnsemble, j: int) -> complex:
    """Gaussian leading term of I_{n,j}; the odd case is driven by the skewness w_n"""
    if j < 0:
        raise ValidationError('order must be nonnegative', {'j': j})
    m = moments(ensemble)
    v = math.sqrt(m.v2)
    if j % 2 == 0:
        return complex(v ** -(j + 1) * normal_moment(j) / math.sqrt(2 * math.pi))
    return 1j * m.w / (6 * math.sqrt(2 * math.pi)) * v ** -(j + 4) * normal_moment(j + 3)


def normal_moment(k: int) -> float:
    """E N^k for a standard normal N"""
    if k % 2 == 1:
        return 0.0
    if k == 0:
        return 1.0
    return float(factorial2(k - 1, exact=True))


def _lattice_check(ensemble: BernoulliEnsemble, nu: float) -> float:
    target = float(np.sum(ensemble.probs)) + nu
    if abs(target - round(target)) >= LATTICE_TOLERANCE:
        raise LatticeError('E X_n + nu is not an integer', {'nu': nu, 'mean': target - nu})
    return target


def _expansion_value(coefficients: Sequence[complex], nu: float, s: int) -> complex:
    total = 0j
    for j in range(s + 1):
        total += (-1j * nu) ** j / math.factorial(j) * coefficients[j]
    return total


def lclt_expansion(ensemble: BernoulliEnsemble, nu: float, s: int,
                   coefficients: Optional[Sequence[FourierCoefficient]] = None) -> LcltExpansion:
    """m_nu(s), the order-s local expansion of P(X_n = E X_n + nu)"""
    if s < 0 or s % 2 != 0 or s > MAX_EXPANSION:
        raise ValidationError(f'expansion order must be even and at most {MAX_EXPANSION}', {'s': s})
    _lattice_check(ensemble, nu)
    m = moments(ensemble)
    condition_ok = m.v2 >= CONDITION_EPSILON * ensemble.n
    if not condition_ok:
        warn(f'variance {m.v2:.4g} below {CONDITION_EPSILON} * n, expansion may be inaccurate')
    if coefficients is None:
        coefficients = fourier_coefficients(ensemble, s)
    values = tuple(c.value for c in coefficients[:s + 1])
    total = _expansion_value(values, nu, s)
    return LcltExpansion(s=s, nu=float(nu), value=float(total.real), coefficients=values,
                         condition_ok=condition_ok, imaginary_residue=abs(total.imag))


def inversion_probability(ensemble: BernoulliEnsemble, nu: float) -> float:
    """(1/2pi) int e^{-it nu} phi_n(t) dt, the lattice probability P(X_n = E X_n + nu)"""
    _lattice_check(ensemble, nu)
    t, w = _grid(2 * panel_count(ensemble.n))
    phi = _phi(ensemble, t)
    return float(np.dot(w, (np.exp(-1j * t * nu) * phi).real) / math.pi)


def lattice_offsets(ensemble: BernoulliEnsemble, kappa: float) -> List[Tuple[int, float]]:
    """(k, nu) with nu = k - E X_n, |nu| <= kappa and 0 <= k <= n"""
    mean = float(np.sum(ensemble.probs))
    low = max(0, int(math.ceil(mean - kappa)))
    high = min(ensemble.n, int(math.floor(mean + kappa)))
    return [(k, k - mean) for k in range(low, high + 1)]


def expansion_error_study(pattern: Sequence[float], sizes: Sequence[int], s: int, kappa: int) -> ErrorTable:
    """max over lattice nu with |nu| <= kappa of |f_{n,nu} - m_nu(s)| for each n"""
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValidationError('sizes must be increasing', {'sizes': list(sizes)})
    table = ErrorTable()
    for n in sizes:
        ensemble = BernoulliEnsemble.from_pattern(pattern, n)
        pmf = pmf_exact(ensemble)
        coefficients = fourier_coefficients(ensemble, s)
        worst = 0.0
        for k, nu in lattice_offsets(ensemble, kappa):
            approx = lclt_expansion(ensemble, nu, s, coefficients).value
            worst = max(worst, abs(pmf[k] - approx))
        table.add(n, worst)
    return table.fit()
