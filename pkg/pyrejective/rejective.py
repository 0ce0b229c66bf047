import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import combinations, islice
from typing import Dict, FrozenSet, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect
from scipy.special import comb, expit

from pyrejective import symmetric
from pyrejective.errors import InfeasibleError, SamplerGuardError, ValidationError
from pyrejective.poisson_binomial import BernoulliEnsemble, ErrorTable, fourier_coefficients, normal_moment, \
    pmf_exact, _expansion_value
from pyrejective.symmetric import SymmetricPolyTable

MAX_JOINT = 12
MAX_RECURSION = 10
REJECTION_GUARD = 1e6
SUBSET_WINDOW = 12
TILT_BRACKET = 40.0


class WeightedPopulation:
    """Items with ids and positive weights x_A"""

    def __init__(self, ids: Sequence[Hashable], weights: Sequence[float]):
        weights = np.array(weights, dtype=float).ravel()
        ids = tuple(ids)
        if len(ids) != len(weights):
            raise ValidationError('ids and weights differ in length', {'ids': len(ids), 'weights': len(weights)})
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValidationError('weights must be positive and finite')
        self._index = {label: i for i, label in enumerate(ids)}
        if len(self._index) != len(ids):
            raise ValidationError('duplicate ids in population')
        weights.setflags(write=False)
        self._ids = ids
        self._weights = weights

    @classmethod
    def from_weights(cls, weights: Sequence[float]) -> 'WeightedPopulation':
        """ids are the 1-based positions as strings"""
        return cls([str(i + 1) for i in range(len(weights))], weights)

    @classmethod
    def from_pattern(cls, pattern: Sequence[float], size: int) -> 'WeightedPopulation':
        return cls.from_weights([pattern[i % len(pattern)] for i in range(size)])

    @property
    def ids(self) -> Tuple:
        return self._ids

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def size(self) -> int:
        return len(self._ids)

    def __len__(self):
        return self.size

    def index_of(self, labels: Iterable[Hashable]) -> np.ndarray:
        try:
            idx = [self._index[label] for label in labels]
        except KeyError as ex:
            raise ValidationError(f'unknown id {ex.args[0]!r}', {'id': str(ex.args[0])})
        if len(set(idx)) != len(idx):
            raise ValidationError('repeated id in item set')
        return np.array(sorted(idx), dtype=int)

    def without(self, indices: Iterable[int]) -> 'WeightedPopulation':
        drop = set(int(i) for i in indices)
        keep = [i for i in range(self.size) if i not in drop]
        return WeightedPopulation([self._ids[i] for i in keep], self._weights[keep])

    def scaled(self, c: float) -> 'WeightedPopulation':
        return WeightedPopulation(self._ids, self._weights * c)

    def reciprocal(self) -> 'WeightedPopulation':
        return WeightedPopulation(self._ids, 1.0 / self._weights)


@dataclass(frozen=True)
class ConditionalSpec:
    must_include: FrozenSet = field(default_factory=frozenset)
    must_exclude: FrozenSet = field(default_factory=frozenset)

    @classmethod
    def of(cls, include: Iterable = (), exclude: Iterable = ()) -> 'ConditionalSpec':
        return cls(frozenset(include), frozenset(exclude))


def elementary_symmetric(pop: WeightedPopulation, k_max: int) -> SymmetricPolyTable:
    if k_max < 0 or k_max > pop.size:
        raise ValidationError(f'k_max {k_max} outside 0..{pop.size}', {'k_max': k_max, 'size': pop.size})
    return symmetric.build_table(pop.weights, k_max)


def _tilt_probabilities(weights: np.ndarray, lam: float) -> np.ndarray:
    return expit(math.log(lam) + np.log(weights))


def tilt_lambda(pop: WeightedPopulation, eta: int) -> float:
    """the unique lambda > 0 with mean_A lambda x_A / (1 + lambda x_A) = eta / |E|"""
    if not 0 < eta < pop.size:
        raise InfeasibleError('no finite tilt for eta outside 1..|E|-1', {'eta': eta, 'size': pop.size})
    scaled, log_scale = symmetric.scale_weights(pop.weights)
    log_x = np.log(scaled)
    target = eta / pop.size

    def excess(log_mu: float) -> float:
        return float(np.mean(expit(log_mu + log_x))) - target

    if excess(-TILT_BRACKET) >= 0 or excess(TILT_BRACKET) <= 0:
        raise InfeasibleError('tilt root not bracketed', {'eta': eta, 'size': pop.size})
    log_mu = bisect(excess, -TILT_BRACKET, TILT_BRACKET, xtol=1e-13, maxiter=200)
    return math.exp(log_mu - log_scale)


class RejectiveLaw:
    """P_{E,eta}(d) proportional to x_d over the eta-subsets of E"""

    def __init__(self, population: WeightedPopulation, eta: int, allow_degenerate: bool = False):
        eta = int(eta)
        if allow_degenerate:
            if not 0 <= eta <= population.size:
                raise InfeasibleError('eta outside 0..|E|', {'eta': eta, 'size': population.size})
        elif not 0 < eta < population.size:
            raise ValidationError('eta must satisfy 0 < eta < |E|', {'eta': eta, 'size': population.size})
        self.population = population
        self.eta = eta
        self._scaled, log_scale = symmetric.scale_weights(population.weights)
        self._scaled.setflags(write=False)
        self.table = SymmetricPolyTable(*symmetric.accumulate(self._scaled, eta), log_scale)

    @property
    def size(self) -> int:
        return self.population.size

    @property
    def is_degenerate(self) -> bool:
        return self.eta == 0 or self.eta == self.size

    @property
    def scaled_weights(self) -> np.ndarray:
        """weights divided by their geometric mean, the scale of `table`"""
        return self._scaled

    @cached_property
    def lambda_star(self) -> Optional[float]:
        if self.is_degenerate:
            return None
        return tilt_lambda(self.population, self.eta)

    @cached_property
    def p_lambda(self) -> np.ndarray:
        if self.is_degenerate:
            return np.full(self.size, 1.0 if self.eta == self.size else 0.0)
        return _tilt_probabilities(self.population.weights, self.lambda_star)

    @property
    def q_lambda(self) -> np.ndarray:
        return 1.0 - self.p_lambda

    @property
    def v2_lambda(self) -> float:
        return float(np.sum(self.p_lambda * self.q_lambda))

    def __repr__(self):
        return f'RejectiveLaw(size={self.size}, eta={self.eta})'


def _joint(law: RejectiveLaw, idx: np.ndarray) -> float:
    """P(idx subset of D) = x_u e_{eta-|u|}(E minus u) / e_eta(E)"""
    m = len(idx)
    if m == 0:
        return 1.0
    if m > law.eta:
        return 0.0
    if law.eta == law.size:
        return 1.0
    scaled = law.scaled_weights
    rest = np.delete(scaled, idx)
    sub = SymmetricPolyTable(*symmetric.accumulate(rest, law.eta - m), law.table.log_scale)
    return float(np.prod(scaled[idx])) * sub.scaled_ratio(law.eta - m, law.table, law.eta)


def inclusion_exact(law: RejectiveLaw, u: Iterable[Hashable]) -> float:
    idx = law.population.index_of(u)
    if law.eta == 0 and 0 < len(idx) <= MAX_JOINT:
        return 0.0
    if len(idx) > min(law.eta, MAX_JOINT):
        raise ValidationError(f'item set larger than min(eta, {MAX_JOINT})', {'size': len(idx), 'eta': law.eta})
    return _joint(law, idx)


def subset_mass(law: RejectiveLaw, d: Iterable[Hashable]) -> float:
    idx = law.population.index_of(d)
    if len(idx) != law.eta:
        raise ValidationError('subset size differs from eta', {'size': len(idx), 'eta': law.eta})
    log_mass = float(np.sum(np.log(law.population.weights[idx]))) - law.table.log_value(law.eta)
    return math.exp(log_mass)


def product_mass(law: RejectiveLaw, d: Iterable[Hashable], lam: float) -> float:
    """T_lambda(D = d | X_E = eta) for the independent tilted indicators"""
    idx = law.population.index_of(d)
    p = _tilt_probabilities(law.population.weights, lam)
    member = np.zeros(law.size, dtype=bool)
    member[idx] = True
    joint = float(np.prod(np.where(member, p, 1.0 - p)))
    return joint / pmf_exact(BernoulliEnsemble(p))[law.eta]


def inclusion_product_form(law: RejectiveLaw, a: Hashable) -> float:
    """p_{A,lambda} T_lambda(X_F = eta - 1) / T_lambda(X_E = eta) with F = E minus A"""
    i = int(law.population.index_of([a])[0])
    p = law.p_lambda
    rest = np.delete(p, i)
    tail = pmf_exact(BernoulliEnsemble(rest))[law.eta - 1]
    return float(p[i] * tail / pmf_exact(BernoulliEnsemble(p))[law.eta])


def _check_spec(law: RejectiveLaw, spec: ConditionalSpec) -> Tuple[np.ndarray, np.ndarray]:
    u = law.population.index_of(spec.must_include)
    v = law.population.index_of(spec.must_exclude)
    if len(set(u.tolist()) & set(v.tolist())) > 0:
        raise InfeasibleError('included and excluded sets overlap')
    remaining = law.size - len(u) - len(v)
    if len(u) > law.eta or law.eta - len(u) > remaining:
        raise InfeasibleError('conditioning event has probability zero',
                              {'include': len(u), 'exclude': len(v), 'eta': law.eta, 'size': law.size})
    return u, v


def conditional_law(law: RejectiveLaw, spec: ConditionalSpec) -> RejectiveLaw:
    """the law given u inside D and v outside D: P_{E minus (u, v), eta - |u|}"""
    u, v = _check_spec(law, spec)
    if len(u) == 0 and len(v) == 0:
        return law
    return RejectiveLaw(law.population.without(np.concatenate([u, v])), law.eta - len(u), allow_degenerate=True)


def complement_law(law: RejectiveLaw) -> RejectiveLaw:
    """law of E minus D: reciprocal weights, size |E| - eta"""
    return RejectiveLaw(law.population.reciprocal(), law.size - law.eta, allow_degenerate=law.is_degenerate)


def shifted_law(law: RejectiveLaw, eta: int) -> RejectiveLaw:
    return RejectiveLaw(law.population, eta, allow_degenerate=True)


def _check_order(s: int, limit: int):
    if s < 0 or s % 2 != 0 or s > limit:
        raise ValidationError(f'expansion order must be even and at most {limit}', {'s': s})


def _complement_coefficients(law: RejectiveLaw, i: int, lam: float, s: int) -> Tuple[np.ndarray, List[complex]]:
    p = _tilt_probabilities(law.population.weights, lam)
    coefficients = fourier_coefficients(BernoulliEnsemble(np.delete(p, i)), s)
    base = coefficients[0].value
    return p, [c.value / base for c in coefficients]


def inclusion_approx(law: RejectiveLaw, a: Hashable, k: int = 0, s: int = 0, resolve_lambda: bool = False) -> float:
    """Local-expansion approximation of P_{E,eta+k}(A) with the tilt solved at (E, eta)."""
    _check_order(s, 8)
    if abs(k) > 8:
        raise ValidationError('shift k must satisfy |k| <= 8', {'k': k})
    if law.is_degenerate or not 0 < law.eta + k < law.size:
        raise InfeasibleError('eta + k out of range', {'eta': law.eta, 'k': k, 'size': law.size})
    i = int(law.population.index_of([a])[0])
    lam = tilt_lambda(law.population, law.eta + k) if resolve_lambda else law.lambda_star
    p, normalized = _complement_coefficients(law, i, lam, s)
    p_a = float(p[i])
    nu = law.eta + k - (float(np.sum(p)) - p_a)

    def m0(offset: float) -> float:
        return _expansion_value(normalized, offset, s).real

    n0 = m0(nu) - p_a * (m0(nu) - m0(nu - 1))
    series = sum((-1) ** l * (n0 - 1) ** l for l in range(s // 2 + 1))
    return p_a * m0(nu - 1) * series


def inclusion_step_exact(law: RejectiveLaw, a: Hashable, k: int = 0) -> float:
    """P_{E,eta+k}(A) - P_{E,eta+k-1}(A)"""
    upper, lower = law.eta + k, law.eta + k - 1
    if lower < 0 or upper > law.size:
        raise InfeasibleError('eta + k out of range', {'eta': law.eta, 'k': k, 'size': law.size})
    return inclusion_exact(shifted_law(law, upper), [a]) - inclusion_exact(shifted_law(law, lower), [a])


def inclusion_step_approx(law: RejectiveLaw, a: Hashable) -> float:
    """first difference in the sample size, p q I0_{F,2}, accurate to O(|E|^-2)"""
    if law.is_degenerate:
        raise InfeasibleError('degenerate law has no tilt')
    i = int(law.population.index_of([a])[0])
    p, normalized = _complement_coefficients(law, i, law.lambda_star, 2)
    return float(p[i] * (1.0 - p[i]) * normalized[2].real)


def _check_items(law: RejectiveLaw, h: Iterable[Hashable], limit: int) -> np.ndarray:
    idx = law.population.index_of(h)
    if len(idx) > limit:
        raise ValidationError(f'at most {limit} items allowed', {'size': len(idx)})
    return idx


def corr_exact(law: RejectiveLaw, h: Iterable[Hashable]) -> float:
    """E prod_{A in H} (I_A - p_A) by inclusion-exclusion over the subsets of H"""
    idx = _check_items(law, h, MAX_JOINT)
    m = len(idx)
    if m == 0:
        return 1.0
    p = [_joint(law, idx[i:i + 1]) for i in range(m)]
    if law.is_degenerate:
        joints = {mask: _joint(law, idx[[i for i in range(m) if mask >> i & 1]]) for mask in range(1 << m)}
    else:
        scaled = law.scaled_weights
        base = SymmetricPolyTable(*symmetric.accumulate(np.delete(scaled, idx), law.eta), law.table.log_scale)
        joints = dict()
        for mask in range(1 << m):
            inside = [i for i in range(m) if mask >> i & 1]
            if len(inside) > law.eta:
                joints[mask] = 0.0
                continue
            outside = [i for i in range(m) if not mask >> i & 1]
            rest = symmetric.extend_table(base, scaled[idx[outside]])
            joints[mask] = float(np.prod(scaled[idx[inside]])) * \
                rest.scaled_ratio(law.eta - len(inside), law.table, law.eta)
    total = 0.0
    for mask in range(1 << m):
        term = joints[mask]
        for i in range(m):
            if not mask >> i & 1:
                term *= -p[i]
        total += term
    return total


def _conditional_inclusion(law: RejectiveLaw, u: FrozenSet[int], v: FrozenSet[int], a: int) -> float:
    eta = law.eta - len(u)
    remaining = law.size - len(u) - len(v)
    if eta == 0:
        return 0.0
    if eta == remaining:
        return 1.0
    keep = np.array([i for i in range(law.size) if i not in u and i not in v and i != a], dtype=int)
    scaled = law.scaled_weights
    sub = SymmetricPolyTable(*symmetric.accumulate(scaled[keep], eta), law.table.log_scale)
    full = symmetric.extend_table(sub, [scaled[a]])
    return float(scaled[a]) * sub.scaled_ratio(eta - 1, full, eta)


def corr_recursion(law: RejectiveLaw, h: Iterable[Hashable]) -> float:
    """Corr(H) by peeling one item at a time:

    E^{u,v}((I_A - p_A) V) = (p^{u,v}_A - p_A) E^{u,v} V + p^{u,v}_A q^{u,v}_A (E^{u+A,v} V - E^{u,v+A} V)

    where p_A is the unconditional inclusion and p^{u,v}_A the inclusion under the law
    conditioned on u inside and v outside the sample.
    """
    order = [int(i) for i in _check_items(law, h, MAX_RECURSION)]
    if len(order) == 0:
        return 1.0
    top = {a: _joint(law, np.array([a])) for a in order}
    inclusions: Dict[tuple, float] = dict()
    expectations: Dict[tuple, float] = dict()

    def inclusion(u: FrozenSet[int], v: FrozenSet[int], a: int) -> float:
        key = (u, v, a)
        if key not in inclusions:
            inclusions[key] = _conditional_inclusion(law, u, v, a)
        return inclusions[key]

    def expect(u: FrozenSet[int], v: FrozenSet[int], depth: int) -> float:
        if depth == len(order):
            return 1.0
        key = (u, v, depth)
        if key in expectations:
            return expectations[key]
        a = order[depth]
        pc = inclusion(u, v, a)
        value = (pc - top[a]) * expect(u, v, depth + 1)
        spread = pc * (1.0 - pc)
        if spread > 0:
            value += spread * (expect(u | {a}, v, depth + 1) - expect(u, v | {a}, depth + 1))
        expectations[key] = value
        return value

    return expect(frozenset(), frozenset(), 0)


def pair_cov_approx(law: RejectiveLaw, a: Hashable, b: Hashable) -> float:
    if a == b:
        raise ValidationError('pair covariance needs two distinct items', {'id': str(a)})
    if law.is_degenerate:
        raise InfeasibleError('degenerate law has no tilt')
    i, j = (int(law.population.index_of([x])[0]) for x in (a, b))
    p, q = law.p_lambda, law.q_lambda
    return float(-p[i] * q[i] * p[j] * q[j] / law.v2_lambda)


def _falling(n: int, j: int) -> int:
    result = 1
    for i in range(j):
        result *= n - i
    return result


def srs_corr_closed_form(size: int, eta: int, k: int) -> float:
    """Corr(H), |H| = k, under simple random sampling of eta from size; exact rational arithmetic"""
    if not 0 < eta < size or k < 0 or k > min(eta, size - eta, MAX_JOINT):
        raise InfeasibleError('k must satisfy k <= min(eta, size - eta, 12)', {'size': size, 'eta': eta, 'k': k})
    f = Fraction(eta, size)
    total = Fraction(0)
    for j in range(k + 1):
        total += int(comb(k, j, exact=True)) * Fraction(_falling(eta, j), _falling(size, j)) * (-f) ** (k - j)
    return float(total)


def srs_corr_limit(k: int, f: float) -> float:
    """limit of |E|^{(k + k mod 2)/2} Corr(H) under simple random sampling with eta/|E| -> f"""
    if not 2 <= k <= 10:
        raise ValidationError('limit constants are available for 2 <= k <= 10', {'k': k})
    if not 0 < f < 1:
        raise ValidationError('f must lie in (0,1)', {'f': f})
    g = f * (f - 1)
    if k % 2 == 0:
        return normal_moment(k) * g ** (k // 2)
    return (k - 1) / 3.0 * normal_moment(k + 1) * g ** ((k - 1) // 2) * (2 * f - 1)


def _tail_table(p: np.ndarray, eta: int) -> np.ndarray:
    """tail[i, r] = P(sum of indicators i..n-1 equals r), r = 0..eta"""
    n = len(p)
    tail = np.zeros((n + 1, eta + 1))
    tail[n, 0] = 1.0
    for i in range(n - 1, -1, -1):
        tail[i] = (1.0 - p[i]) * tail[i + 1]
        tail[i, 1:] += p[i] * tail[i + 1, :-1]
    return tail


def _sequential(law: RejectiveLaw, rng: np.random.Generator, draws: int, lam: float) -> np.ndarray:
    p = _tilt_probabilities(law.population.weights, lam)
    tail = _tail_table(p, law.eta)
    need = np.full(draws, law.eta, dtype=int)
    out = np.zeros((draws, law.size), dtype=bool)
    for i in range(law.size):
        num = np.where(need > 0, p[i] * tail[i + 1][np.maximum(need - 1, 0)], 0.0)
        den = tail[i][need]
        prob = np.zeros(draws)
        np.divide(num, den, out=prob, where=den > 0)
        take = rng.random(draws) < prob
        out[:, i] = take
        need -= take
    return out


def rejection_acceptance(law: RejectiveLaw) -> float:
    """probability that eta draws with replacement, proportional to x, are distinct"""
    log_total = math.log(float(np.sum(law.population.weights)))
    return math.exp(math.lgamma(law.eta + 1) + law.table.log_value(law.eta) - law.eta * log_total)


def _rejection(law: RejectiveLaw, rng: np.random.Generator, draws: int) -> np.ndarray:
    acceptance = rejection_acceptance(law)
    if acceptance <= 0 or 1.0 / acceptance > REJECTION_GUARD:
        raise SamplerGuardError('rejection sampler would need too many trials',
                                {'expected_trials': (1.0 / acceptance) if acceptance > 0 else math.inf})
    probs = law.population.weights / np.sum(law.population.weights)
    out = np.zeros((draws, law.size), dtype=bool)
    filled = 0
    batch = int(min(max(1024, math.ceil(1.2 * draws / acceptance)), 4_000_000 // max(law.eta, 1) + 1))
    while filled < draws:
        picks = np.sort(rng.choice(law.size, size=(batch, law.eta), p=probs), axis=1)
        distinct = np.all(np.diff(picks, axis=1) > 0, axis=1)
        accepted = picks[distinct][:draws - filled]
        rows = np.arange(filled, filled + len(accepted))
        out[rows[:, None], accepted] = True
        filled += len(accepted)
    return out


def sample_many(law: RejectiveLaw, rng_seed: int, method: str = 'sequential', draws: int = 1,
                lam: Optional[float] = None) -> np.ndarray:
    """boolean matrix (draws x |E|) of independent samples from P_{E,eta}"""
    if method not in ('sequential', 'rejection'):
        raise ValidationError(f'unknown sampling method "{method}"', {'method': method})
    if draws < 1:
        raise ValidationError('draws must be positive', {'draws': draws})
    rng = np.random.default_rng(rng_seed)
    if law.is_degenerate:
        return np.full((draws, law.size), law.eta == law.size)
    if method == 'sequential':
        return _sequential(law, rng, draws, law.lambda_star if lam is None else lam)
    if 2 * law.eta > law.size:
        return ~_rejection(complement_law(law), rng, draws)
    return _rejection(law, rng, draws)


def sample(law: RejectiveLaw, rng_seed: int, method: str = 'sequential') -> FrozenSet:
    row = sample_many(law, rng_seed, method, 1)[0]
    return frozenset(label for label, taken in zip(law.population.ids, row) if taken)


def _representatives(pop: WeightedPopulation) -> List[int]:
    """first index of each distinct weight; items of equal weight are exchangeable"""
    seen = dict()
    for i, w in enumerate(pop.weights):
        seen.setdefault(float(w), i)
    return sorted(seen.values())


def _study_law(pattern: Sequence[float], size: int, f: float) -> RejectiveLaw:
    eta = min(max(int(round(f * size)), 1), size - 1)
    return RejectiveLaw(WeightedPopulation.from_pattern(pattern, size), eta)


def decay_rate_study(pattern: Sequence[float], sizes: Sequence[int], k: int, f: float,
                     seed: int = 0, subsets: int = 50) -> ErrorTable:
    """max |Corr(H)| over fixed k-subsets H for growing cycled-weight populations

    H ranges over the first `subsets` k-subsets of a seed-shuffled order of the first SUBSET_WINDOW ids.
    Cycled ids keep their weights as the population grows, so every size compares the same sets.
    """
    if k < 1 or k > 6:
        raise ValidationError('k must lie in 1..6', {'k': k})
    if any(w <= 0 for w in pattern):
        raise ValidationError('pattern weights must be positive')
    table = ErrorTable()
    for size in sizes:
        law = _study_law(pattern, size, f)
        order = np.random.default_rng(seed).permutation(min(size, SUBSET_WINDOW))
        ids = law.population.ids
        worst = 0.0
        for chosen in islice(combinations(order.tolist(), k), subsets):
            worst = max(worst, abs(corr_exact(law, [ids[i] for i in chosen])))
        table.add(size, worst)
    return table.fit()


def inclusion_rate_study(pattern: Sequence[float], sizes: Sequence[int], f: float, s: int,
                         k: int = 0, resolve_lambda: bool = False) -> ErrorTable:
    """max over items of |P_{E,eta+k}(A) - inclusion_approx|"""
    table = ErrorTable()
    for size in sizes:
        law = _study_law(pattern, size, f)
        target = shifted_law(law, law.eta + k)
        worst = 0.0
        for i in _representatives(law.population):
            a = law.population.ids[i]
            exact = inclusion_exact(target, [a])
            worst = max(worst, abs(exact - inclusion_approx(law, a, k, s, resolve_lambda)))
        table.add(size, worst)
    return table.fit()


def pair_cov_study(pattern: Sequence[float], sizes: Sequence[int], f: float) -> ErrorTable:
    """max over item pairs of |E| * |Cov(I_A, I_B) - pair_cov_approx|"""
    table = ErrorTable()
    for size in sizes:
        law = _study_law(pattern, size, f)
        pairs = _representative_pairs(law.population)
        worst = 0.0
        for a, b in pairs:
            gap = abs(corr_exact(law, [a, b]) - pair_cov_approx(law, a, b))
            worst = max(worst, size * gap)
        table.add(size, worst)
    return table.fit()


def _representative_pairs(pop: WeightedPopulation) -> List[Tuple]:
    by_weight: Dict[float, List[int]] = dict()
    for i, w in enumerate(pop.weights):
        by_weight.setdefault(float(w), []).append(i)
    classes = sorted(by_weight.values(), key=lambda members: members[0])
    pairs = list()
    for x in range(len(classes)):
        for y in range(x, len(classes)):
            if x == y:
                if len(classes[x]) > 1:
                    pairs.append((pop.ids[classes[x][0]], pop.ids[classes[x][1]]))
            else:
                pairs.append((pop.ids[classes[x][0]], pop.ids[classes[y][0]]))
    return pairs
