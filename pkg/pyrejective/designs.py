import csv
import math
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from pyrejective.errors import ConfigError, DataFileError, ReplicationSKIP, ValidationError
from pyrejective.logistic import CaseControlSet, lambda_for_prevalence, make_model
from pyrejective.poisson_binomial import ErrorTable
from pyrejective.utils import log, warn

if TYPE_CHECKING:
    from pyrejective.config import StudyBaseConfig

FAMILIES = ('CC_SRS', 'CC_BT', 'CB_SRS', 'CB_BT')
BASES = ('observed', 'expected')


@dataclass(frozen=True)
class DesignSpec:
    """One row of the control-sampling table: who is sampled, how, and how many"""

    family: str
    count_basis: str
    f: float
    p_hint: Optional[float] = None

    ROWS = tuple((family, basis) for family in FAMILIES for basis in BASES)

    def __post_init__(self):
        if (self.family, self.count_basis) not in self.ROWS:
            raise ConfigError(f'unknown design "{self.family}/{self.count_basis}"',
                              {'known': [f'{a}/{b}' for a, b in self.ROWS]})
        if not 0 < self.f < 1:
            raise ConfigError('design f must lie in (0,1)', {'f': self.f})
        if self.count_basis == 'expected':
            if self.p_hint is None or not 0 < self.p_hint < 1:
                raise ConfigError('expected-count designs need p_hint in (0,1)', {'p_hint': self.p_hint})

    @classmethod
    def parse(cls, text: str, f: float, p_hint: Optional[float] = None) -> 'DesignSpec':
        """parse "CC_SRS/observed" style names"""
        family, _, basis = text.partition('/')
        return cls(family.strip().upper(), (basis.strip() or 'observed').lower(), float(f), p_hint)

    @classmethod
    def from_dict(cls, settings: Dict) -> 'DesignSpec':
        if not isinstance(settings, dict):
            raise ConfigError('design section must be a mapping')
        if 'f' not in settings:
            raise ConfigError('design.f is required')
        p_hint = settings.get('p_hint', None)
        return cls(str(settings.get('family', 'CC_SRS')).upper(), str(settings.get('count_basis', 'observed')).lower(),
                   float(settings['f']), None if p_hint is None else float(p_hint))

    @property
    def name(self) -> str:
        return f'{self.family}/{self.count_basis}'

    @property
    def is_case_base(self) -> bool:
        return self.family.startswith('CB')

    @property
    def is_bernoulli(self) -> bool:
        return self.family.endswith('BT')

    @property
    def control_ratio(self) -> float:
        return (1.0 - self.f) / self.f

    def target(self, cases: int, n: int) -> float:
        """the table entry: a subject count for SRS rows, an inclusion probability for BT rows

        The count is not rounded and the probability not clamped; sample_controls does both.
        """
        if self.count_basis == 'observed':
            odds = cases / (n - cases)
        else:
            odds = self.p_hint / (1.0 - self.p_hint)
        if self.is_bernoulli:
            return self.control_ratio * odds
        if self.is_case_base:
            return n * self.control_ratio * odds
        if self.count_basis == 'observed':
            return cases * self.control_ratio
        return n * self.p_hint * self.control_ratio

    def to_dict(self) -> Dict:
        return {'family': self.family, 'count_basis': self.count_basis, 'f': self.f, 'p_hint': self.p_hint}


class StudyBase:
    """N subjects with covariates and independent disease indicators drawn under the proportional odds model"""

    def __init__(self, z: np.ndarray, is_case: np.ndarray, lambda0: float, beta0: np.ndarray,
                 regimes: Optional[np.ndarray] = None, model: str = 'exponential'):
        self.z = z
        self.is_case = is_case
        self.lambda0 = lambda0
        self.beta0 = beta0
        self.regimes = regimes
        self.model = model

    @property
    def N(self) -> int:
        return len(self.is_case)

    @property
    def ids(self) -> List[str]:
        return [str(i + 1) for i in range(self.N)]

    @property
    def cases(self) -> int:
        return int(np.sum(self.is_case))

    @property
    def case_fraction(self) -> float:
        return self.cases / self.N

    def disease_probabilities(self) -> np.ndarray:
        x, _, _ = make_model(self.model, len(self.beta0)).evaluate(self.z, self.beta0)
        return expit(math.log(self.lambda0) + np.log(x))

    def subset(self, member: np.ndarray, meta: Optional[Dict] = None) -> CaseControlSet:
        """case-control set of the flagged subjects, in study-base order"""
        idx = np.nonzero(member)[0]
        return CaseControlSet([str(i + 1) for i in idx], self.z[idx], self.is_case[idx], meta)

    def __repr__(self):
        return f'StudyBase(N={self.N}, cases={self.cases})'


def _vector(spec: Dict, key: str, dimension: int, default: float) -> np.ndarray:
    values = np.atleast_1d(np.asarray(spec.get(key, default), dtype=float))
    return np.broadcast_to(values, (dimension,)).copy() if len(values) == 1 else values


def load_covariate_file(path: str, dimension: int) -> np.ndarray:
    """CSV of covariate rows, one column per coefficient; a non-numeric first line is a header"""
    if path is None or not os.path.exists(path):
        raise DataFileError(f'Covariate file "{path}" not found', {'path': str(path)}, code='FILE_NOT_FOUND')
    rows = list()
    with open(path, 'r', newline='') as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if len(row) == 0 or all(cell.strip() == '' for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise DataFileError(f'line {lineno}: covariates must be numeric', {'path': path, 'line': lineno})
            if len(values) != dimension:
                raise DataFileError(f'line {lineno}: expected {dimension} covariates, found {len(values)}',
                                    {'path': path, 'line': lineno})
            rows.append(values)
    if len(rows) == 0:
        raise DataFileError(f'Covariate file "{path}" holds no rows', {'path': path})
    return np.array(rows, dtype=float)


def _draw(spec: Dict, n: int, dimension: int, rng: np.random.Generator) -> np.ndarray:
    kind = spec['generator']
    if kind == 'bernoulli':
        prob = _vector(spec, 'prob', dimension, 0.5)
        return (rng.random((n, dimension)) < prob[None, :]).astype(float)
    if kind == 'normal':
        mean = _vector(spec, 'mean', dimension, 0.0)
        sd = _vector(spec, 'sd', dimension, 1.0)
        return mean[None, :] + sd[None, :] * rng.standard_normal((n, dimension))
    raise ConfigError(f'generator "{kind}" cannot be drawn inside a mixture')


def regime_counts(fractions: Sequence[float], n: int) -> List[int]:
    """rounded regime sizes; the last regime takes what is left"""
    counts = [int(round(fr * n)) for fr in fractions[:-1]]
    counts.append(n - sum(counts))
    if counts[-1] < 0:
        raise ConfigError('regime fractions leave no room for the last regime', {'counts': counts})
    return counts


def draw_covariates(config: 'StudyBaseConfig', n: Optional[int], rng: np.random.Generator) \
        -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """covariate matrix and, for drift mixtures, the regime label of each row"""
    spec = config.covariates
    dimension = config.dimension
    if spec['generator'] == 'file':
        z = load_covariate_file(config.covariate_path(), dimension)
        if n is not None and n > len(z):
            raise ConfigError('base.N exceeds the rows of the covariate file', {'N': n, 'rows': len(z)})
        return z[:n], None
    if spec['generator'] != 'drift':
        return _draw(spec, n, dimension, rng), None
    regimes = spec['regimes']
    counts = regime_counts([float(r['fraction']) for r in regimes], n)
    blocks = [_draw(regime, count, dimension, rng) for regime, count in zip(regimes, counts)]
    labels = np.repeat(np.arange(len(regimes)), counts)
    return np.vstack(blocks), labels


def generate_study_base(config: 'StudyBaseConfig', seed) -> StudyBase:
    """Draw covariates, then disease indicators with P(I_j = 1) = lambda0 x_j / (1 + lambda0 x_j).

    :param config:  the `base:` section of a simulation config
    :param seed:    integer or numpy SeedSequence; the base is a pure function of it
    """
    rng = np.random.default_rng(seed)
    z, labels = draw_covariates(config, config.N, rng)
    model = make_model(config.model, config.dimension)
    lambda0 = config.lambda0
    if lambda0 is None:
        lambda0 = lambda_for_prevalence(z, model, config.beta0, config.prevalence)
        log(f'lambda0 {lambda0:.6g} solved from prevalence {config.prevalence}')
    x, _, _ = model.evaluate(z, config.beta0)
    p = expit(math.log(lambda0) + np.log(x))
    is_case = rng.random(len(z)) < p
    return StudyBase(z, is_case, lambda0, config.beta0.copy(), labels, config.model)


def sample_controls(base: StudyBase, spec: DesignSpec, seed) -> CaseControlSet:
    """Form the case-control set E for one row of the design table.

    Cases always enter E. Case-base rows sample from the whole study base and E is the union of
    that sample with the cases. Counts are rounded half to even and clamped to what is available;
    probabilities are clamped to 1. Clamping is recorded in the returned set's meta.
    """
    cases = base.cases
    if cases == 0:
        raise ReplicationSKIP('no cases in study base')
    if cases == base.N:
        raise ReplicationSKIP('no non-cases in study base')
    rng = np.random.default_rng(seed)
    target = spec.target(cases, base.N)
    pool = np.arange(base.N) if spec.is_case_base else np.nonzero(~base.is_case)[0]
    clamped = False
    if spec.is_bernoulli:
        prob = target
        if prob > 1.0:
            prob, clamped = 1.0, True
        chosen = pool[rng.random(len(pool)) < prob]
        requested = prob
    else:
        count = int(round(target))
        if count > len(pool):
            count, clamped = len(pool), True
        chosen = np.sort(rng.choice(pool, size=count, replace=False)) if count > 0 else pool[:0]
        requested = count
    if clamped:
        warn(f'{spec.name}: control target {target:.6g} clamped')
    member = base.is_case.copy()
    member[chosen] = True
    if int(np.sum(member)) == cases:
        raise ReplicationSKIP('no controls sampled')
    meta = {'design': spec.name, 'control_target': float(target), 'requested': requested,
            'sampled': int(len(chosen)), 'clamped': clamped}
    return base.subset(member, meta)


def case_fraction_study(config: 'StudyBaseConfig', spec: DesignSpec, sizes: Sequence[int], reps: int,
                        seed: int) -> Tuple[ErrorTable, Dict[int, float]]:
    """Var(eta / |E|) per study-base size, with the fitted log-log slope, and the mean fraction per size"""
    if reps < 2:
        raise ValidationError('case fraction study needs at least two replications', {'reps': reps})
    table = ErrorTable()
    means = dict()
    for n in sizes:
        sized = config.with_size(n)
        fractions = list()
        for r in range(reps):
            base_seed, design_seed = np.random.SeedSequence([seed, n, r]).spawn(2)
            base = generate_study_base(sized, base_seed)
            try:
                data = sample_controls(base, spec, design_seed)
            except ReplicationSKIP:
                continue
            fractions.append(data.eta / data.size)
        if len(fractions) < 2:
            raise ValidationError('too many skipped replications', {'N': n, 'usable': len(fractions)})
        means[n] = float(np.mean(fractions))
        table.add(n, float(np.var(fractions, ddof=1)))
    return table.fit(), means
