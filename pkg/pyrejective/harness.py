import csv
import json
import math
import os
import sys
from collections import Counter
from dataclasses import dataclass, field
from queue import Queue, Empty
from threading import Thread, Lock
from typing import Dict, List, Optional

import crayons
import numpy as np
from scipy.stats import norm

import pyrejective
from pyrejective.config import SimulationConfig, StudyBaseConfig
from pyrejective.designs import DesignSpec, draw_covariates, generate_study_base, sample_controls
from pyrejective.errors import PyRejectiveError, ReplicationSKIP
from pyrejective.logistic import LimitFunctionals, asymptotic_variance, clogit_fit, lambda_for_prevalence, \
    make_model, ulogit_fit
from pyrejective.rejective import WeightedPopulation, tilt_lambda
from pyrejective.utils import format_number

WALD_Z = float(norm.ppf(0.975))
REFERENCE_STREAM = 2 ** 31 - 1


@dataclass
class FitOutcome:
    beta: Optional[List[float]] = None
    se: Optional[List[float]] = None
    alpha: Optional[float] = None
    converged: bool = False
    error: Optional[str] = None


@dataclass
class ReplicationRecord:
    index: int
    eta: Optional[int] = None
    size: Optional[int] = None
    cases_in_base: Optional[int] = None
    clamped: bool = False
    skipped: Optional[str] = None
    alpha_eta: Optional[float] = None
    fits: Dict[str, FitOutcome] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return 'skipped' if self.skipped is not None else 'completed'


def replication_seeds(seed: int, index: int):
    """independent (base, design) seed streams for replication `index`"""
    return np.random.SeedSequence([seed, index]).spawn(2)


def run_replication(base_config: StudyBaseConfig, design: DesignSpec, fitters: List[str], seed: int,
                    index: int) -> ReplicationRecord:
    record = ReplicationRecord(index)
    base_seed, design_seed = replication_seeds(seed, index)
    base = generate_study_base(base_config, base_seed)
    record.cases_in_base = base.cases
    try:
        data = sample_controls(base, design, design_seed)
    except ReplicationSKIP as ex:
        record.skipped = ex.reason
        return record
    record.eta, record.size = data.eta, data.size
    record.clamped = bool(data.meta.get('clamped', False))
    model = make_model(base_config.model, base_config.dimension)
    try:
        x, _, _ = model.evaluate(data.z, base.beta0)
        record.alpha_eta = math.log(tilt_lambda(WeightedPopulation.from_weights(x), data.eta))
    except PyRejectiveError:
        record.alpha_eta = None
    for name in fitters:
        outcome = FitOutcome()
        try:
            result = clogit_fit(data, model) if name == 'clogit' else ulogit_fit(data, model)
            outcome.beta = result.beta_hat.tolist()
            outcome.se = result.standard_errors.tolist()
            outcome.alpha = result.alpha_hat
            outcome.converged = result.converged
        except PyRejectiveError as ex:
            outcome.error = ex.code
        record.fits[name] = outcome
    return record


class ReplicationThread(Thread):
    """One worker draining the shared queue of replication indices"""

    def __init__(self, name: str, queue: Queue, pool: 'ReplicationPool'):
        super().__init__(name=name, group=None, daemon=True)
        self.queue = queue
        self._pool = pool

    @property
    def lock(self):
        return self._pool.lock

    def complete(self, record: ReplicationRecord):
        with self.lock:
            self._pool.records[record.index] = record

    def log(self, *args, **kwargs):
        self.lock.acquire()
        print(*args, file=sys.stderr, **kwargs)
        sys.stderr.flush()
        self.lock.release()

    def run(self):
        self.go()

    def go(self):
        while True:
            try:
                index = self.queue.get_nowait()
            except Empty:
                return
            try:
                pool = self._pool
                record = run_replication(pool.base_config, pool.design, pool.fitters, pool.seed, index)
                self.complete(record)
                if pyrejective.verbose:
                    if record.skipped is not None:
                        self.log(crayons.yellow(f'replication {index}: skipped ({record.skipped})'))
                    else:
                        self.log(crayons.green(f'replication {index}: eta {record.eta} of {record.size}'))
            except Exception as ex:
                # unexpected failures are recorded against the replication, never fatal to the batch
                record = ReplicationRecord(index, skipped=f'error: {ex}')
                self.complete(record)
                self.log(crayons.red(f'replication {index} failed: {ex}'))
            finally:
                self.queue.task_done()


class ReplicationPool:
    """Runs replications on `workers` threads and collects records keyed by index"""

    def __init__(self, base_config: StudyBaseConfig, design: DesignSpec, fitters: List[str], seed: int,
                 workers: int = 1):
        self.base_config = base_config
        self.design = design
        self.fitters = fitters
        self.seed = seed
        self.workers = workers
        self.lock = Lock()
        self.records: Dict[int, ReplicationRecord] = dict()

    def start(self, replications: int) -> List[ReplicationRecord]:
        queue = Queue()
        for index in range(replications):
            queue.put(index)
        threads = list()
        for i in range(min(self.workers, replications)):
            t = ReplicationThread(f'replication-{i}', queue, self)
            threads.append(t)
            t.start()
        queue.join()
        return [self.records[index] for index in sorted(self.records)]


def _summarize_fitter(name: str, records: List[ReplicationRecord], beta0: np.ndarray, n: int,
                      reference: Optional[LimitFunctionals]) -> Dict:
    used = [r.fits[name] for r in records if r.skipped is None and name in r.fits and r.fits[name].converged]
    errors = Counter(r.fits[name].error for r in records if name in r.fits and r.fits[name].error is not None)
    not_converged = sum(1 for r in records if name in r.fits and r.fits[name].error is None
                        and not r.fits[name].converged)
    summary = {'used': len(used), 'errors': dict(sorted(errors.items())), 'not_converged': not_converged,
               'coefficients': list()}
    inverse = reference.beta_covariance() if reference is not None else None
    for k in range(len(beta0)):
        estimates = np.array([o.beta[k] for o in used])
        ses = np.array([o.se[k] for o in used])
        entry = {'coefficient': k, 'truth': float(beta0[k])}
        if len(estimates) >= 2:
            sd = float(np.std(estimates, ddof=1))
            entry['mean'] = float(np.mean(estimates))
            entry['bias'] = entry['mean'] - float(beta0[k])
            entry['mcse'] = sd / math.sqrt(len(estimates))
            entry['scaled_variance'] = n * sd ** 2
            entry['coverage'] = float(np.mean(np.abs(estimates - beta0[k]) <= WALD_Z * ses))
            if inverse is not None:
                entry['reference_variance'] = float(inverse[k, k])
                entry['variance_ratio'] = entry['scaled_variance'] / entry['reference_variance']
        summary['coefficients'].append(entry)
    if name == 'ulogit':
        gaps = [r.fits[name].alpha - r.alpha_eta for r in records
                if r.skipped is None and name in r.fits and r.fits[name].converged and r.alpha_eta is not None]
        alpha = {'used': len(gaps)}
        if len(gaps) >= 2:
            alpha['mean_gap'] = float(np.mean(gaps))
            alpha['scaled_variance'] = n * float(np.var(gaps, ddof=1))
            if reference is not None:
                alpha['reference_variance'] = reference.alpha_variance()
                alpha['retrospective_variance'] = reference.retrospective_alpha_variance()
        summary['alpha'] = alpha
    return summary


def _agreement(records: List[ReplicationRecord], dimension: int) -> List[Dict]:
    rows = list()
    both = [r for r in records if r.skipped is None and all(
        name in r.fits and r.fits[name].converged for name in ('clogit', 'ulogit'))]
    for k in range(dimension):
        hat = np.array([r.fits['clogit'].beta[k] for r in both])
        tilde = np.array([r.fits['ulogit'].beta[k] for r in both])
        row = {'coefficient': k, 'used': len(both)}
        if len(both) >= 3 and np.std(hat) > 0 and np.std(tilde) > 0:
            row['correlation'] = float(np.corrcoef(hat, tilde)[0, 1])
            row['median_relative_gap'] = float(np.median(np.abs(hat - tilde)) / np.std(hat, ddof=1))
        rows.append(row)
    return rows


@dataclass
class SimulationReport:
    replications: int
    seed: int
    config: Dict
    records: List[ReplicationRecord]
    summaries: Dict
    reference: Optional[Dict]
    dispositions: Dict

    def to_dict(self) -> Dict:
        return {'replications': self.replications, 'seed': self.seed, 'config': self.config,
                'summaries': self.summaries, 'reference': self.reference, 'dispositions': self.dispositions}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=float)

    def replication_rows(self) -> List[List[str]]:
        fitters = self.config['fitters']
        dimension = len(self.config['base']['beta0'])
        header = ['index', 'status', 'eta', 'size', 'cases_in_base', 'clamped', 'alpha_eta']
        for name in fitters:
            header += [f'{name}_converged', f'{name}_error']
            header += [f'{name}_beta{k + 1}' for k in range(dimension)]
            header += [f'{name}_se{k + 1}' for k in range(dimension)]
            if name == 'ulogit':
                header.append('ulogit_alpha')
        rows = [header]
        for r in self.records:
            row = [str(r.index), r.status if r.skipped is None else f'skipped: {r.skipped}',
                   format_number(r.eta), format_number(r.size), format_number(r.cases_in_base),
                   format_number(r.clamped), format_number(r.alpha_eta)]
            for name in fitters:
                o = r.fits.get(name, FitOutcome())
                row += [format_number(o.converged), o.error or '']
                row += [format_number(v) for v in (o.beta or [None] * dimension)]
                row += [format_number(v) for v in (o.se or [None] * dimension)]
                if name == 'ulogit':
                    row.append(format_number(o.alpha))
            rows.append(row)
        return rows

    def coverage_rows(self) -> List[List[str]]:
        columns = ['mean', 'bias', 'mcse', 'scaled_variance', 'reference_variance', 'variance_ratio', 'coverage']
        rows = [['fitter', 'coefficient', 'used'] + columns]
        for name in sorted(self.summaries.get('fitters', dict())):
            summary = self.summaries['fitters'][name]
            for entry in summary['coefficients']:
                rows.append([name, str(entry['coefficient'] + 1), str(summary['used'])] +
                            [format_number(entry.get(c, None)) for c in columns])
        return rows

    def write(self, out_dir: str) -> List[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, name) for name in ('replications.csv', 'summary.json', 'coverage.csv')]
        with open(paths[0], 'w', newline='') as f:
            csv.writer(f, lineterminator='\n').writerows(self.replication_rows())
        with open(paths[1], 'w') as f:
            f.write(self.to_json())
            f.write('\n')
        with open(paths[2], 'w', newline='') as f:
            csv.writer(f, lineterminator='\n').writerows(self.coverage_rows())
        return paths


def resolve_base(config: SimulationConfig, seed: int):
    """fix lambda0 and the limit functionals on a large reference draw of the covariates

    :return: base config with lambda0 set, the limit functionals (None when degenerate) and N
    """
    base = config.base
    rng = np.random.default_rng(np.random.SeedSequence([seed, REFERENCE_STREAM]))
    size = None if base.covariates['generator'] == 'file' else max(base.N, config.reference_size)
    z_ref, _ = draw_covariates(base, size, rng)
    model = make_model(base.model, base.dimension)
    if base.lambda0 is None:
        base = base.with_lambda0(lambda_for_prevalence(z_ref, model, base.beta0, base.prevalence))
    reference = None
    try:
        reference = asymptotic_variance(z_ref, model, base.beta0, base.lambda0, config.design.f)
    except PyRejectiveError as ex:
        print(crayons.yellow(f'no asymptotic reference: {ex.message}'), file=sys.stderr)
    return base, reference, base.N if base.N is not None else len(z_ref)


def run_simulation(config: SimulationConfig, seed: int) -> SimulationReport:
    """R independent replications; replication r depends only on (seed, r)"""
    base, reference, n = resolve_base(config, seed)
    pool = ReplicationPool(base, config.design, config.fitters, seed, config.workers)
    records = pool.start(config.replications)

    skipped = Counter(r.skipped for r in records if r.skipped is not None)
    dispositions = {'completed': sum(1 for r in records if r.skipped is None),
                    'skipped': sum(skipped.values()), 'skip_reasons': dict(sorted(skipped.items())),
                    'clamped': sum(1 for r in records if r.clamped), 'count_rounding': 'nearest, ties to even'}
    summaries = {'fitters': {name: _summarize_fitter(name, records, base.beta0, n, reference)
                             for name in config.fitters}}
    if 'clogit' in config.fitters and 'ulogit' in config.fitters:
        summaries['agreement'] = _agreement(records, base.dimension)
    resolved = config.as_dict()
    resolved['base']['lambda0'] = base.lambda0
    return SimulationReport(replications=config.replications, seed=seed, config=resolved, records=records,
                            summaries=summaries, reference=None if reference is None else reference.to_dict(),
                            dispositions=dispositions)
