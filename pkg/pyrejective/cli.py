import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import crayons
import numpy as np

import pyrejective
from pyrejective import __version__
from pyrejective.config import SimulationConfig
from pyrejective.errors import DataFileError, PyRejectiveError, ValidationError
from pyrejective.harness import run_simulation
from pyrejective.logistic import CaseControlSet, MODELS, clogit_fit, make_model, ulogit_fit
from pyrejective.poisson_binomial import BernoulliEnsemble, expansion_error_study, fourier_coefficients, \
    inversion_probability, lattice_offsets, lclt_expansion, pmf_exact
from pyrejective.rejective import RejectiveLaw, WeightedPopulation, corr_exact, corr_recursion, \
    decay_rate_study, inclusion_approx, inclusion_exact, inclusion_rate_study, pair_cov_study, sample_many
from pyrejective.utils import dump_stats, file_digest, floats_from_file, format_number, parse_float_list, \
    parse_int_list

MAX_SEED = 2 ** 64


@dataclass
class RunManifest:
    """What is needed to rerun a command and get the same bytes back"""

    subcommand: str
    config: Dict
    seed: Optional[int] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    wall_time: float = 0.0
    version: str = __version__

    def add_input(self, path: str):
        self.inputs[os.path.normpath(path)] = file_digest(path)

    def to_dict(self, timed: bool = True) -> Dict:
        """timed=False leaves out wall_time, for manifests embedded in reproducible output"""
        settings = {'version': self.version, 'subcommand': self.subcommand, 'config': self.config,
                    'seed': self.seed, 'inputs': self.inputs}
        if timed:
            settings['wall_time'] = self.wall_time
        return settings

    def write(self, path: str):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)
            f.write('\n')


def _read_rows(path: str) -> List[tuple]:
    """(line number, cells) for every non-blank line"""
    if not os.path.exists(path):
        raise DataFileError(f'File {path} not found', {'path': str(path)}, code='FILE_NOT_FOUND')
    with open(path, 'r', newline='') as f:
        return [(lineno, [cell.strip() for cell in row]) for lineno, row in enumerate(csv.reader(f), start=1)
                if len(row) > 0 and any(cell.strip() for cell in row)]


def load_case_control_csv(path: str) -> CaseControlSet:
    rows = _read_rows(path)
    if len(rows) == 0:
        raise DataFileError(f'{path} is empty', {'path': path})
    _, header = rows[0]
    if len(header) < 3 or header[0].lower() != 'id' or header[1].lower() != 'is_case':
        raise DataFileError('header must read id,is_case,z1,...,zp', {'path': path, 'line': 1})
    ids, z, is_case = list(), list(), list()
    seen = dict()
    for lineno, cells in rows[1:]:
        if len(cells) != len(header):
            raise DataFileError(f'line {lineno}: expected {len(header)} fields, found {len(cells)}',
                                {'path': path, 'line': lineno})
        if cells[1] not in ('0', '1'):
            raise DataFileError(f'line {lineno}: is_case must be 0 or 1, found "{cells[1]}"',
                                {'path': path, 'line': lineno})
        if cells[0] in seen:
            raise DataFileError(f'line {lineno}: duplicate id "{cells[0]}" (first on line {seen[cells[0]]})',
                                {'path': path, 'line': lineno})
        try:
            values = [float(v) for v in cells[2:]]
        except ValueError:
            raise DataFileError(f'line {lineno}: covariates must be numeric', {'path': path, 'line': lineno})
        seen[cells[0]] = lineno
        ids.append(cells[0])
        is_case.append(cells[1] == '1')
        z.append(values)
    if len(ids) == 0:
        raise DataFileError(f'{path} holds no data rows', {'path': path})
    return CaseControlSet(ids, np.array(z, dtype=float), is_case, {'path': path})


def write_case_control_csv(data: CaseControlSet, path: str):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['id', 'is_case'] + [f'z{k + 1}' for k in range(data.dimension)])
        for label, case, row in zip(data.ids, data.is_case, data.z):
            writer.writerow([str(label), format_number(bool(case))] + [format_number(v) for v in row])


def load_population_csv(path: str) -> WeightedPopulation:
    """two-column id,weight file; a header line is optional"""
    rows = _read_rows(path)
    ids, weights = list(), list()
    for lineno, cells in rows:
        if len(cells) != 2:
            raise DataFileError(f'line {lineno}: expected id,weight', {'path': path, 'line': lineno})
        try:
            weight = float(cells[1])
        except ValueError:
            if lineno == rows[0][0]:
                continue
            raise DataFileError(f'line {lineno}: weight must be numeric', {'path': path, 'line': lineno})
        ids.append(cells[0])
        weights.append(weight)
    if len(ids) != len(set(ids)):
        raise DataFileError('duplicate ids in population file', {'path': path})
    return WeightedPopulation(ids, weights)


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f'seed must be an integer, got "{text}"')
    if not 0 <= value < MAX_SEED:
        raise argparse.ArgumentTypeError('seed must be an unsigned 64-bit integer')
    return value


def _output_args(parser: argparse.ArgumentParser):
    parser.add_argument('--out', help='write CSV to this path and the manifest next to it')
    parser.add_argument('--manifest', help='write the run manifest here when printing to stdout')


def _ensemble_args(parser: argparse.ArgumentParser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument('--probs', help='comma separated success probabilities')
    group.add_argument('--probs-file', help='one-column CSV of success probabilities')
    group.add_argument('--pattern', help='probabilities cycled up to --n')
    parser.add_argument('--n', type=int, help='ensemble size for --pattern')


def _population_args(parser: argparse.ArgumentParser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument('--weights', help='comma separated weights; ids are 1..n')
    group.add_argument('--population', help='two-column CSV of id,weight')
    group.add_argument('--pattern', help='weights cycled up to --size')
    parser.add_argument('--size', type=int, help='population size for --pattern')
    parser.add_argument('--eta', type=int, required=True, help='sample size')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pyrejective',
                                     description='Poisson-Binomial expansions, rejective sampling and '
                                                 'case-control logistic estimators')
    parser.add_argument('--version', action='version', version=f'pyrejective (ver {__version__})')
    parser.add_argument('-v', '--verbose', action='store_true', help='diagnostics on stderr')
    parser.add_argument('--no-color', action='store_true', help='plain console output')
    families = parser.add_subparsers(dest='family', required=True)

    pb = families.add_parser('pb', help='Poisson-Binomial distribution').add_subparsers(dest='command', required=True)
    cmd = pb.add_parser('pmf', help='exact probabilities P(X = k)')
    _ensemble_args(cmd)
    _output_args(cmd)
    cmd = pb.add_parser('lclt', help='local expansion at lattice offsets')
    _ensemble_args(cmd)
    cmd.add_argument('--s', type=int, default=0, help='expansion order (even)')
    cmd.add_argument('--kappa', type=float, default=3.0, help='largest |nu|')
    _output_args(cmd)
    cmd = pb.add_parser('inversion', help='Fourier inversion of lattice probabilities')
    _ensemble_args(cmd)
    cmd.add_argument('--kappa', type=float, default=3.0, help='largest |nu|')
    _output_args(cmd)
    cmd = pb.add_parser('study', help='expansion error against n, with fitted slope')
    cmd.add_argument('--pattern', required=True)
    cmd.add_argument('--sizes', required=True, help='comma separated increasing sizes')
    cmd.add_argument('--s', type=int, default=0)
    cmd.add_argument('--kappa', type=float, default=3.0)
    _output_args(cmd)

    rej = families.add_parser('rej', help='rejective sampling').add_subparsers(dest='command', required=True)
    cmd = rej.add_parser('inclusion', help='inclusion probabilities of every item')
    _population_args(cmd)
    cmd.add_argument('--s', type=int, help='also print the order-s expansion')
    _output_args(cmd)
    cmd = rej.add_parser('corr', help='high-order correlation of an item set')
    _population_args(cmd)
    cmd.add_argument('--items', required=True, help='comma separated ids')
    cmd.add_argument('--method', choices=('exact', 'recursion', 'both'), default='exact')
    _output_args(cmd)
    cmd = rej.add_parser('sample', help='draw samples')
    _population_args(cmd)
    cmd.add_argument('--method', choices=('sequential', 'rejection'), default='sequential')
    cmd.add_argument('--draws', type=int, default=1)
    cmd.add_argument('--seed', type=_seed, required=True)
    _output_args(cmd)
    cmd = rej.add_parser('study', help='rate studies on cycled weights')
    cmd.add_argument('--kind', choices=('decay', 'inclusion', 'pair'), default='decay')
    cmd.add_argument('--pattern', required=True)
    cmd.add_argument('--sizes', required=True)
    cmd.add_argument('--f', type=float, default=0.5)
    cmd.add_argument('--k', type=int, default=2, help='set size (decay) or sample size shift (inclusion)')
    cmd.add_argument('--s', type=int, default=0)
    cmd.add_argument('--seed', type=_seed, default=0)
    _output_args(cmd)

    fit = families.add_parser('fit', help='logistic odds ratio estimators').add_subparsers(dest='command',
                                                                                          required=True)
    for name in ('clogit', 'ulogit'):
        cmd = fit.add_parser(name, help=f'{name} maximum likelihood')
        cmd.add_argument('--data', required=True, help='CSV with id,is_case,z1..zp')
        cmd.add_argument('--model', choices=sorted(MODELS), default='exponential')
        cmd.add_argument('--out', help='write JSON here instead of stdout, the timed manifest next to it')

    sim = families.add_parser('sim', help='Monte Carlo harness').add_subparsers(dest='command', required=True)
    cmd = sim.add_parser('run', help='replicate a case-control design')
    cmd.add_argument('--config', required=True, help='YAML simulation config')
    cmd.add_argument('--seed', type=_seed, required=True)
    cmd.add_argument('--out', required=True, help='output directory')
    return parser


def _ensemble(args, manifest: RunManifest) -> BernoulliEnsemble:
    if args.probs is not None:
        return BernoulliEnsemble(parse_float_list(args.probs, 'probs'))
    if args.probs_file is not None:
        manifest.add_input(args.probs_file)
        return BernoulliEnsemble(floats_from_file(args.probs_file))
    if args.n is None:
        raise ValidationError('--pattern needs --n')
    return BernoulliEnsemble.from_pattern(parse_float_list(args.pattern, 'pattern'), args.n)


def _law(args, manifest: RunManifest) -> RejectiveLaw:
    if args.weights is not None:
        population = WeightedPopulation.from_weights(parse_float_list(args.weights, 'weights'))
    elif args.population is not None:
        manifest.add_input(args.population)
        population = load_population_csv(args.population)
    else:
        if args.size is None:
            raise ValidationError('--pattern needs --size')
        population = WeightedPopulation.from_pattern(parse_float_list(args.pattern, 'pattern'), args.size)
    return RejectiveLaw(population, args.eta)


def _pb(args, manifest: RunManifest) -> List[List]:
    if args.command == 'study':
        table = expansion_error_study(parse_float_list(args.pattern, 'pattern'), parse_int_list(args.sizes, 'sizes'),
                                      args.s, args.kappa)
        return [['size', 'value', 'slope']] + [list(row) for row in table.to_rows()]
    ensemble = _ensemble(args, manifest)
    if args.command == 'pmf':
        return [['k', 'prob']] + [[k, p] for k, p in enumerate(pmf_exact(ensemble))]
    pmf = pmf_exact(ensemble)
    offsets = lattice_offsets(ensemble, args.kappa)
    if args.command == 'inversion':
        return [['k', 'nu', 'inversion', 'exact']] + \
            [[k, nu, inversion_probability(ensemble, nu), pmf[k]] for k, nu in offsets]
    coefficients = fourier_coefficients(ensemble, args.s)
    rows = [['k', 'nu', 'approx', 'exact', 'condition_ok']]
    for k, nu in offsets:
        expansion = lclt_expansion(ensemble, nu, args.s, coefficients)
        rows.append([k, nu, expansion.value, pmf[k], expansion.condition_ok])
    return rows


def _rej(args, manifest: RunManifest) -> List[List]:
    if args.command == 'study':
        pattern = parse_float_list(args.pattern, 'pattern')
        sizes = parse_int_list(args.sizes, 'sizes')
        if args.kind == 'decay':
            table = decay_rate_study(pattern, sizes, args.k, args.f, seed=args.seed)
        elif args.kind == 'inclusion':
            table = inclusion_rate_study(pattern, sizes, args.f, args.s, k=args.k)
        else:
            table = pair_cov_study(pattern, sizes, args.f)
        return [['size', 'value', 'slope']] + [list(row) for row in table.to_rows()]
    law = _law(args, manifest)
    ids = law.population.ids
    if args.command == 'inclusion':
        if args.s is None:
            return [['id', 'inclusion']] + [[a, inclusion_exact(law, [a])] for a in ids]
        return [['id', 'inclusion', 'approx']] + \
            [[a, inclusion_exact(law, [a]), inclusion_approx(law, a, s=args.s)] for a in ids]
    if args.command == 'corr':
        items = [item.strip() for item in args.items.split(',') if item.strip() != '']
        rows = [['method', 'value']]
        if args.method in ('exact', 'both'):
            rows.append(['exact', corr_exact(law, items)])
        if args.method in ('recursion', 'both'):
            rows.append(['recursion', corr_recursion(law, items)])
        return rows
    draws = sample_many(law, args.seed, args.method, args.draws)
    rows = [['draw', 'id']]
    for d, row in enumerate(draws):
        rows.extend([d, label] for label, taken in zip(ids, row) if taken)
    return rows


def _emit(rows: List[List], args, manifest: RunManifest):
    formatted = [[cell if isinstance(cell, str) else format_number(cell) for cell in row] for row in rows]
    if args.out is not None:
        with open(args.out, 'w', newline='') as f:
            csv.writer(f, lineterminator='\n').writerows(formatted)
        manifest.write(args.out + '.manifest.json')
    else:
        csv.writer(sys.stdout, lineterminator='\n').writerows(formatted)
        sys.stdout.flush()
        if args.manifest is not None:
            manifest.write(args.manifest)


def _fit(args, manifest: RunManifest, started: float):
    data = load_case_control_csv(args.data)
    manifest.add_input(args.data)
    model = make_model(args.model, data.dimension)
    result = clogit_fit(data, model) if args.command == 'clogit' else ulogit_fit(data, model)
    payload = result.to_dict()
    payload.update({'eta': data.eta, 'size': data.size, 'dimension': data.dimension, 'model': args.model})
    payload['manifest'] = manifest.to_dict(timed=False)
    text = json.dumps(payload, sort_keys=True, indent=2)
    manifest.wall_time = time.monotonic() - started
    if args.out is not None:
        with open(args.out, 'w') as f:
            f.write(text + '\n')
        manifest.write(args.out + '.manifest.json')
    else:
        print(text)


def _sim(args, manifest: RunManifest, started: float):
    config = SimulationConfig(args.config)
    manifest.add_input(args.config)
    manifest.config = config.as_dict()
    report = run_simulation(config, args.seed)
    paths = report.write(args.out)
    manifest.wall_time = time.monotonic() - started
    manifest.write(os.path.join(args.out, 'manifest.json'))
    stats = [('replications', report.replications), ('completed', report.dispositions['completed']),
             ('skipped', report.dispositions['skipped'])]
    for name, summary in report.summaries['fitters'].items():
        for entry in summary['coefficients']:
            for key in ('bias', 'variance_ratio', 'coverage'):
                if key in entry:
                    stats.append((f'{name} beta{entry["coefficient"] + 1} {key}', entry[key]))
    dump_stats(stats)
    print(crayons.green(f'Finished, report in {", ".join(paths)}'), file=sys.stderr)


def _manifest_config(args) -> Dict:
    skip = ('family', 'command', 'verbose', 'no_color', 'out', 'manifest', 'seed')
    return {key: value for key, value in sorted(vars(args).items()) if key not in skip}


def install_sigint_handler():
    import signal

    def signal_handler(signal, frame):
        print('Process terminated', file=sys.stderr)
        sys.exit(130)

    signal.signal(signal.SIGINT, signal_handler)


def dispatch(argv: Sequence[str]) -> int:
    """run one subcommand; 0 on success, 1 on a domain error, 2 on a usage error"""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as ex:
        return 0 if ex.code in (0, None) else 2

    pyrejective.verbose = args.verbose
    pyrejective.colorize = not args.no_color and sys.stderr.isatty()
    if pyrejective.colorize:
        crayons.enable()
    else:
        crayons.disable()

    manifest = RunManifest(subcommand=f'{args.family} {args.command}', config=_manifest_config(args),
                           seed=getattr(args, 'seed', None))
    started = time.monotonic()
    try:
        if args.family in ('pb', 'rej'):
            rows = _pb(args, manifest) if args.family == 'pb' else _rej(args, manifest)
            manifest.wall_time = time.monotonic() - started
            _emit(rows, args, manifest)
        else:
            if args.family == 'fit':
                _fit(args, manifest, started)
            else:
                _sim(args, manifest, started)
    except OSError as ex:
        return _report(DataFileError(f'cannot access {ex.filename}: {ex.strerror}',
                                     {'path': str(ex.filename), 'errno': ex.errno},
                                     code='FILE_NOT_FOUND' if isinstance(ex, FileNotFoundError) else None))
    except PyRejectiveError as ex:
        return _report(ex)
    return 0


def _report(ex: PyRejectiveError) -> int:
    print(ex.to_json(), file=sys.stderr)
    if pyrejective.verbose:
        print(crayons.red(ex.message), file=sys.stderr)
    return 1


def start():
    install_sigint_handler()
    sys.exit(dispatch(sys.argv[1:]))


def main():
    start()


if __name__ == '__main__':
    start()
