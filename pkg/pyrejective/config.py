import copy
import os
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from pyrejective.designs import DesignSpec
from pyrejective.errors import ConfigError, DataFileError
from pyrejective.logistic import MODELS

GENERATORS = ('bernoulli', 'normal', 'file', 'drift')
FITTERS = ('clogit', 'ulogit')


class StudyBaseConfig:
    """The `base:` section: study base size, truth and covariate generator"""

    def __init__(self, settings: Dict, root: Optional[str] = None):
        if not isinstance(settings, dict):
            raise ConfigError('base section must be a mapping')
        self.settings = settings
        self.root = root
        self._validate()

    def _validate(self):
        if 'N' not in self.settings and self.covariates.get('generator') != 'file':
            raise ConfigError('base.N is required')
        if self.N is not None and (not isinstance(self.N, int) or self.N < 2):
            raise ConfigError('base.N must be an integer >= 2', {'N': self.N})
        if self.lambda0 is None and self.prevalence is None:
            raise ConfigError('base needs lambda0 or prevalence')
        if self.lambda0 is not None and self.lambda0 <= 0:
            raise ConfigError('base.lambda0 must be positive', {'lambda0': self.lambda0})
        if self.prevalence is not None and not 0 < self.prevalence < 1:
            raise ConfigError('base.prevalence must lie in (0,1)', {'prevalence': self.prevalence})
        if self.model not in MODELS:
            raise ConfigError(f'unknown model "{self.model}"', {'known': sorted(MODELS)})
        check_generator(self.covariates, self.dimension, top_level=True)

    @property
    def N(self) -> Optional[int]:
        return self.settings.get('N', None)

    @property
    def beta0(self) -> np.ndarray:
        beta = self.settings.get('beta0', [0.0])
        return np.atleast_1d(np.asarray(beta, dtype=float))

    @property
    def dimension(self) -> int:
        return len(self.beta0)

    @property
    def lambda0(self) -> Optional[float]:
        value = self.settings.get('lambda0', None)
        return None if value is None else float(value)

    @property
    def prevalence(self) -> Optional[float]:
        value = self.settings.get('prevalence', None)
        return None if value is None else float(value)

    @property
    def model(self) -> str:
        return self.settings.get('model', 'exponential')

    @property
    def covariates(self) -> Dict:
        return self.settings.get('covariates', {'generator': 'bernoulli', 'prob': [0.5] * self.dimension})

    def covariate_path(self) -> Optional[str]:
        path = self.covariates.get('path', None)
        if path is None or os.path.isabs(path) or self.root is None:
            return path
        return os.path.join(self.root, path)

    def with_lambda0(self, lambda0: float) -> 'StudyBaseConfig':
        settings = copy.deepcopy(self.settings)
        settings['lambda0'] = float(lambda0)
        return StudyBaseConfig(settings, self.root)

    def with_size(self, n: int) -> 'StudyBaseConfig':
        settings = copy.deepcopy(self.settings)
        settings['N'] = int(n)
        return StudyBaseConfig(settings, self.root)


def _vector(spec: Dict, key: str, dimension: int, default=None) -> List[float]:
    value = spec.get(key, default)
    if value is None:
        raise ConfigError(f'covariate generator needs "{key}"')
    values = [float(v) for v in np.atleast_1d(value)]
    if len(values) == 1 and dimension > 1:
        values = values * dimension
    if len(values) != dimension:
        raise ConfigError(f'"{key}" must have {dimension} entries', {key: values})
    return values


def check_generator(spec: Dict, dimension: int, top_level: bool = False):
    if not isinstance(spec, dict):
        raise ConfigError('covariates must be a mapping')
    kind = spec.get('generator', None)
    if kind not in GENERATORS:
        raise ConfigError(f'unknown covariate generator "{kind}"', {'known': list(GENERATORS)})
    if kind == 'bernoulli':
        probs = _vector(spec, 'prob', dimension)
        if any(not 0 <= p <= 1 for p in probs):
            raise ConfigError('bernoulli prob must lie in [0,1]', {'prob': probs})
    elif kind == 'normal':
        _vector(spec, 'mean', dimension, 0.0)
        if any(s <= 0 for s in _vector(spec, 'sd', dimension, 1.0)):
            raise ConfigError('normal sd must be positive')
    elif kind == 'file':
        if not top_level:
            raise ConfigError('file generator cannot be nested in a drift mixture')
        if 'path' not in spec:
            raise ConfigError('file generator needs "path"')
    elif kind == 'drift':
        if not top_level:
            raise ConfigError('drift mixtures cannot be nested')
        regimes = spec.get('regimes', None)
        if not isinstance(regimes, list) or len(regimes) < 2:
            raise ConfigError('drift generator needs a list of at least two regimes')
        fractions = [float(r.get('fraction', 0)) for r in regimes]
        if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError('regime fractions must be positive and sum to 1', {'fractions': fractions})
        for regime in regimes:
            check_generator(regime, dimension)


class SimulationConfig:
    settings:   Dict
    base:       StudyBaseConfig
    design:     DesignSpec

    def __init__(self, configuration: Any):
        """load a simulation config from a dict or a YAML file"""

        root = None
        if isinstance(configuration, Dict):
            yml = copy.deepcopy(configuration)
        else:
            if not os.path.exists(configuration):
                raise DataFileError(f'Configuration file "{configuration}" not found',
                                    {'path': str(configuration)}, code='FILE_NOT_FOUND')
            root = os.path.dirname(os.path.abspath(configuration))
            with open(configuration, 'r') as f:
                try:
                    yml = yaml.load(f, Loader=yaml.SafeLoader)
                except yaml.YAMLError as ex:
                    raise ConfigError(f'Configuration file "{configuration}" is not valid YAML', {'error': str(ex)})
        if not isinstance(yml, dict):
            raise ConfigError('configuration must be a mapping')
        self.settings = yml
        for section in ('base', 'design'):
            if section not in yml:
                raise ConfigError(f'configuration section "{section}" missing')
        self.base = StudyBaseConfig(yml['base'], root)
        self.design = DesignSpec.from_dict(yml['design'])
        if any(name not in FITTERS for name in self.fitters):
            raise ConfigError('unknown fitter', {'fitters': self.fitters, 'known': list(FITTERS)})
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ConfigError('replications must be a positive integer', {'replications': self.replications})
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError('workers must be a positive integer', {'workers': self.workers})

    @property
    def fitters(self) -> List[str]:
        return list(self.settings.get('fitters', list(FITTERS)))

    @property
    def replications(self) -> int:
        return self.settings.get('replications', 100)

    @property
    def workers(self) -> int:
        return self.settings.get('workers', 1)

    @property
    def reference_size(self) -> int:
        return int(self.settings.get('reference_size', 100000))

    def as_dict(self) -> Dict:
        """fully resolved configuration, defaults filled in"""
        return {
            'base': dict(self.base.settings, model=self.base.model, covariates=self.base.covariates,
                         beta0=self.base.beta0.tolist(), lambda0=self.base.lambda0),
            'design': self.design.to_dict(),
            'fitters': self.fitters,
            'replications': self.replications,
            'workers': self.workers,
            'reference_size': self.reference_size,
        }
