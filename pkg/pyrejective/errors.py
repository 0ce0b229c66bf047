import json
from typing import Dict, Optional


class PyRejectiveError(Exception):
    """Base of all domain errors; the CLI maps these to exit status 1"""

    code = 'ERROR'

    def __init__(self, message: str, context: Optional[Dict] = None, code: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.context = context or dict()
        if code is not None:
            self.code = code

    def to_dict(self) -> Dict:
        return {'code': self.code, 'message': self.message, 'context': self.context}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=str)


class ValidationError(PyRejectiveError):
    code = 'INVALID_INPUT'


class LatticeError(ValidationError):
    code = 'NON_LATTICE_OFFSET'


class QuadratureError(PyRejectiveError):
    code = 'QUADRATURE_NONCONVERGENCE'


class InfeasibleError(PyRejectiveError):
    code = 'INFEASIBLE'


class SamplerGuardError(PyRejectiveError):
    code = 'SAMPLER_GUARD'


class OddsOverflowError(PyRejectiveError):
    code = 'ODDS_OVERFLOW'


class NonConvergenceError(PyRejectiveError):
    code = 'NON_CONVERGENCE'


class SingularInformationError(PyRejectiveError):
    code = 'SINGULAR_INFORMATION'


class DegenerateCovariatesError(PyRejectiveError):
    code = 'DEGENERATE_COVARIATES'


class ConfigError(PyRejectiveError):
    code = 'CONFIG_ERROR'


class DataFileError(PyRejectiveError):
    code = 'PARSE_ERROR'


class ReplicationSKIP(Exception):
    """Raised when a simulated case-control set cannot be formed (no cases or no controls)"""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason
