import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect
from scipy.special import expit, logit

from pyrejective import symmetric
from pyrejective.errors import DegenerateCovariatesError, NonConvergenceError, OddsOverflowError, \
    SingularInformationError, ValidationError
from pyrejective.utils import log

MAX_ITERATIONS = 50
MAX_HALVINGS = 20
SCORE_TOLERANCE = 1e-8
STEP_TOLERANCE = 1e-6
SEPARATION_LIMIT = 30.0
CONDITION_LIMIT = 1e12


class OddsModel:
    """Odds ratio x(z, beta) with x(z, 0) = x(0, beta) = 1, and its first two beta-derivatives"""

    name = 'base'
    exponential = False

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValidationError('covariate dimension must be positive', {'dimension': dimension})
        self.dimension = dimension

    def evaluate(self, z: np.ndarray, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def effective(self, z: np.ndarray, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """x, effective covariates Z = x'/x, and their derivatives z' = x''/x - Z Z^T"""
        x, dx, d2x = self.evaluate(z, beta)
        big_z = dx / x[:, None]
        z_prime = d2x / x[:, None, None] - big_z[:, :, None] * big_z[:, None, :]
        return x, big_z, z_prime

    def _check(self, z: np.ndarray, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        beta = np.asarray(beta, dtype=float).ravel()
        if z.shape[1] != self.dimension or len(beta) != self.dimension:
            raise ValidationError('covariate dimension mismatch',
                                  {'model': self.dimension, 'covariates': z.shape[1], 'beta': len(beta)})
        return z, beta


class ExponentialOdds(OddsModel):
    """x = exp(beta^T z); the effective covariate is z itself"""

    name = 'exponential'
    exponential = True

    def evaluate(self, z, beta):
        z, beta = self._check(z, beta)
        linear = z @ beta
        if not np.all(np.isfinite(linear)) or np.max(linear, initial=-np.inf) > 700:
            raise OddsOverflowError('odds ratio overflows', {'beta': beta.tolist()})
        x = np.exp(linear)
        dx = x[:, None] * z
        d2x = x[:, None, None] * z[:, :, None] * z[:, None, :]
        return x, dx, d2x

    def effective(self, z, beta):
        x, _, _ = self.evaluate(z, beta)
        z, _ = self._check(z, beta)
        return x, z, np.zeros((len(x), self.dimension, self.dimension))


class LinearOdds(OddsModel):
    """excess relative risk, x = 1 + beta^T z"""

    name = 'linear'

    def evaluate(self, z, beta):
        z, beta = self._check(z, beta)
        x = 1.0 + z @ beta
        if not np.all(np.isfinite(x)) or np.any(x <= 0):
            raise OddsOverflowError('linear odds not positive', {'beta': beta.tolist()})
        return x, z.copy(), np.zeros((len(x), self.dimension, self.dimension))


MODELS = {'exponential': ExponentialOdds, 'linear': LinearOdds}


def make_model(name: str, dimension: int) -> OddsModel:
    if name not in MODELS:
        raise ValidationError(f'unknown odds model "{name}"', {'model': name, 'known': sorted(MODELS)})
    return MODELS[name](dimension)


class CaseControlSet:
    """Risk set E with case indicators I_A and covariates z_A; row order is kept"""

    def __init__(self, ids: Sequence[Hashable], z, is_case, meta: Optional[Dict] = None):
        z = np.array(z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        is_case = np.array(is_case, dtype=bool).ravel()
        ids = tuple(ids)
        if not (len(ids) == len(is_case) == z.shape[0]):
            raise ValidationError('ids, covariates and indicators differ in length')
        if len(set(ids)) != len(ids):
            raise ValidationError('duplicate ids in case-control set')
        if not np.all(np.isfinite(z)):
            raise ValidationError('covariates must be finite')
        eta = int(np.sum(is_case))
        if not 0 < eta < len(ids):
            raise ValidationError('case-control set needs at least one case and one control',
                                  {'eta': eta, 'size': len(ids)}, code='ETA_BOUNDS')
        z.setflags(write=False)
        is_case.setflags(write=False)
        self.ids = ids
        self.z = z
        self.is_case = is_case
        self.meta = meta or dict()

    @property
    def eta(self) -> int:
        return int(np.sum(self.is_case))

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def dimension(self) -> int:
        return self.z.shape[1]

    def __eq__(self, other):
        if not isinstance(other, CaseControlSet):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(self.z, other.z) and \
            np.array_equal(self.is_case, other.is_case)

    def __repr__(self):
        return f'CaseControlSet(size={self.size}, eta={self.eta}, dimension={self.dimension})'


@dataclass
class FitResult:
    beta_hat: np.ndarray
    score: np.ndarray
    information: np.ndarray
    covariance: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    condition_number: float
    halvings: int
    alpha_hat: Optional[float] = None

    @property
    def beta_covariance(self) -> np.ndarray:
        if self.alpha_hat is None:
            return self.covariance
        return self.covariance[1:, 1:]

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.beta_covariance))

    def to_dict(self) -> Dict:
        result = {
            'beta_hat': self.beta_hat.tolist(),
            'standard_errors': self.standard_errors.tolist(),
            'score': self.score.tolist(),
            'information': self.information.tolist(),
            'covariance': self.covariance.tolist(),
            'loglik': self.loglik,
            'iterations': self.iterations,
            'converged': self.converged,
            'condition_number': self.condition_number,
            'halvings': self.halvings,
        }
        if self.alpha_hat is not None:
            result['alpha_hat'] = self.alpha_hat
        return result


def _odds(model: OddsModel, z: np.ndarray, beta: np.ndarray):
    x, big_z, z_prime = model.effective(z, beta)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise OddsOverflowError('odds ratio not finite and positive', {'beta': np.ravel(beta).tolist()})
    return x, big_z, z_prime


def _log_symmetric(x: np.ndarray, big_z: np.ndarray, z_prime: np.ndarray, eta: int):
    """log e_eta(x) with grad and Hessian of e_eta divided by e_eta, one pass over the items"""
    scaled, log_scale = symmetric.scale_weights(x)
    dim = big_z.shape[1]
    mantissas, exponents = symmetric.empty_columns(eta)
    grad = np.zeros((eta + 1, dim))
    hess = np.zeros((eta + 1, dim, dim))
    for i in range(len(x)):
        zi = big_z[i]
        curvature = z_prime[i] + np.outer(zi, zi)
        mantissas, exponents, w_keep, w_add = symmetric.push(mantissas, exponents, float(scaled[i]))
        prev_g = grad[:-1]
        add_g = zi[None, :] + prev_g
        add_h = curvature[None] + zi[None, :, None] * prev_g[:, None, :] + prev_g[:, :, None] * zi[None, None, :] \
            + hess[:-1]
        grad[1:] = w_keep[:, None] * grad[1:] + w_add[:, None] * add_g
        hess[1:] = w_keep[:, None, None] * hess[1:] + w_add[:, None, None] * add_h
    table = symmetric.SymmetricPolyTable(mantissas, exponents, log_scale)
    return table.log_value(eta), grad[eta], hess[eta]


def clogit_eval(data: CaseControlSet, model: OddsModel, beta) -> Tuple[float, np.ndarray, np.ndarray]:
    """conditional log likelihood of the case set given E and eta, its score and observed information"""
    beta = np.asarray(beta, dtype=float).ravel()
    x, big_z, z_prime = _odds(model, data.z, beta)
    cases = data.is_case
    log_e, grad, hess = _log_symmetric(x, big_z, z_prime, data.eta)
    loglik = float(np.sum(np.log(x[cases]))) - log_e
    score = big_z[cases].sum(axis=0) - grad
    information = hess - np.outer(grad, grad) - z_prime[cases].sum(axis=0)
    return loglik, score, 0.5 * (information + information.T)


def inclusion_probabilities(data: CaseControlSet, model: OddsModel, beta) -> np.ndarray:
    """P_beta(A in D | E, eta) for every member"""
    beta = np.asarray(beta, dtype=float).ravel()
    x, _, _ = _odds(model, data.z, beta)
    scaled, log_scale = symmetric.scale_weights(x)
    full = symmetric.SymmetricPolyTable(*symmetric.accumulate(scaled, data.eta), log_scale)
    result = np.zeros(data.size)
    for i in range(data.size):
        rest = symmetric.SymmetricPolyTable(*symmetric.accumulate(np.delete(scaled, i), data.eta - 1), log_scale)
        result[i] = scaled[i] * rest.scaled_ratio(data.eta - 1, full, data.eta)
    return result


def clogit_expected_information(data: CaseControlSet, model: OddsModel, beta) -> np.ndarray:
    """expected conditional information; the z' term is replaced by its mean"""
    beta = np.asarray(beta, dtype=float).ravel()
    _, _, information = clogit_eval(data, model, beta)
    if model.exponential:
        return information
    _, _, z_prime = _odds(model, data.z, beta)
    observed = z_prime[data.is_case].sum(axis=0)
    expected = np.tensordot(inclusion_probabilities(data, model, beta), z_prime, axes=1)
    return information + observed - expected


def ulogit_eval(data: CaseControlSet, model: OddsModel, alpha: float, beta) \
        -> Tuple[float, np.ndarray, np.ndarray]:
    """product-Bernoulli log likelihood with lambda = exp(alpha); parameters ordered (alpha, beta)"""
    beta = np.asarray(beta, dtype=float).ravel()
    x, big_z, z_prime = _odds(model, data.z, beta)
    indicator = data.is_case.astype(float)
    linear = alpha + np.log(x)
    p = expit(linear)
    loglik = float(np.sum(indicator * linear) - np.sum(np.logaddexp(0.0, linear)))
    design = np.hstack([np.ones((data.size, 1)), big_z])
    residual = indicator - p
    score = design.T @ residual
    information = (design * (p * (1.0 - p))[:, None]).T @ design
    information[1:, 1:] -= np.tensordot(residual, z_prime, axes=1)
    return loglik, score, 0.5 * (information + information.T)


def _solve(information: np.ndarray, score: np.ndarray) -> Tuple[np.ndarray, float]:
    condition = float(np.linalg.cond(information))
    if not math.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularInformationError('information matrix is singular', {'condition_number': condition})
    return np.linalg.solve(information, score), condition


def _newton(objective: Callable, theta: np.ndarray, has_alpha: bool = False) -> FitResult:
    beta_slice = slice(1, None) if has_alpha else slice(0, None)
    loglik, score, information = objective(theta)
    iterations = 0
    halvings = 0
    while iterations < MAX_ITERATIONS:
        step, _ = _solve(information, score)
        # separated fits have a vanishing score but Newton steps of order one
        if np.max(np.abs(score)) < SCORE_TOLERANCE and np.max(np.abs(step)) < STEP_TOLERANCE:
            break
        iterations += 1
        accepted = False
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = theta + scale * step
            try:
                trial = objective(candidate)
            except OddsOverflowError:
                trial = None
            if trial is not None and trial[0] >= loglik - 1e-12 * (1.0 + abs(loglik)):
                accepted = True
                break
            scale *= 0.5
            halvings += 1
        if not accepted:
            log(f'step halving exhausted at iteration {iterations}')
            break
        theta = candidate
        loglik, score, information = trial
        if np.max(np.abs(theta[beta_slice])) > SEPARATION_LIMIT:
            raise NonConvergenceError('separation: coefficients diverge',
                                      {'beta': theta[beta_slice].tolist(), 'iteration': iterations})
    covariance, condition = _solve(information, np.eye(len(theta)))
    converged = bool(np.max(np.abs(score)) < SCORE_TOLERANCE)
    return FitResult(beta_hat=theta[beta_slice].copy(), score=score, information=information,
                     covariance=covariance, alpha_hat=float(theta[0]) if has_alpha else None,
                     loglik=loglik, iterations=iterations, converged=converged,
                     condition_number=condition, halvings=halvings)


def clogit_fit(data: CaseControlSet, model: Optional[OddsModel] = None, init=None) -> FitResult:
    model = model or ExponentialOdds(data.dimension)
    theta = np.zeros(model.dimension) if init is None else np.asarray(init, dtype=float).ravel().copy()
    result = _newton(lambda t: clogit_eval(data, model, t), theta)
    log(f'clogit: beta {result.beta_hat}, {result.iterations} iterations')
    return result


def ulogit_fit(data: CaseControlSet, model: Optional[OddsModel] = None) -> FitResult:
    model = model or ExponentialOdds(data.dimension)
    theta = np.zeros(model.dimension + 1)
    theta[0] = logit(data.eta / data.size)
    result = _newton(lambda t: ulogit_eval(data, model, t[0], t[1:]), theta, has_alpha=True)
    log(f'ulogit: alpha {result.alpha_hat:.6g}, beta {result.beta_hat}, {result.iterations} iterations')
    return result


@dataclass
class LimitFunctionals:
    f: float
    p: float
    rho_f: float
    lambda_f: float
    e0: float
    e1: np.ndarray
    e2: np.ndarray
    sigma: np.ndarray
    upsilon: np.ndarray = field(repr=False)

    def beta_covariance(self) -> np.ndarray:
        """limiting covariance of sqrt(N)(beta_hat - beta0)"""
        return np.linalg.inv(self.sigma)

    def alpha_variance(self) -> float:
        """limiting variance of sqrt(N)(alpha_tilde - alpha_{E,eta})"""
        return float(np.linalg.inv(self.upsilon)[0, 0] - 1.0 / self.e0)

    def retrospective_alpha_variance(self) -> float:
        """the (1,1) entry of the inverse of Upsilon, without the finite-population correction"""
        return float(np.linalg.inv(self.upsilon)[0, 0])

    def to_dict(self) -> Dict:
        return {'f': self.f, 'p': self.p, 'rho_f': self.rho_f, 'lambda_f': self.lambda_f, 'e0': self.e0,
                'e1': self.e1.tolist(), 'e2': self.e2.tolist(), 'sigma': self.sigma.tolist(),
                'sigma_inverse': self.beta_covariance().tolist(), 'upsilon': self.upsilon.tolist(),
                'alpha_variance': self.alpha_variance()}


def lambda_for_prevalence(z, model: OddsModel, beta0, prevalence: float) -> float:
    """baseline odds lambda0 giving population case fraction `prevalence`"""
    if not 0 < prevalence < 1:
        raise ValidationError('prevalence must lie in (0,1)', {'prevalence': prevalence})
    x, _, _ = _odds(model, z, np.asarray(beta0, dtype=float))
    log_x = np.log(x)

    def excess(log_lam: float) -> float:
        return float(np.mean(expit(log_lam + log_x))) - prevalence

    return math.exp(bisect(excess, -60.0, 60.0, xtol=1e-13, maxiter=200))


def asymptotic_variance(z, model: OddsModel, beta0, lambda0: float, f: float) -> LimitFunctionals:
    """limit functionals of a study base with covariates z under truth (beta0, lambda0), sampled to fraction f"""
    if not 0 < f < 1:
        raise ValidationError('f must lie in (0,1)', {'f': f})
    if lambda0 <= 0:
        raise ValidationError('lambda0 must be positive', {'lambda0': lambda0})
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if len(z) == 0:
        raise ValidationError('population is empty')
    x, big_z, _ = _odds(model, z, np.asarray(beta0, dtype=float))
    log_x = np.log(x)
    p0 = expit(math.log(lambda0) + log_x)
    p = float(np.mean(p0))
    rho_f = (1.0 - f) * p / ((1.0 - p) * f)
    lambda_f = lambda0 / rho_f
    weight = (1.0 - expit(math.log(lambda_f) + log_x)) * p0
    n = len(z)
    e0 = float(np.mean(weight))
    e1 = (weight[:, None] * big_z).sum(axis=0) / n
    e2 = (big_z * weight[:, None]).T @ big_z / n
    sigma = e2 - np.outer(e1, e1) / e0
    sigma = 0.5 * (sigma + sigma.T)
    eigenvalues = np.linalg.eigvalsh(sigma)
    if eigenvalues[0] <= 1e-12 * max(1.0, float(np.trace(e2))):
        raise DegenerateCovariatesError('limiting information is not positive definite',
                                        {'smallest_eigenvalue': float(eigenvalues[0])})
    dim = len(e1)
    upsilon = np.zeros((dim + 1, dim + 1))
    upsilon[0, 0] = e0
    upsilon[0, 1:] = e1
    upsilon[1:, 0] = e1
    upsilon[1:, 1:] = e2
    return LimitFunctionals(f=f, p=p, rho_f=rho_f, lambda_f=lambda_f, e0=e0, e1=e1, e2=e2,
                            sigma=sigma, upsilon=upsilon)
