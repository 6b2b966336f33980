"""Gaussian-process regression with a Matern-5/2 ARD kernel.

Targets are standardised inside :func:`fit` (the stored mean/std are
reapplied by :func:`posterior`); the prior mean is zero on the standardised
scale. Kernel hyperparameters are marginalised by coordinate-wise slice
sampling in log space (:func:`sample_hyperparams`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import _kernels
from .errors import DomainError, NumericalError

JITTER_START = 1e-10
JITTER_MAX = 1e-4
JITTER_GROWTH = 10.0

# Hard box for the sampler, in natural units.
LENGTHSCALE_BOUNDS = (1e-3, 1e3)
SIGNAL_BOUNDS = (1e-6, 1e6)
NOISE_BOUNDS = (1e-10, 10.0)


@dataclass(frozen=True)
class KernelHyperparams:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.array(self.lengthscales, dtype=np.float64).reshape(-1)
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if ls.size == 0 or not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise DomainError(f"lengthscales must be positive and finite, got {ls}")
        if not (self.signal_variance > 0 and math.isfinite(self.signal_variance)):
            raise DomainError(f"signal_variance must be positive, got {self.signal_variance}")
        if not (self.noise_variance >= 0 and math.isfinite(self.noise_variance)):
            raise DomainError(f"noise_variance must be non-negative, got {self.noise_variance}")

    @property
    def dim(self):
        return self.lengthscales.size

    @property
    def inv_ls2(self):
        return 1.0 / self.lengthscales**2

    def to_log(self) -> np.ndarray:
        return np.concatenate([np.log(self.lengthscales),
                               [math.log(self.signal_variance), math.log(max(self.noise_variance, NOISE_BOUNDS[0]))]])

    @classmethod
    def from_log(cls, theta) -> "KernelHyperparams":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(np.exp(theta[:-2]), math.exp(theta[-2]), math.exp(theta[-1]))

    def to_json(self) -> dict:
        return {"lengthscales": self.lengthscales.tolist(), "signal_variance": self.signal_variance,
                "noise_variance": self.noise_variance}


def matern52(x, x2, hp: KernelHyperparams) -> float:
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    r = math.sqrt(float(np.sum((x - x2) ** 2 / hp.lengthscales**2)))
    s = math.sqrt(5.0) * r
    return hp.signal_variance * (1.0 + s + s * s / 3.0) * math.exp(-s)


def kernel_matrix(A, B, hp: KernelHyperparams) -> np.ndarray:
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    return _kernels.matern52_cross(A, B, hp.inv_ls2, hp.signal_variance)


def _standardize_targets(y, enabled=True):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not enabled:
        return y, 0.0, 1.0
    mean = float(y.mean())
    std = float(y.std())
    if not std > 0:
        std = 1.0
    return (y - mean) / std, mean, std


def _check_inputs(X, y):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] < 1:
        raise DomainError("need at least one observation")
    if X.shape[0] != y.size:
        raise DomainError(f"{X.shape[0]} inputs but {y.size} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DomainError("inputs and targets must be finite")
    return X, y


def _jitter_levels(sf2):
    j = JITTER_START
    while j <= JITTER_MAX * (1 + 1e-9):
        yield j * sf2
        j *= JITTER_GROWTH


@dataclass(frozen=True, eq=False)
class GpModel:
    X: np.ndarray
    y: np.ndarray  # standardised targets
    hp: KernelHyperparams
    L: np.ndarray
    alpha: np.ndarray
    jitter: float
    y_mean: float = 0.0
    y_std: float = 1.0
    _L_inv: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def diag_added(self):
        return self.hp.noise_variance + self.jitter

    @property
    def L_inv(self) -> np.ndarray:
        if not self._L_inv:
            self._L_inv.append(solve_triangular(self.L, np.eye(self.n), lower=True, check_finite=False))
        return self._L_inv[0]


def fit(X, y, hp: KernelHyperparams, standardize: bool = True) -> GpModel:
    """Factorise ``K + (noise + jitter) I`` with jitter escalated on failure."""
    X, y = _check_inputs(X, y)
    if X.shape[1] != hp.dim:
        raise DomainError(f"inputs have {X.shape[1]} dims, hyperparameters {hp.dim}")
    ys, mean, std = _standardize_targets(y, standardize)
    K = _kernels.matern52_gram(X, hp.inv_ls2, hp.signal_variance)
    n = X.shape[0]
    for jitter in _jitter_levels(hp.signal_variance):
        Kj = K.copy()
        Kj[np.diag_indices(n)] += hp.noise_variance + jitter
        try:
            L = np.linalg.cholesky(Kj)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve((L, True), ys, check_finite=False)
        return GpModel(X, ys, hp, L, alpha, jitter, mean, std)
    raise NumericalError(f"Cholesky failed for n={n} even with jitter {JITTER_MAX:g} x signal variance")


def posterior_batch(model: GpModel, Xq, standardized: bool = False):
    """Predictive mean and latent variance at each row of ``Xq``."""
    Xq = np.ascontiguousarray(np.atleast_2d(np.asarray(Xq, dtype=np.float64)))
    Ks = _kernels.matern52_cross(Xq, model.X, model.hp.inv_ls2, model.hp.signal_variance)
    mean = Ks @ model.alpha
    v = Ks @ model.L_inv.T
    var = np.maximum(model.hp.signal_variance - np.einsum("ij,ij->i", v, v), 0.0)
    if standardized:
        return mean, var
    return model.y_mean + model.y_std * mean, model.y_std**2 * var


def posterior(model: GpModel, x, standardized: bool = False) -> tuple[float, float]:
    mean, var = posterior_batch(model, np.asarray(x, dtype=np.float64)[None, :], standardized)
    return float(mean[0]), float(var[0])


def _with_jitter(lml, sf2, noise):
    for jitter in _jitter_levels(sf2):
        try:
            return lml(noise + jitter)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("Cholesky failed at maximum jitter while evaluating the marginal likelihood")


def _lml_standardized(X, ys, hp_or_parts):
    inv_ls2, sf2, noise = hp_or_parts
    return _with_jitter(lambda diag: _kernels.gp_lml(X, ys, inv_ls2, sf2, diag), sf2, noise)


def log_marginal_likelihood(X, y, hp: KernelHyperparams, standardize: bool = True) -> float:
    X, y = _check_inputs(X, y)
    ys, _, _ = _standardize_targets(y, standardize)
    return _lml_standardized(X, ys, (hp.inv_ls2, hp.signal_variance, hp.noise_variance))


# --------------------------------------------------------------------------
# Hyperparameter MCMC
# --------------------------------------------------------------------------

_PRIOR_CACHE: dict = {}


@dataclass(frozen=True)
class LogNormalPrior:
    """Independent log-normal priors (medians and log-space standard deviations)."""

    lengthscale_median: float = 0.3
    lengthscale_log_std: float = 1.0
    signal_median: float = 1.0
    signal_log_std: float = 1.0
    noise_median: float = 1e-3
    noise_log_std: float = 1.5

    def centre(self, dim):
        return np.concatenate([np.full(dim, math.log(self.lengthscale_median)),
                               [math.log(self.signal_median), math.log(self.noise_median)]])

    def scales(self, dim):
        return np.concatenate([np.full(dim, self.lengthscale_log_std),
                               [self.signal_log_std, self.noise_log_std]])

    def log_density(self, theta):
        # density of the log-parameters, i.e. a normal in log space
        dim = theta.size - 2
        cache = _PRIOR_CACHE.get((self, dim))
        if cache is None:
            cache = _PRIOR_CACHE[(self, dim)] = (self.centre(dim), 1.0 / self.scales(dim))
        z = (theta - cache[0]) * cache[1]
        return -0.5 * float(z @ z)


@dataclass(frozen=True)
class FlatPrior:
    """Uniform over the sampler's log-space box."""

    def centre(self, dim):
        return LogNormalPrior().centre(dim)

    def log_density(self, theta):
        return 0.0


DEFAULT_PRIOR = LogNormalPrior()


def _log_bounds(dim):
    lo = np.log(np.concatenate([np.full(dim, LENGTHSCALE_BOUNDS[0]), [SIGNAL_BOUNDS[0], NOISE_BOUNDS[0]]]))
    hi = np.log(np.concatenate([np.full(dim, LENGTHSCALE_BOUNDS[1]), [SIGNAL_BOUNDS[1], NOISE_BOUNDS[1]]]))
    return lo, hi


def _slice_coordinate(logp, theta, i, lp0, width, rng, lo, hi, max_steps_out):
    """One stepping-out/shrinkage slice update of coordinate ``i`` (Neal 2003).

    ``theta`` is updated in place; returns the log density at the new state.
    """
    x0 = theta[i]
    lo_i, hi_i = lo[i], hi[i]
    log_y = lp0 - rng.exponential()

    def at(x):
        if not lo_i <= x <= hi_i:
            return -np.inf
        theta[i] = x
        val = logp(theta)
        theta[i] = x0
        return val

    left = x0 - width * rng.random()
    right = left + width
    j = int(math.floor(max_steps_out * rng.random()))
    k = max_steps_out - 1 - j
    while j > 0 and left > lo_i and at(left) > log_y:
        left -= width
        j -= 1
    while k > 0 and right < hi_i and at(right) > log_y:
        right += width
        k -= 1
    left, right = max(left, lo_i), min(right, hi_i)
    for _ in range(200):
        x1 = left + rng.random() * (right - left)
        lp1 = at(x1)
        if lp1 > log_y:
            theta[i] = x1
            return lp1
        if x1 < x0:
            left = x1
        else:
            right = x1
        if right - left < 1e-12:
            break
    return lp0


def sample_hyperparams(X, y, prior=DEFAULT_PRIOR, n_samples: int = 10, rng=None,
                       burn_in: int = 50, thin: int = 5, init=None, step_width: float = 1.0,
                       max_steps_out: int = 10, standardize: bool = True, return_state: bool = False):
    """Slice-sample kernel hyperparameters from ``p(theta | X, y)`` in log space.

    Runs ``burn_in + n_samples * thin`` sweeps over all coordinates and keeps
    the state after every ``thin``-th post-burn-in sweep. ``init`` is a
    :class:`KernelHyperparams` or a log-parameter vector; by default the
    chain starts at the prior centre. With ``return_state=True`` the final
    log-space state is returned as well, for warm-starting the next call.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    X, y = _check_inputs(X, y)
    ys, _, _ = _standardize_targets(y, standardize)
    dim = X.shape[1]
    lo, hi = _log_bounds(dim)
    if init is None:
        theta = prior.centre(dim).copy()
    elif isinstance(init, KernelHyperparams):
        theta = init.to_log()
    else:
        theta = np.array(init, dtype=np.float64)
    if theta.size != dim + 2:
        raise DomainError(f"initial state has {theta.size} entries, expected {dim + 2}")
    theta = np.clip(theta, lo, hi)

    prior_logpdf = prior.log_density
    # Per-dimension squared differences let a lengthscale move update the
    # scaled distances in O(n^2) instead of rebuilding them in O(n^2 d).
    D2 = np.ascontiguousarray(((X[:, None, :] - X[None, :, :]) ** 2).transpose(2, 0, 1))
    inv_cur = np.exp(-2.0 * theta[:dim])
    R2 = np.tensordot(inv_cur, D2, axes=1)

    def logp(t, i):
        if i < dim:
            R2c = R2 + D2[i] * (math.exp(-2.0 * t[i]) - inv_cur[i])
        else:
            R2c = R2
        sf2 = math.exp(t[-2])
        try:
            lml = _with_jitter(lambda diag: _kernels.gp_lml_r2(R2c, ys, sf2, diag), sf2, math.exp(t[-1]))
        except NumericalError:
            return -np.inf
        return lml + prior_logpdf(t)

    lp = logp(theta, dim)
    samples = []
    thin = max(int(thin), 1)
    total = int(burn_in) + n_samples * thin
    for sweep in range(total):
        if step_width > 0:
            for i in range(theta.size):
                before = theta[i]
                lp = _slice_coordinate(lambda t: logp(t, i), theta, i, lp, step_width, rng, lo, hi,
                                       max_steps_out)
                if i < dim and theta[i] != before:
                    inv_new = math.exp(-2.0 * theta[i])
                    R2 += D2[i] * (inv_new - inv_cur[i])
                    inv_cur[i] = inv_new
            # refresh to stop rounding drift from accumulating
            inv_cur = np.exp(-2.0 * theta[:dim])
            R2 = np.tensordot(inv_cur, D2, axes=1)
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0:
            samples.append(KernelHyperparams.from_log(theta))
    if return_state:
        return samples, theta.copy()
    return samples
