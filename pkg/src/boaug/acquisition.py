"""Expected improvement for minimisation and its MCMC-integrated form."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from . import _kernels
from .errors import DomainError
from .gp_surrogate import GpModel, posterior_batch

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def expected_improvement(mean, std, v_star):
    """``E[max(v_star - Y, 0)]`` for ``Y ~ N(mean, std^2)``; zero where ``std == 0``.

    Works elementwise on arrays; returns a float for scalar input.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std < 0):
        raise DomainError("standard deviation must be non-negative")
    improvement = v_star - mean
    positive = std > 0
    safe = np.where(positive, std, 1.0)
    # a subnormal std sends z to +-inf, where ndtr and exp still give the right limits
    with np.errstate(over="ignore"):
        z = improvement / safe
        ei = improvement * ndtr(z) + safe * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(positive, np.maximum(ei, 0.0), 0.0)
    return float(ei) if ei.ndim == 0 else ei


def incumbent(y_standardized) -> float:
    return float(np.min(y_standardized))


def integrated_ei(models: Sequence[GpModel], x, v_star: float) -> float:
    """Mean over ``models`` of EI at ``x`` (standardised scale)."""
    if not models:
        raise DomainError("integrated_ei needs at least one model")
    vals = []
    for m in models:
        mean, var = posterior_batch(m, np.asarray(x, dtype=np.float64)[None, :], standardized=True)
        vals.append(expected_improvement(mean[0], math.sqrt(var[0]), v_star))
    return float(np.mean(vals))


class IntegratedEI:
    """Vectorised integrated EI over a fixed set of models sharing training inputs.

    Calling the instance with a (q, d) array returns q acquisition values;
    a 1-d input returns a float.
    """

    def __init__(self, models: Sequence[GpModel], v_star: float | None = None):
        if not models:
            raise DomainError("IntegratedEI needs at least one model")
        self.models = list(models)
        self.X = np.ascontiguousarray(self.models[0].X)
        self.v_star = incumbent(self.models[0].y) if v_star is None else float(v_star)
        self._inv_ls2s = np.stack([m.hp.inv_ls2 for m in self.models])
        self._sf2s = np.array([m.hp.signal_variance for m in self.models])
        self._alphas = np.stack([m.alpha for m in self.models])
        self._L_invs = np.stack([m.L_inv for m in self.models])

    def __call__(self, Xq):
        Xq = np.asarray(Xq, dtype=np.float64)
        single = Xq.ndim == 1
        Xq = np.ascontiguousarray(np.atleast_2d(Xq))
        total = _kernels.integrated_ei(Xq, self.X, self._inv_ls2s, self._sf2s, self._alphas,
                                       self._L_invs, self.v_star)
        return float(total[0]) if single else total
