"""CMA-ES maximiser over the unit box.

Strategy parameters follow the canonical defaults of Hansen's tutorial
("The CMA Evolution Strategy: A Tutorial", 2016). Candidates falling outside
[0, 1]^d are resampled up to ``resample_limit`` times and then clamped; the
clamped point is what gets evaluated and recombined. When a run meets a
termination criterion and budget remains, the search restarts from a fresh
uniform mean with the population doubled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DomainError


def default_popsize(dim: int) -> int:
    return 4 + int(math.floor(3 * math.log(dim)))


@dataclass(frozen=True)
class CmaConfig:
    dimension: int
    popsize: int | None = None
    sigma0: float = 0.3
    max_evals: int = 2000
    restarts: int = 3
    tol_x: float = 1e-12
    tol_fun: float = 1e-14
    resample_limit: int = 10

    def __post_init__(self):
        if self.dimension < 1:
            raise DomainError("dimension must be >= 1")
        if self.popsize is None:
            object.__setattr__(self, "popsize", default_popsize(self.dimension))
        if self.popsize < 4:
            raise DomainError(f"population size must be >= 4, got {self.popsize}")
        if not self.sigma0 > 0:
            raise DomainError("sigma0 must be positive")
        if self.max_evals < 1 or self.restarts < 0:
            raise DomainError("max_evals must be >= 1 and restarts >= 0")


@dataclass
class CmaState:
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    weights: np.ndarray
    generation: int = 0
    B: np.ndarray = field(default=None, repr=False)
    D: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.B is None:
            self.B = np.eye(self.mean.size)
            self.D = np.ones(self.mean.size)


class CMAES:
    """One (mu/mu_w, lambda) run minimising via :meth:`ask` / :meth:`tell`."""

    def __init__(self, x0, sigma0, popsize, rng: np.random.Generator, resample_limit=10):
        n = len(x0)
        self.n = n
        self.lam = int(popsize)
        self.mu = self.lam // 2
        self.rng = rng
        self.resample_limit = resample_limit
        raw = math.log((self.lam + 1) / 2.0) - np.log(np.arange(1, self.mu + 1))
        w = raw / raw.sum()
        self.mueff = 1.0 / float(np.sum(w**2))
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chiN = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.state = CmaState(np.array(x0, dtype=np.float64), float(sigma0), np.eye(n),
                              np.zeros(n), np.zeros(n), w)
        self.best_history: list[float] = []
        self._last_fvals = None

    def _update_eigensystem(self):
        st = self.state
        C = (st.C + st.C.T) / 2.0
        evals, B = np.linalg.eigh(C)
        floor = 1e-14 * max(float(evals.max()), 1e-300)
        if evals.min() < floor:
            evals = np.maximum(evals, floor)
            C = (B * evals) @ B.T
        st.C = C
        st.B = B
        st.D = np.sqrt(evals)

    def ask(self) -> np.ndarray:
        """Sample ``lambda`` candidates inside the unit box."""
        st = self.state
        A = st.sigma * (st.B * st.D)
        out = st.mean + self.rng.standard_normal((self.lam, self.n)) @ A.T
        # redraw only the rows still outside the box, up to resample_limit draws in all
        for _ in range(self.resample_limit - 1):
            bad = np.flatnonzero(np.any((out < 0.0) | (out > 1.0), axis=1))
            if bad.size == 0:
                break
            out[bad] = st.mean + self.rng.standard_normal((bad.size, self.n)) @ A.T
        return np.clip(out, 0.0, 1.0)

    def tell(self, X, fvals):
        """Update from candidates ``X`` and their (minimised) values."""
        st = self.state
        n = self.n
        order = np.argsort(fvals, kind="stable")
        Xs = X[order[: self.mu]]
        old_mean = st.mean
        st.mean = st.weights @ Xs
        Y = (Xs - old_mean) / st.sigma
        y_w = st.weights @ Y
        C_inv_sqrt = (st.B / st.D) @ st.B.T
        st.p_sigma = (1 - self.cs) * st.p_sigma + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (C_inv_sqrt @ y_w)
        norm_ps = float(np.linalg.norm(st.p_sigma))
        hsig = norm_ps / math.sqrt(1 - (1 - self.cs) ** (2 * (st.generation + 1))) / self.chiN < 1.4 + 2 / (n + 1)
        st.p_c = (1 - self.cc) * st.p_c + (math.sqrt(self.cc * (2 - self.cc) * self.mueff) * y_w if hsig else 0.0)
        rank_mu = (Y.T * st.weights) @ Y
        delta = 0.0 if hsig else self.cc * (2 - self.cc)
        st.C = ((1 - self.c1 - self.cmu) * st.C
                + self.c1 * (np.outer(st.p_c, st.p_c) + delta * st.C)
                + self.cmu * rank_mu)
        st.sigma *= math.exp(min(1.0, (self.cs / self.damps) * (norm_ps / self.chiN - 1)))
        st.generation += 1
        self._update_eigensystem()
        self.best_history.append(float(np.min(fvals)))
        self._last_fvals = np.asarray(fvals)

    def stop(self, tol_x, tol_fun) -> str | None:
        st = self.state
        if not np.all(np.isfinite(st.C)) or not math.isfinite(st.sigma):
            return "numerics"
        if st.sigma * max(float(np.sqrt(np.diag(st.C)).max()), float(np.abs(st.p_c).max())) < tol_x:
            return "tolx"
        window = 10 + int(math.ceil(30 * self.n / self.lam))
        if len(self.best_history) >= window and self._last_fvals is not None:
            recent = self.best_history[-window:] + list(self._last_fvals)
            if max(recent) - min(recent) < tol_fun:
                return "tolfun"
        if st.D.max() > 1e7 * st.D.min():
            return "conditioncov"
        if st.sigma * st.D.max() > 1e3:
            return "tolupsigma"
        return None


def maximize(f: Callable, cfg: CmaConfig, rng: np.random.Generator, vectorized: bool = False,
             x0=None, callback: Callable | None = None):
    """Maximise ``f`` over [0, 1]^d; returns ``(x_best, f_best)``.

    ``f`` takes one d-vector, or with ``vectorized=True`` a (lambda, d)
    array returning lambda values. ``x0`` seeds the first run's mean
    (uniform otherwise). ``callback(evals, f_best)`` runs after every
    generation. The best evaluated point over all restarts is returned.
    """
    d = cfg.dimension
    evals = 0
    best_x, best_f = None, -np.inf
    popsize = cfg.popsize
    for run in range(cfg.restarts + 1):
        if evals + popsize > cfg.max_evals:
            break
        start = rng.random(d) if (run > 0 or x0 is None) else np.clip(np.asarray(x0, dtype=np.float64), 0.0, 1.0)
        es = CMAES(start, cfg.sigma0, popsize, rng, cfg.resample_limit)
        while evals + es.lam <= cfg.max_evals:
            X = es.ask()
            if vectorized:
                vals = np.asarray(f(X), dtype=np.float64).reshape(-1)
            else:
                vals = np.array([float(f(x)) for x in X])
            vals = np.where(np.isnan(vals), -np.inf, vals)
            evals += es.lam
            k = int(np.argmax(vals))
            if best_x is None or vals[k] > best_f:
                best_f, best_x = float(vals[k]), X[k].copy()
            es.tell(X, -vals)
            if callback is not None:
                callback(evals, best_f)
            if es.stop(cfg.tol_x, cfg.tol_fun):
                break
        popsize *= 2
    if best_x is None:
        # budget smaller than one population: evaluate the box centre
        best_x = np.full(d, 0.5) if x0 is None else np.clip(np.asarray(x0, dtype=np.float64), 0.0, 1.0)
        best_f = float(f(best_x[None])[0]) if vectorized else float(f(best_x))
    return best_x, best_f


def with_budget(cfg: CmaConfig, max_evals: int) -> CmaConfig:
    return replace(cfg, max_evals=max_evals)
