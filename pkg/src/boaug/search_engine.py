"""Bayesian-optimisation policy search.

One run draws ``init_num`` uniform points in the normalised box, then for
``iter_num`` iterations slice-samples GP hyperparameters, maximises the
integrated expected improvement with CMA-ES and evaluates the winner. Several
independent runs each contribute their best policy to the final policy set.

Every random draw of iteration ``t`` of a run comes from
``substream(seed, stage, t)``, and the hyperparameter chain state is written
into the checkpoint, so a run resumed from its checkpoint continues exactly
as an uninterrupted one would.
"""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .acquisition import IntegratedEI
from .cmaes import CmaConfig, maximize
from .errors import BoAugError, ConfigError, DomainError, NumericalError
from .evaluators import EvaluationRequest, Evaluator
from .gp_surrogate import DEFAULT_PRIOR, KernelHyperparams, fit, sample_hyperparams
from .image_ops import substream
from .policy_space import Policy, clamp_policy, decode_policy, policy_bounds, ranges_from_spec

log = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-9
DUPLICATE_JITTER = 1e-3

# substream stage labels
_INIT, _ITER = 0, 1


@dataclass(frozen=True)
class SearchConfig:
    init_num: int = 10
    iter_num: int = 90
    runs: int = 8
    sub_policies: int = 3
    mcmc_samples: int = 10
    mcmc_burn_in: int = 50
    mcmc_thin: int = 5
    # burn-in for later iterations, whose chains start from the previous state
    mcmc_warm_burn_in: int = 0
    cma_budget: int = 2000
    cma_restarts: int = 2
    cma_sigma0: float = 0.3
    cma_tol_x: float = 1e-6
    # "incumbent" starts the first CMA-ES run at the best observed point
    cma_start: str = "incumbent"
    ranges: str | dict = "default"
    record_timing: bool = True

    def __post_init__(self):
        checks = [
            ("init_num", self.init_num >= 1, "must be >= 1"),
            ("iter_num", self.iter_num >= 0, "must be >= 0"),
            ("runs", self.runs >= 1, "must be >= 1"),
            ("sub_policies", self.sub_policies >= 1, "must be >= 1"),
            ("mcmc_samples", self.mcmc_samples >= 1, "must be >= 1"),
            ("mcmc_burn_in", self.mcmc_burn_in >= 0, "must be >= 0"),
            ("mcmc_thin", self.mcmc_thin >= 1, "must be >= 1"),
            ("mcmc_warm_burn_in", self.mcmc_warm_burn_in >= 0, "must be >= 0"),
            ("cma_budget", self.cma_budget >= 1, "must be >= 1"),
            ("cma_restarts", self.cma_restarts >= 0, "must be >= 0"),
            ("cma_sigma0", self.cma_sigma0 > 0, "must be > 0"),
            ("cma_tol_x", self.cma_tol_x >= 0, "must be >= 0"),
            ("cma_start", self.cma_start in ("incumbent", "uniform"), "must be 'incumbent' or 'uniform'"),
        ]
        for name, ok, why in checks:
            if not ok:
                raise ConfigError(f"search.{name} {why}, got {getattr(self, name)!r}")
        try:
            ranges_from_spec(self.ranges)
        except (DomainError, ValueError, TypeError) as err:
            raise ConfigError(f"search.ranges: {err}") from None

    @property
    def budget(self) -> int:
        return self.init_num + self.iter_num

    @property
    def dimension(self) -> int:
        return 5 * self.sub_policies

    def range_table(self):
        return ranges_from_spec(self.ranges)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: Mapping) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"search: unknown field(s) {unknown}")
        return cls(**doc)


@dataclass
class EvalRecord:
    iter: int
    policy_raw: np.ndarray
    error: float
    elapsed_s: float = 0.0
    candidate: np.ndarray | None = None  # CMA-ES output (normalised) before clamping
    mcmc_state: np.ndarray | None = None
    hyperparams: list = field(default_factory=list)

    def to_json(self, run: int) -> dict:
        doc = {"run": run, "iter": self.iter, "policy_raw": [float(t) for t in self.policy_raw],
               "error": float(self.error), "elapsed_s": float(self.elapsed_s)}
        if self.candidate is not None:
            doc["candidate"] = [float(t) for t in self.candidate]
        if self.mcmc_state is not None:
            doc["mcmc_state"] = [float(t) for t in self.mcmc_state]
        if self.hyperparams:
            doc["hyperparams"] = [hp.to_json() for hp in self.hyperparams]
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "EvalRecord":
        opt = lambda key: None if key not in doc else np.asarray(doc[key], dtype=np.float64)
        hps = [KernelHyperparams(h["lengthscales"], h["signal_variance"], h["noise_variance"])
               for h in doc.get("hyperparams", [])]
        return cls(int(doc["iter"]), np.asarray(doc["policy_raw"], dtype=np.float64), float(doc["error"]),
                   float(doc["elapsed_s"]), opt("candidate"), opt("mcmc_state"), hps)


@dataclass
class RunHistory:
    run: int
    seed: int
    records: list[EvalRecord] = field(default_factory=list)
    complete: bool = False

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.records])

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.errors) if self.records else np.empty(0)

    @property
    def incumbent(self) -> EvalRecord:
        if not self.records:
            raise DomainError("empty history has no incumbent")
        return self.records[int(np.argmin(self.errors))]  # argmin picks the earliest tie

    @property
    def hyperparam_log(self) -> list[list[KernelHyperparams]]:
        return [r.hyperparams for r in self.records if r.hyperparams]

    def incumbent_policy(self, ranges) -> Policy:
        return decode_policy(self.incumbent.policy_raw, ranges)


def read_checkpoint(path, run: int | None = None) -> list[EvalRecord]:
    """Parse a run checkpoint; a torn final line (crash mid-write) is dropped."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    records = []
    for k, line in enumerate(lines):
        try:
            if not line.endswith("\n"):
                raise ValueError("unterminated line")
            doc = json.loads(line)
            rec = EvalRecord.from_json(doc)
        except (ValueError, KeyError, TypeError) as err:
            if k == len(lines) - 1:
                log.warning("%s: dropping incomplete final line", path)
                break
            raise ConfigError(f"{path}:{k + 1}: corrupt checkpoint record ({err})") from None
        if rec.iter != len(records):
            raise ConfigError(f"{path}:{k + 1}: expected iter {len(records)}, found {rec.iter}")
        if run is not None and doc["run"] != run:
            raise ConfigError(f"{path}:{k + 1}: record belongs to run {doc['run']}, expected {run}")
        records.append(rec)
    return records


class _Checkpoint:
    def __init__(self, path, run, records):
        self.path = Path(path)
        self.run = run
        self.path.parent.mkdir(parents=True, exist_ok=True)
        # rewrite so that a torn tail from a crash disappears
        with open(self.path, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(self._line(r))

    def _line(self, rec):
        return json.dumps(rec.to_json(self.run), separators=(",", ":"), allow_nan=False) + "\n"

    def append(self, rec):
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(self._line(rec))
            fh.flush()
            os.fsync(fh.fileno())


def _propose(X, y, cfg: SearchConfig, rng, chain_state):
    """Next normalised point from integrated EI; also returns the chain state."""
    first = chain_state is None
    samples, state = sample_hyperparams(
        X, y, DEFAULT_PRIOR, n_samples=cfg.mcmc_samples, rng=rng,
        burn_in=cfg.mcmc_burn_in if first else cfg.mcmc_warm_burn_in,
        thin=cfg.mcmc_thin, init=chain_state, return_state=True)
    models = []
    for hp in samples:
        try:
            models.append(fit(X, y, hp))
        except NumericalError as err:
            log.debug("dropping hyperparameter sample: %s", err)
    if not models:
        raise NumericalError(f"no GP surrogate could be factorised at n={len(y)}")
    acq = IntegratedEI(models)
    cma = CmaConfig(X.shape[1], sigma0=cfg.cma_sigma0, max_evals=cfg.cma_budget,
                    restarts=cfg.cma_restarts, tol_x=cfg.cma_tol_x)
    x0 = X[int(np.argmin(y))] if cfg.cma_start == "incumbent" else None
    x, _ = maximize(acq, cma, rng, vectorized=True, x0=x0)
    candidate = np.array(x, copy=True)
    if np.min(np.max(np.abs(X - candidate), axis=1)) < DUPLICATE_TOL:
        candidate = candidate + rng.uniform(-DUPLICATE_JITTER / 2, DUPLICATE_JITTER / 2, size=candidate.size)
    return candidate, state, samples


def run_single_bo(evaluator: Evaluator, cfg: SearchConfig, seed: int, run: int = 0,
                  checkpoint=None, resume: bool = False,
                  callback: Callable[[EvalRecord], None] | None = None) -> RunHistory:
    """One BO run. With ``resume=True`` completed records are read back from
    ``checkpoint`` and the run continues after them."""
    bounds = policy_bounds(cfg.sub_policies)
    ranges = cfg.range_table()
    d = bounds.size
    history = RunHistory(run, seed)
    if resume and checkpoint is not None and Path(checkpoint).exists():
        history.records = read_checkpoint(checkpoint, run)
        if len(history.records) > cfg.budget:
            raise ConfigError(f"{checkpoint}: holds {len(history.records)} records, budget is {cfg.budget}")
        log.info("run %d: resuming after %d evaluations", run, len(history.records))
    ckpt = _Checkpoint(checkpoint, run, history.records) if checkpoint is not None else None

    init_points = substream(seed, _INIT).random((cfg.init_num, d))
    chain_state = None
    for rec in history.records:
        if rec.mcmc_state is not None:
            chain_state = rec.mcmc_state

    for t in range(len(history.records), cfg.budget):
        candidate, samples, state = None, [], None
        if t < cfg.init_num:
            x = init_points[t]
        else:
            X = np.stack([r.policy_raw for r in history.records]) / bounds
            y = history.errors
            candidate, chain_state, samples = _propose(X, y, cfg, substream(seed, _ITER, t), chain_state)
            state = chain_state
            x = np.clip(candidate, 0.0, 1.0)
        v = clamp_policy(x * bounds)
        request = EvaluationRequest(t, v, decode_policy(v, ranges), evaluator.dataset_id, evaluator.model_id)
        start = time.perf_counter()
        result = evaluator.evaluate(request)
        elapsed = time.perf_counter() - start if cfg.record_timing else 0.0
        rec = EvalRecord(t, v, result.error, elapsed, candidate, state, samples)
        history.records.append(rec)
        if ckpt is not None:
            ckpt.append(rec)
        log.debug("run %d iter %d error %.6g (best %.6g)", run, t, rec.error, history.errors.min())
        if callback is not None:
            callback(rec)
    history.complete = True
    return history


@dataclass
class SearchResult:
    policies: list[Policy]
    histories: list[RunHistory]
    complete: bool
    failure: BoAugError | None = None

    @property
    def evaluations(self) -> int:
        return sum(len(h.records) for h in self.histories)


def _run_job(args):
    evaluator, cfg, seed, run, checkpoint, resume = args
    try:
        return run_single_bo(evaluator, cfg, seed, run, checkpoint, resume), None
    except BoAugError as err:
        records = read_checkpoint(checkpoint, run) if checkpoint is not None and Path(checkpoint).exists() else []
        return RunHistory(run, seed, records, complete=False), err
    finally:
        evaluator.close()


def run_search(evaluator: Evaluator, cfg: SearchConfig, master_seed: int, out_dir=None,
               parallel: int = 1, resume: bool = False) -> SearchResult:
    """``cfg.runs`` independent runs seeded ``master_seed + k``.

    Checkpoints go to ``out_dir/run_<k>.jsonl`` when ``out_dir`` is given.
    After a failed run no further runs are started; the result then holds
    the completed runs' policies and is marked incomplete.
    """
    ranges = cfg.range_table()
    jobs = []
    for k in range(cfg.runs):
        ckpt = None if out_dir is None else Path(out_dir) / f"run_{k}.jsonl"
        jobs.append((evaluator.clone(), cfg, master_seed + k, k, ckpt, resume))
    outcomes = []
    if parallel > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, cfg.runs)) as pool:
            futures = [pool.submit(_run_job, job) for job in jobs]
            for fut in futures:
                outcomes.append(fut.result())
                if outcomes[-1][1] is not None:
                    for rest in futures:
                        rest.cancel()
                    break
    else:
        for job in jobs:
            outcomes.append(_run_job(job))
            if outcomes[-1][1] is not None:
                break
    histories = [h for h, _ in outcomes]
    failure = next((err for _, err in outcomes if err is not None), None)
    policies = [h.incumbent_policy(ranges) for h in histories if h.complete]
    return SearchResult(policies, histories, failure is None and len(policies) == cfg.runs, failure)


def random_search(evaluator: Evaluator, budget: int, seed: int, sub_policies: int = 3, ranges="default") -> RunHistory:
    """Uniform random search over the normalised box, as a baseline."""
    bounds = policy_bounds(sub_policies)
    table = ranges_from_spec(ranges)
    pts = substream(seed, _INIT).random((budget, bounds.size))
    history = RunHistory(0, seed)
    for t, x in enumerate(pts):
        v = clamp_policy(x * bounds)
        req = EvaluationRequest(t, v, decode_policy(v, table), evaluator.dataset_id, evaluator.model_id)
        history.records.append(EvalRecord(t, v, evaluator.evaluate(req).error))
    history.complete = True
    return history


def benchmark(name: str, seeds, budget: int, cfg: SearchConfig | None = None):
    """Best-so-far rows ``(method, seed, iter, value)`` for BO and random search
    on the synthetic benchmark ``name``; both methods share each seed."""
    from .evaluators import SyntheticEvaluator

    evaluator = SyntheticEvaluator(name)
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    if cfg is None:
        cfg = SearchConfig(record_timing=False)
    init = min(cfg.init_num, budget)
    cfg = replace(cfg, init_num=init, iter_num=budget - init, runs=1)
    rows = []
    for seed in seeds:
        for method, hist in (("bo", lambda: run_single_bo(evaluator, cfg, seed)),
                             ("random", lambda: random_search(evaluator, budget, seed, cfg.sub_policies, cfg.ranges))):
            curve = hist().best_so_far()
            rows.extend((method, seed, t, float(v)) for t, v in enumerate(curve))
    return rows
