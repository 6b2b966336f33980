"""Policy evaluators: the black-box objective the search minimises.

Every evaluator maps an :class:`EvaluationRequest` to an
:class:`EvaluationResult` whose ``error`` lies in [0, 1]. Three kinds exist:

* :class:`SyntheticEvaluator` -- closed-form benchmarks for verifying the
  optimiser;
* :class:`BuiltinEvaluator` -- trains a multinomial logistic regression on
  policy-augmented images and reports validation error;
* :class:`ExternalEvaluator` -- a child process speaking line-delimited JSON
  on stdin/stdout, for attaching real network training.
"""
from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset_io import LabeledDataset
from .errors import ConfigError, DomainError, EvaluationError, EvaluatorLaunchError, ProtocolError
from .image_ops import PreprocessConfig, augment_batch, pad_crop_flip_cutout, substream
from .policy_space import (DEFAULT_RANGES, Policy, SubPolicy, clamp_policy, decode_policy,
                           policy_bounds, policy_to_json)


@dataclass(frozen=True)
class EvaluationRequest:
    id: int
    policy_raw: np.ndarray
    policy: Policy
    dataset: str = "synthetic"
    model: str = "none"

    @classmethod
    def build(cls, id, policy_raw, ranges=DEFAULT_RANGES, dataset="synthetic", model="none"):
        v = clamp_policy(policy_raw)
        return cls(int(id), v, decode_policy(v, ranges), dataset, model)

    def to_line(self) -> str:
        doc = {"id": self.id, "policy_raw": [float(t) for t in self.policy_raw],
               "policy": policy_to_json(self.policy), "dataset": self.dataset, "model": self.model}
        return json.dumps(doc, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class EvaluationResult:
    id: int
    error: float

    def __post_init__(self):
        if not (math.isfinite(self.error) and 0.0 <= self.error <= 1.0):
            raise DomainError(f"evaluation error must be a finite value in [0, 1], got {self.error!r}")


class Evaluator:
    """Base class; subclasses implement :meth:`evaluate`."""

    dataset_id = "synthetic"
    model_id = "none"

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        raise NotImplementedError

    def clone(self) -> "Evaluator":
        """An independent instance for another search run."""
        return self

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# --------------------------------------------------------------------------
# Synthetic benchmarks (functions of the normalised policy vector)
# --------------------------------------------------------------------------

_BRANIN_MIN = 0.39788735772973816


def _branin(a, b):
    x1 = -5.0 + 15.0 * a
    x2 = 15.0 * b
    return ((x2 - 5.1 / (4 * math.pi**2) * x1**2 + 5 / math.pi * x1 - 6) ** 2
            + 10 * (1 - 1 / (8 * math.pi)) * np.cos(x1) + 10)


# maximum over the box, attained at the (-5, 0) corner
_BRANIN_MAX = float(_branin(0.0, 0.0))

GMM_SEED = 20190502
GMM_COMPONENTS = 5
_gmm_rng = np.random.Generator(np.random.PCG64(GMM_SEED))
GMM_CENTRES = _gmm_rng.uniform(0.15, 0.85, size=(GMM_COMPONENTS, 15))
GMM_WIDTHS = _gmm_rng.uniform(0.25, 0.4, size=GMM_COMPONENTS)
GMM_WEIGHTS = np.array([1.0, 0.85, 0.75, 0.65, 0.55])
del _gmm_rng


def _sphere(X):
    return np.sum((X - 0.5) ** 2, axis=-1) / (0.25 * X.shape[-1])


def _branin15(X):
    return (_branin(X[..., 0], X[..., 1]) - _BRANIN_MIN) / (_BRANIN_MAX - _BRANIN_MIN)


def _gmm(X):
    d2 = np.sum((X[..., None, :] - GMM_CENTRES) ** 2, axis=-1)
    bumps = GMM_WEIGHTS * np.exp(-d2 / (2.0 * GMM_WIDTHS**2))
    return 1.0 - bumps.sum(axis=-1) / GMM_WEIGHTS.sum()


SYNTHETIC = {"sphere": _sphere, "branin15": _branin15, "gmm-multimodal": _gmm}

# Global minimum of gmm-multimodal on the normalised box, located offline by
# random search plus L-BFGS-B polishing (re-derived in the test-suite).
GMM_OPTIMUM_VALUE = 0.7220028027039747
GMM_OPTIMUM_X = np.array([
    0.568730167633339, 0.7375562578635056, 0.7563652817245992, 0.64821308261046,
    0.33920805387097536, 0.7438816843535181, 0.37249826071211, 0.7811665120231478,
    0.3326055714900376, 0.6521781304382609, 0.4180211695321152, 0.40730613462620746,
    0.6132524797283762, 0.5268368212506467, 0.3695207506971443])

# Known optima used for simple regret.
SYNTHETIC_OPTIMA = {"sphere": 0.0, "branin15": 0.0, "gmm-multimodal": GMM_OPTIMUM_VALUE}


def synthetic_value(name: str, x_normalized) -> np.ndarray:
    """Benchmark value(s) at normalised point(s) in [0, 1]^15."""
    try:
        fn = SYNTHETIC[name]
    except KeyError:
        raise ConfigError(f"unknown synthetic benchmark {name!r}; choose from {sorted(SYNTHETIC)}") from None
    X = np.clip(np.asarray(x_normalized, dtype=np.float64), 0.0, 1.0)
    return np.clip(fn(X), 0.0, 1.0)


def normalize_policy(v) -> np.ndarray:
    v = clamp_policy(v)
    return v / policy_bounds(v.size // 5)


def evaluate_synthetic(name: str, policy, request_id: int = 0) -> EvaluationResult:
    """``policy`` is a raw policy vector (or an :class:`EvaluationRequest`)."""
    if isinstance(policy, EvaluationRequest):
        request_id, policy = policy.id, policy.policy_raw
    return EvaluationResult(int(request_id), float(synthetic_value(name, normalize_policy(policy))))


class SyntheticEvaluator(Evaluator):
    def __init__(self, name: str):
        if name not in SYNTHETIC:
            raise ConfigError(f"unknown synthetic benchmark {name!r}; choose from {sorted(SYNTHETIC)}")
        self.name = name
        self.model_id = name

    def evaluate(self, request):
        return evaluate_synthetic(self.name, request)

    def __repr__(self):
        return f"SyntheticEvaluator({self.name!r})"


# --------------------------------------------------------------------------
# Built-in classifier
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 6
    learning_rate: float = 0.002
    batch_size: int = 50
    weight_decay: float = 1e-3
    preprocess: PreprocessConfig | None = None  # optional pad/crop/flip/Cutout stage

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise DomainError("epochs, batch_size and learning_rate must be positive")


def _features(images):
    # per-image standardisation, as image_ops.standardize but in float32
    x = np.asarray(images).reshape(len(images), -1).astype(np.float32)
    x -= x.mean(axis=1, keepdims=True)
    std = np.sqrt(np.einsum("ij,ij->i", x, x) / x.shape[1])[:, None]
    x /= np.maximum(std, np.float32(1.0 / math.sqrt(x.shape[1])))
    return x


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def train_classifier(train: LabeledDataset, pool: Sequence[SubPolicy] | None,
                     cfg: ClassifierConfig, seed: int):
    """SGD on softmax regression; returns (weights, bias).

    Random streams for augmentation, preprocessing and shuffling are
    separate, so an augmentation pool whose probabilities are all zero
    reproduces the unaugmented run exactly.
    """
    images = train.stacked()
    labels = train.labels
    n = len(labels)
    C = train.class_count
    if n == 0:
        raise DomainError("training set is empty")
    if np.unique(labels).size < 2:
        raise DomainError("training set must contain at least two classes")
    D = int(np.prod(images.shape[1:]))
    W = np.zeros((D, C), dtype=np.float32)
    b = np.zeros(C, dtype=np.float32)
    onehot = np.eye(C, dtype=np.float32)[labels]
    for epoch in range(cfg.epochs):
        batch = images
        if pool:
            batch = augment_batch(batch, pool, substream(seed, 1, epoch))
        if cfg.preprocess is not None:
            rng = substream(seed, 2, epoch)
            batch = np.stack([pad_crop_flip_cutout(im, cfg.preprocess, rng) for im in batch])
        X = _features(batch)
        order = substream(seed, 3, epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx]
            p = _softmax(xb @ W + b)
            p -= onehot[idx]
            p /= len(idx)
            W -= cfg.learning_rate * (xb.T @ p + cfg.weight_decay * W)
            b -= cfg.learning_rate * p.sum(axis=0)
    return W, b


def classification_error(W, b, ds: LabeledDataset) -> float:
    pred = np.argmax(_features(ds.stacked()) @ W + b, axis=1)
    return float(np.mean(pred != ds.labels))


def evaluate_builtin(policy, train: LabeledDataset, val: LabeledDataset,
                     cfg: ClassifierConfig = ClassifierConfig(), seed: int = 0,
                     request_id: int = 0) -> EvaluationResult:
    """Validation error after training on ``train`` augmented by ``policy``.

    ``policy`` is a :class:`Policy`, a sequence of sub-policies (a pooled
    policy set), an :class:`EvaluationRequest`, or ``None`` for no
    augmentation.
    """
    if isinstance(policy, EvaluationRequest):
        request_id, policy = policy.id, policy.policy
    if len(train) == 0 or len(val) == 0:
        raise DomainError("train and validation sets must be non-empty")
    if train.class_count != val.class_count:
        raise DomainError("train and validation sets disagree on class_count")
    if policy is None:
        pool = None
    elif isinstance(policy, Policy):
        pool = list(policy.sub_policies)
    else:
        pool = list(policy)
    W, b = train_classifier(train, pool, cfg, seed)
    return EvaluationResult(int(request_id), classification_error(W, b, val))


class BuiltinEvaluator(Evaluator):
    def __init__(self, train: LabeledDataset, val: LabeledDataset,
                 cfg: ClassifierConfig = ClassifierConfig(), seed: int = 0, dataset_id: str = "builtin"):
        if np.unique(train.labels).size < 2:
            raise DomainError("training set must contain at least two classes")
        self.train, self.val, self.cfg, self.seed = train, val, cfg, seed
        self.dataset_id = dataset_id
        self.model_id = "logreg"

    def evaluate(self, request):
        return evaluate_builtin(request, self.train, self.val, self.cfg, self.seed)


# --------------------------------------------------------------------------
# External child process
# --------------------------------------------------------------------------

def parse_response(line: str, expected_id: int) -> EvaluationResult:
    text = line.rstrip("\r\n")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ProtocolError(f"malformed response line {text!r}: {err.msg}") from None
    if not isinstance(doc, dict) or set(doc) < {"id", "error"}:
        raise ProtocolError(f"malformed response line {text!r}: need an object with 'id' and 'error'")
    rid, err = doc["id"], doc["error"]
    if not isinstance(rid, int) or isinstance(rid, bool):
        raise ProtocolError(f"malformed response line {text!r}: 'id' must be an integer")
    if not isinstance(err, (int, float)) or isinstance(err, bool):
        raise ProtocolError(f"malformed response line {text!r}: 'error' must be a number")
    if rid != expected_id:
        raise ProtocolError(f"response id {rid} does not match request id {expected_id} (line {text!r})")
    if not (math.isfinite(err) and 0.0 <= err <= 1.0):
        raise ProtocolError(f"response error {err!r} outside [0, 1] (line {text!r})")
    return EvaluationResult(rid, float(err))


class ExternalEvaluator(Evaluator):
    """Keeps one child process alive per run; one request in flight at a time."""

    def __init__(self, command, timeout: float = 3600.0, dataset_id: str = "external",
                 model_id: str = "external", cwd=None, env=None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ConfigError("external evaluator command is empty")
        self.timeout = float(timeout)
        self.dataset_id, self.model_id = dataset_id, model_id
        self.cwd, self.env = cwd, env
        self._proc = None
        self._lines = None
        self._answered = False

    def clone(self):
        return ExternalEvaluator(self.command, self.timeout, self.dataset_id, self.model_id, self.cwd, self.env)

    def __getstate__(self):
        state = dict(self.__dict__)
        state.update(_proc=None, _lines=None, _answered=False)
        return state

    def _start(self):
        try:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          text=True, encoding="utf-8", bufsize=1, cwd=self.cwd, env=self.env)
        except OSError as err:
            raise EvaluatorLaunchError(f"evaluator launch failed: cannot start {self.command!r}: {err}") from None
        self._lines = queue.Queue()
        stdout, lines = self._proc.stdout, self._lines

        def pump():
            for line in stdout:
                lines.put(line)
            lines.put(None)

        threading.Thread(target=pump, daemon=True).start()

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        if self._proc is None or self._proc.poll() is not None:
            self.close()
            self._start()
        try:
            self._proc.stdin.write(request.to_line() + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as err:
            self._fail_exit(f"could not send request {request.id}: {err}")
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise EvaluationError(f"evaluation {request.id} timed out after {self.timeout:g}s") from None
        if line is None:
            self._fail_exit(f"child closed its output before answering request {request.id}")
        try:
            result = parse_response(line, request.id)
        except ProtocolError:
            self.close()
            raise
        self._answered = True
        return result

    def _fail_exit(self, message):
        code = self._proc.wait(timeout=5) if self._proc is not None else None
        answered = self._answered
        self.close()
        if not answered:
            raise EvaluatorLaunchError(f"evaluator launch failed: {message} (exit code {code})")
        raise EvaluationError(f"{message} (exit code {code})")

    def close(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.poll() is None:
                try:
                    proc.stdin.close()
                    proc.wait(timeout=1.0)
                except (OSError, subprocess.TimeoutExpired):
                    proc.kill()
                    proc.wait()
        finally:
            for stream in (proc.stdin, proc.stdout):
                try:
                    stream.close()
                except OSError:
                    pass

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def evaluate_external(cmd, request: EvaluationRequest, timeout: float) -> EvaluationResult:
    """Launch ``cmd``, exchange one request/response pair, shut the child down."""
    with ExternalEvaluator(cmd, timeout, request.dataset, request.model) as ev:
        return ev.evaluate(request)
