"""Application configuration: one JSON document with a ``version`` field.

``load_config`` validates the document and checks that referenced files
exist; ``dump_config`` writes it back with every default filled in, so
loading and dumping again reproduces the same text.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .dataset_io import LabeledDataset, load_dataset, make_reduced_split, synthetic_shapes
from .errors import ConfigError
from .evaluators import (SYNTHETIC, BuiltinEvaluator, ClassifierConfig, Evaluator, ExternalEvaluator,
                         SyntheticEvaluator)
from .search_engine import SearchConfig

CONFIG_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticSpec(_Strict):
    kind: Literal["synthetic"] = "synthetic"
    name: str = "sphere"

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in SYNTHETIC:
            raise ValueError(f"unknown synthetic benchmark {v!r}; choose from {sorted(SYNTHETIC)}")
        return v


class DatasetSpec(_Strict):
    """Where the search data come from and how the reduced split is drawn.

    ``format="shapes"`` generates the procedural glyph dataset instead of
    reading ``path``; ``shapes_size`` images are generated and the split is
    drawn from them.
    """

    format: Literal["cifar10", "dir", "shapes"] = "cifar10"
    path: str | None = None
    shapes_size: int = Field(1200, ge=2)
    shapes_seed: int = 0
    train_n: int = Field(1000, ge=1)
    val_n: int | None = Field(None, ge=1)
    split_seed: int = 0
    stratify: bool = False

    def load(self) -> LabeledDataset:
        if self.format == "shapes":
            return synthetic_shapes(self.shapes_size, seed=self.shapes_seed)
        return load_dataset(self.path, self.format)

    def split(self):
        return make_reduced_split(self.load(), self.train_n, self.val_n, self.split_seed, self.stratify)


class BuiltinSpec(_Strict):
    kind: Literal["builtin"] = "builtin"
    dataset: DatasetSpec = DatasetSpec(format="shapes")
    classifier: ClassifierConfig = ClassifierConfig()
    seed: int = 0


class ExternalSpec(_Strict):
    kind: Literal["external"] = "external"
    command: Union[str, list[str]]
    timeout: float = Field(3600.0, gt=0)
    dataset: str = "external"
    model: str = "external"


EvaluatorSpec = Annotated[Union[SyntheticSpec, BuiltinSpec, ExternalSpec], Field(discriminator="kind")]


class AppConfig(_Strict):
    version: Literal[1] = CONFIG_VERSION
    seed: int = 0
    output_dir: str = "boaug_out"
    search: SearchConfig = SearchConfig()
    evaluator: EvaluatorSpec = SyntheticSpec()

    def build_evaluator(self) -> Evaluator:
        ev = self.evaluator
        if isinstance(ev, SyntheticSpec):
            return SyntheticEvaluator(ev.name)
        if isinstance(ev, BuiltinSpec):
            train, val = ev.dataset.split()
            return BuiltinEvaluator(train, val, ev.classifier, ev.seed, dataset_id=ev.dataset.format)
        return ExternalEvaluator(ev.command, ev.timeout, ev.dataset, ev.model)

    def to_json(self) -> dict:
        return self.model_dump(mode="json")


def _location(loc) -> str:
    parts = []
    for p in loc:
        if isinstance(p, int):
            parts.append(f"[{p}]")
        else:
            parts.append(("." if parts else "") + str(p))
    return "".join(parts) or "<root>"


def parse_config(doc, source: str = "<config>", check_paths: bool = True) -> AppConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    if "version" not in doc:
        raise ConfigError(f"{source}: missing field 'version' (expected {CONFIG_VERSION})")
    try:
        cfg = AppConfig.model_validate(doc)
    except ValidationError as err:
        first = err.errors()[0]
        raise ConfigError(f"{source}: field '{_location(first['loc'])}': {first['msg']}") from None
    except ConfigError as err:
        raise ConfigError(f"{source}: {err}") from None
    if check_paths and isinstance(cfg.evaluator, BuiltinSpec):
        ds = cfg.evaluator.dataset
        if ds.format != "shapes":
            if ds.path is None:
                raise ConfigError(f"{source}: field 'evaluator.dataset.path' is required for format {ds.format!r}")
            if not Path(ds.path).exists():
                raise ConfigError(f"{source}: field 'evaluator.dataset.path': path does not exist: {ds.path}")
    return cfg


def load_config(path, check_paths: bool = True) -> AppConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    return parse_config(doc, str(path), check_paths)


def dumps_config(cfg: AppConfig) -> str:
    return json.dumps(cfg.to_json(), indent=2, sort_keys=False) + "\n"


def dump_config(cfg: AppConfig, path):
    Path(path).write_text(dumps_config(cfg), encoding="utf-8")
