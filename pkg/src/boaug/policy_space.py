"""Continuous policy search space and its decoding into augmentation policies.

A policy is a flat vector of ``5 * k`` reals (``k = 3`` sub-policies by
default). Each 5-block reads ``[opers, prob1, mag1, prob2, mag2]``:

* ``opers`` in [0, 196] selects an ordered pair of operations,
  ``floor(opers) -> (k // 14, k % 14)``;
* ``prob*`` in [0, 1] are application probabilities;
* ``mag*`` in [0, 9] are normalised magnitudes, mapped linearly onto the
  operation's actual range.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import jsonschema
import numpy as np

from .errors import ConfigError, DomainError, PolicySchemaError

N_OPS = 14
N_PAIRS = N_OPS * N_OPS
BLOCK = 5
SUB_POLICIES = 3
OPERS_MAX = float(N_PAIRS)
MAG_MAX = 9.0
BLOCK_UPPER = np.array([OPERS_MAX, 1.0, MAG_MAX, 1.0, MAG_MAX])
FIELD_NAMES = ("opers", "prob1", "mag1", "prob2", "mag2")


class Op(enum.IntEnum):
    ShearX = 0
    ShearY = 1
    TranslateX = 2
    TranslateY = 3
    Rotate = 4
    Solarize = 5
    Posterize = 6
    Contrast = 7
    Color = 8
    Brightness = 9
    Sharpness = 10
    AutoContrast = 11
    Invert = 12
    Equalize = 13

    @property
    def magnitude_free(self) -> bool:
        return self in MAGNITUDE_FREE

    @classmethod
    def from_name(cls, name: str) -> "Op":
        try:
            return cls[name]
        except KeyError:
            raise DomainError(f"unknown operation name {name!r}") from None


MAGNITUDE_FREE = frozenset({Op.AutoContrast, Op.Invert, Op.Equalize})


@dataclass(frozen=True)
class MagnitudeRange:
    op: Op
    lo: float
    hi: float
    integer_valued: bool = False

    def __post_init__(self):
        if self.op in MAGNITUDE_FREE:
            raise DomainError(f"{self.op.name} takes no magnitude")
        if not self.lo < self.hi:
            raise DomainError(f"{self.op.name}: need lo < hi, got [{self.lo}, {self.hi}]")


def _table(overrides: Mapping[Op, tuple] = {}) -> dict[Op, MagnitudeRange]:
    base = {
        Op.ShearX: (-0.3, 0.3),
        Op.ShearY: (-0.3, 0.3),
        Op.TranslateX: (-150.0, 150.0),
        Op.TranslateY: (-150.0, 150.0),
        Op.Rotate: (-30.0, 30.0),
        Op.Solarize: (0.0, 256.0),
        Op.Posterize: (4.0, 8.0),
        Op.Contrast: (0.1, 1.9),
        Op.Color: (0.1, 1.9),
        Op.Brightness: (0.1, 1.9),
        Op.Sharpness: (0.1, 1.9),
    }
    base.update(overrides)
    return {op: MagnitudeRange(op, float(lo), float(hi), integer_valued=(op is Op.Posterize))
            for op, (lo, hi) in base.items()}


DEFAULT_RANGES = _table()
# Translations of +-150 px blank a 32x32 image; the small-image table caps them.
CIFAR_RANGES = _table({Op.TranslateX: (-10.0, 10.0), Op.TranslateY: (-10.0, 10.0)})

RANGE_TABLES = {"default": DEFAULT_RANGES, "cifar": CIFAR_RANGES, "svhn": CIFAR_RANGES}


def ranges_from_spec(spec) -> dict[Op, MagnitudeRange]:
    """Build a range table from a table name or a ``{"base": name, "<Op>": [lo, hi]}`` mapping."""
    if spec is None:
        return DEFAULT_RANGES
    if isinstance(spec, str):
        try:
            return RANGE_TABLES[spec]
        except KeyError:
            raise DomainError(f"unknown magnitude-range table {spec!r}; "
                              f"choose from {sorted(RANGE_TABLES)}") from None
    spec = dict(spec)
    base = ranges_from_spec(spec.pop("base", "default"))
    overrides = {op: (r.lo, r.hi) for op, r in base.items()}
    for name, bounds in spec.items():
        op = Op.from_name(name)
        lo, hi = bounds
        overrides[op] = (lo, hi)
    return _table(overrides)


def ranges_to_spec(ranges: Mapping[Op, MagnitudeRange]) -> dict:
    return {op.name: [r.lo, r.hi] for op, r in sorted(ranges.items())}


# --------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------

def decode_opers(opers: float, dimension: int | str = "opers") -> tuple[Op, Op]:
    opers = float(opers)
    if not (0.0 <= opers <= OPERS_MAX):
        raise DomainError(f"dimension {dimension}: opers={opers!r} outside [0, {OPERS_MAX:g}]")
    k = min(int(math.floor(opers)), N_PAIRS - 1)
    return Op(k // N_OPS), Op(k % N_OPS)


def _round_half_away(x: float) -> float:
    return math.copysign(math.floor(abs(x) + 0.5), x)


def denormalize_magnitude(op: Op, m: float, ranges: Mapping[Op, MagnitudeRange] = DEFAULT_RANGES) -> float:
    op = Op(op)
    if op in MAGNITUDE_FREE:
        raise DomainError(f"{op.name} is magnitude-free")
    m = float(m)
    if not (0.0 <= m <= MAG_MAX):
        raise DomainError(f"magnitude {m!r} for {op.name} outside [0, {MAG_MAX:g}]")
    r = ranges[op]
    value = r.lo + (m / MAG_MAX) * (r.hi - r.lo)
    if r.integer_valued:
        value = _round_half_away(value)
    return value


def normalize_magnitude(op: Op, value: float, ranges: Mapping[Op, MagnitudeRange] = DEFAULT_RANGES) -> float:
    """Inverse of :func:`denormalize_magnitude` (up to its rounding)."""
    r = ranges[Op(op)]
    return float(np.clip((value - r.lo) / (r.hi - r.lo) * MAG_MAX, 0.0, MAG_MAX))


@dataclass(frozen=True)
class SubPolicy:
    op1: Op
    prob1: float
    mag1: float | None
    op2: Op
    prob2: float
    mag2: float | None

    def steps(self):
        return ((self.op1, self.prob1, self.mag1), (self.op2, self.prob2, self.mag2))

    def __str__(self):
        def fmt(op, p, m):
            return f"({op.name}, {p:.4f}, {'-' if m is None else f'{m:.4g}'})"
        return " -> ".join(fmt(*s) for s in self.steps())


@dataclass(frozen=True)
class Policy:
    sub_policies: tuple[SubPolicy, ...]


def policy_bounds(n_sub: int = SUB_POLICIES) -> np.ndarray:
    """Upper corner of the search box (the lower corner is the origin)."""
    return np.tile(BLOCK_UPPER, n_sub)


def clamp_policy(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0 or v.size % BLOCK:
        raise DomainError(f"policy vector must be 1-d with a multiple of {BLOCK} entries, got shape {v.shape}")
    v = np.where(np.isnan(v), 0.0, v)
    return np.clip(v, 0.0, policy_bounds(v.size // BLOCK))


def decode_sub_policy(block, ranges: Mapping[Op, MagnitudeRange] = DEFAULT_RANGES,
                      offset: int = 0) -> SubPolicy:
    opers, p1, m1, p2, m2 = (float(t) for t in block)
    op1, op2 = decode_opers(opers, dimension=offset)
    mag1 = None if op1 in MAGNITUDE_FREE else denormalize_magnitude(op1, m1, ranges)
    mag2 = None if op2 in MAGNITUDE_FREE else denormalize_magnitude(op2, m2, ranges)
    return SubPolicy(op1, p1, mag1, op2, p2, mag2)


def decode_policy(v, ranges: Mapping[Op, MagnitudeRange] = DEFAULT_RANGES) -> Policy:
    """Clamp ``v`` into the search box and decode every 5-block."""
    v = clamp_policy(v)
    subs = tuple(decode_sub_policy(v[i:i + BLOCK], ranges, offset=i) for i in range(0, v.size, BLOCK))
    return Policy(subs)


def encode_policy(policy: Policy, ranges: Mapping[Op, MagnitudeRange] = DEFAULT_RANGES) -> np.ndarray:
    """A search vector that decodes back to ``policy``.

    ``opers`` lands on the integer of its Table-9 row and dead magnitude
    slots are zero.
    """
    out = []
    for sp in policy.sub_policies:
        m1 = 0.0 if sp.mag1 is None else normalize_magnitude(sp.op1, sp.mag1, ranges)
        m2 = 0.0 if sp.mag2 is None else normalize_magnitude(sp.op2, sp.mag2, ranges)
        out.extend([float(int(sp.op1) * N_OPS + int(sp.op2)), sp.prob1, m1, sp.prob2, m2])
    return np.asarray(out, dtype=np.float64)


def pooled_sub_policies(policies: Iterable[Policy]) -> list[SubPolicy]:
    return [sp for p in policies for sp in p.sub_policies]


# --------------------------------------------------------------------------
# Policy JSON
# --------------------------------------------------------------------------

_OP_NAMES = [op.name for op in Op]
_SUB_SCHEMA = {
    "type": "object",
    "required": ["op1", "p1", "m1", "op2", "p2", "m2"],
    "properties": {
        "op1": {"enum": _OP_NAMES},
        "op2": {"enum": _OP_NAMES},
        "p1": {"type": "number", "minimum": 0, "maximum": 1},
        "p2": {"type": "number", "minimum": 0, "maximum": 1},
        "m1": {"type": ["number", "null"]},
        "m2": {"type": ["number", "null"]},
    },
}
POLICY_SCHEMA = {
    "type": "object",
    "required": ["sub_policies"],
    "properties": {"sub_policies": {"type": "array", "minItems": 1, "items": _SUB_SCHEMA}},
}
POLICY_SET_SCHEMA = {
    "type": "object",
    "required": ["policies"],
    "properties": {"policies": {"type": "array", "items": POLICY_SCHEMA}},
}


def sub_policy_to_json(sp: SubPolicy) -> dict:
    return {"op1": sp.op1.name, "p1": sp.prob1, "m1": sp.mag1,
            "op2": sp.op2.name, "p2": sp.prob2, "m2": sp.mag2}


def policy_to_json(policy: Policy) -> dict:
    return {"sub_policies": [sub_policy_to_json(sp) for sp in policy.sub_policies]}


def policies_to_json(policies: Sequence[Policy]) -> dict:
    return {"policies": [policy_to_json(p) for p in policies]}


def _schema_path(err: jsonschema.ValidationError) -> str:
    path = "$"
    for part in err.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def _check_magnitudes(doc: dict, where: str):
    for i, sp in enumerate(doc["sub_policies"]):
        for k in ("1", "2"):
            op = Op[sp["op" + k]]
            if (sp["m" + k] is None) != (op in MAGNITUDE_FREE):
                raise PolicySchemaError(
                    f"{where}.sub_policies[{i}].m{k}: "
                    + ("must be null for magnitude-free " if op in MAGNITUDE_FREE else "missing magnitude for ")
                    + op.name)


def policies_from_json(doc) -> list[Policy]:
    try:
        jsonschema.validate(doc, POLICY_SET_SCHEMA)
    except jsonschema.ValidationError as err:
        raise PolicySchemaError(f"{_schema_path(err)}: {err.message}") from None
    out = []
    for i, p in enumerate(doc["policies"]):
        _check_magnitudes(p, f"$.policies[{i}]")
        out.append(policy_from_json(p))
    return out


def policy_from_json(doc) -> Policy:
    try:
        jsonschema.validate(doc, POLICY_SCHEMA)
    except jsonschema.ValidationError as err:
        raise PolicySchemaError(f"{_schema_path(err)}: {err.message}") from None
    _check_magnitudes(doc, "$")
    subs = []
    for sp in doc["sub_policies"]:
        subs.append(SubPolicy(
            Op[sp["op1"]], float(sp["p1"]), None if sp["m1"] is None else float(sp["m1"]),
            Op[sp["op2"]], float(sp["p2"]), None if sp["m2"] is None else float(sp["m2"])))
    return Policy(tuple(subs))


def save_policies(path, policies: Sequence[Policy]):
    # json writes floats with repr(), i.e. shortest round-tripping form (<= 17 sig. digits)
    Path(path).write_text(json.dumps(policies_to_json(policies), indent=2) + "\n")


def load_policies(path) -> list[Policy]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read policy file {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise PolicySchemaError(f"{path}: not valid JSON ({err})") from None
    return policies_from_json(doc)
