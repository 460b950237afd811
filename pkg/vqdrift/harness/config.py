from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import yaml

from vqdrift.exception import InvalidConfig, InvalidInput
from vqdrift.streams import DEFAULT_N, DEFAULT_NOISE_SCALE, DEFAULT_OFFSET, DEFAULT_RATE, DriftKind
from vqdrift.transvq.projector import DEFAULT_MAX_GRAD_NORM, DEFAULT_RATIO, DESK_D_MODEL
from vqdrift.updaters import UpdateRule, parse_rule_kind

if TYPE_CHECKING:
    from collections.abc import Callable

    from yaml.error import Mark

CONFIG_VERSION = 1

DEFAULT_K = 16
DEFAULT_BATCH_SIZE = 32
DEFAULT_EPOCHS = 10
DEFAULT_SNAPSHOTS = 5
DEFAULT_PROJECTOR_LR = 1e-3


class CodebookInit(enum.Enum):
    NORMAL = "normal"
    LLOYD = "lloyd"
    KMEANS_PP = "kmeans++"


@dataclass(frozen=True)
class ExperimentConfig:
    """Run-level constants of one experiment.

    ``init`` selects the starting codebook: ``normal`` draws ``C ~ N(0, 1)``, ``lloyd`` runs Lloyd's algorithm on
    the undrifted base data and ``kmeans++`` uses k-means++ seeding only. ``d_model``, ``mlp_ratio``,
    ``projector_lr`` and ``max_grad_norm`` only apply to the ``transvq`` rule, for which ``rule.eta`` is unused.
    """

    process: DriftKind = DriftKind.TRANSLATION
    n: int = DEFAULT_N
    k: int = DEFAULT_K
    d: int = 2
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    rule: UpdateRule = field(default_factory=UpdateRule)
    seed: int = 0
    snapshots: int = DEFAULT_SNAPSHOTS
    rate: float = DEFAULT_RATE
    offset: float = DEFAULT_OFFSET
    noise_scale: float = DEFAULT_NOISE_SCALE
    shrink: bool = False
    init: CodebookInit = CodebookInit.NORMAL
    d_model: int = DESK_D_MODEL
    mlp_ratio: int = DEFAULT_RATIO
    projector_lr: float = DEFAULT_PROJECTOR_LR
    max_grad_norm: float | None = DEFAULT_MAX_GRAD_NORM

    def __post_init__(self):
        object.__setattr__(self, "process", DriftKind(self.process))
        object.__setattr__(self, "init", CodebookInit(self.init))

        for name in ("n", "k", "d", "batch_size", "snapshots", "d_model", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise InvalidInput(f"{name} must be at least 1")
        if self.epochs < 0:
            raise InvalidInput("epochs must be non-negative")
        if self.batch_size > self.n:
            raise InvalidInput(f"batch size {self.batch_size} exceeds dataset size {self.n}")
        if self.k > self.n:
            raise InvalidInput(f"cannot fit {self.k} codes to {self.n} points")
        if self.rate < 0.0:
            raise InvalidInput("rate must be non-negative")
        if self.noise_scale <= 0.0:
            raise InvalidInput("noise_scale must be positive")
        if self.projector_lr < 0.0:
            raise InvalidInput("projector_lr must be non-negative")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0.0:
            raise InvalidInput("max_grad_norm must be positive")

    @property
    def steps_per_epoch(self) -> int:
        """Number of batches per epoch; the last batch of an epoch may be short."""
        return -(-self.n // self.batch_size)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def replace(self, **changes: Any) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        values = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        values["process"] = self.process.value
        values["init"] = self.init.value
        values["rule"] = self.rule.to_dict()
        return values


# name -> ExperimentConfig overrides of the toy demos
DEMOS = {
    "translation": {"process": DriftKind.TRANSLATION},
    "expansion": {"process": DriftKind.SCALING},
    "shrink": {"process": DriftKind.SCALING, "shrink": True},
    "split": {"process": DriftKind.SPLIT},
}


def demo_config(name: str, **overrides: Any) -> ExperimentConfig:
    """Return the configuration of a toy demo with optional overrides."""
    if name not in DEMOS:
        raise InvalidInput(f"unknown demo: {name!r}, expected one of {', '.join(DEMOS)}")
    return ExperimentConfig(**{**DEMOS[name], **overrides})


# Batch size sweep preset: fewer samples and slower drift than the demos, so at an equal sample budget the number
# of updates per batch size decides how many codes survive the drift
SWEEP = {"n": 300, "epochs": 4, "rate": 0.02}


def sweep_config(name: str = "translation", **overrides: Any) -> ExperimentConfig:
    """Return the configuration a batch size sweep over the demo ``name`` starts from."""
    return demo_config(name, **{**SWEEP, **overrides})


def _as_int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"expected an integer, got {value!r}")
    return value


def _as_float(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"expected a number, got {value!r}")
    return float(value)


def _as_bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"expected true or false, got {value!r}")
    return value


def _as_optional_int(value: Any) -> int | None:
    return None if value is None else _as_int(value)


def _as_optional_float(value: Any) -> float | None:
    return None if value is None else _as_float(value)


_EXPERIMENT_FIELDS: dict[str, Callable[[Any], Any]] = {
    "process": DriftKind,
    "n": _as_int,
    "k": _as_int,
    "d": _as_int,
    "batch_size": _as_int,
    "epochs": _as_int,
    "seed": _as_int,
    "snapshots": _as_int,
    "rate": _as_float,
    "offset": _as_float,
    "noise_scale": _as_float,
    "shrink": _as_bool,
    "init": CodebookInit,
    "d_model": _as_int,
    "mlp_ratio": _as_int,
    "projector_lr": _as_float,
    "max_grad_norm": _as_optional_float,
}

_RULE_FIELDS: dict[str, Callable[[Any], Any]] = {
    "kind": parse_rule_kind,
    "eta": _as_float,
    "alpha": _as_float,
    "tau": _as_float,
    "two_sigma_sq": _as_float,
    "lam": _as_float,
    "d_eff": _as_optional_int,
    "lr_decay": _as_float,
    "tau_decay": _as_float,
    "sigma_decay": _as_float,
}


def _where(path: Path | str, mark: Mark | None) -> str:
    if mark is None:
        return str(path)
    return f"{path}:{mark.line + 1}:{mark.column + 1}"


def _key_marks(node: yaml.Node) -> dict[tuple[str, ...], Mark]:
    """Map every top-level key and every key of the ``rule`` mapping to its position in the source."""
    marks = {}
    if not isinstance(node, yaml.MappingNode):
        return marks

    for key_node, value_node in node.value:
        marks[(key_node.value,)] = key_node.start_mark
        if key_node.value == "rule" and isinstance(value_node, yaml.MappingNode):
            for sub_key, _ in value_node.value:
                marks[("rule", sub_key.value)] = sub_key.start_mark
    return marks


def _coerce(
    values: dict[str, Any],
    fields: dict[str, Callable[[Any], Any]],
    prefix: tuple[str, ...],
    marks: dict[tuple[str, ...], Mark],
    path: Path | str,
) -> dict[str, Any]:
    result = {}
    for key, value in values.items():
        mark = marks.get((*prefix, str(key)))
        if key not in fields:
            raise InvalidConfig(f"{_where(path, mark)}: unknown key {'.'.join((*prefix, str(key)))!r}")
        try:
            result[key] = fields[key](value)
        except (ValueError, TypeError, InvalidInput) as e:
            raise InvalidConfig(f"{_where(path, mark)}: invalid value for {'.'.join((*prefix, str(key)))!r}: {e}")
    return result


def parse_config(text: str, base: ExperimentConfig | None = None, path: Path | str = "<config>") -> ExperimentConfig:
    """Parse a YAML experiment configuration and apply it on top of ``base``.

    The document must be a mapping with ``version: 1``. Other top-level keys are :class:`ExperimentConfig` fields;
    the nested ``rule`` mapping holds :class:`~vqdrift.updaters.UpdateRule` fields.

    Raises:
        InvalidConfig: On a parse error, a schema version mismatch, an unknown key or an invalid value. The
                       message starts with ``path:line:column`` where the position is known.
    """
    base = base or ExperimentConfig()

    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        raise InvalidConfig(f"{_where(path, e.problem_mark)}: {e.problem}")
    except yaml.YAMLError as e:
        raise InvalidConfig(f"{path}: {e}")

    if not isinstance(data, dict):
        raise InvalidConfig(f"{_where(path, node.start_mark if node else None)}: expected a mapping at the top level")

    marks = _key_marks(node)
    data = dict(data)

    version = data.pop("version", None)
    if version != CONFIG_VERSION:
        mark = marks.get(("version",), node.start_mark)
        raise InvalidConfig(f"{_where(path, mark)}: unsupported config version {version!r}, expected {CONFIG_VERSION}")

    rule_values = data.pop("rule", None) or {}
    if not isinstance(rule_values, dict):
        raise InvalidConfig(f"{_where(path, marks.get(('rule',)))}: 'rule' must be a mapping")

    changes = _coerce(data, _EXPERIMENT_FIELDS, (), marks, path)
    rule_changes = _coerce(rule_values, _RULE_FIELDS, ("rule",), marks, path)

    try:
        if rule_changes:
            changes["rule"] = base.rule.replace(**rule_changes)
        return base.replace(**changes)
    except InvalidInput as e:
        raise InvalidConfig(f"{path}: {e}")


def load_config(path: Path | str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Load a YAML experiment configuration file; see :func:`parse_config`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise InvalidConfig(f"{path}: cannot read config file: {e.strerror}")
    return parse_config(text, base, path)


def dump_config(config: ExperimentConfig) -> str:
    """Serialise ``config`` to YAML that :func:`parse_config` reads back."""
    values = {"version": CONFIG_VERSION, **config.to_dict()}
    return yaml.safe_dump(values, sort_keys=False)
