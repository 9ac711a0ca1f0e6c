"""Experiment configuration: parsing, validation, defaults, serialization.

Grammar: sections in brackets, ``key = value`` lines, lists comma-separated,
``#`` starts a comment. Unknown sections or keys are errors with line
context. Defaults follow the published hyperparameter tables; method-specific
values are injected according to [method] name. parse(serialize(c)) == c.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .adversarial import AdvConfig
from .data import MoonsGeometry
from .objectives import METHODS, MethodConfig
from .transforms import FAMILIES, TransformSpec

__all__ = [
    "ConfigError",
    "DatasetConfig",
    "TrainingConfig",
    "ExperimentConfig",
    "parse_config",
    "parse_config_text",
    "serialize_config",
    "set_config_value",
    "expand_sweep",
]

# per-method defaults: (base_lr, lambda_max, entropy_weight)
_METHOD_DEFAULTS = {
    "supervised": (0.003, 0.0, 0.0),
    "pi_model": (0.0003, 20.0, 0.0),
    "mean_teacher": (0.0004, 8.0, 0.0),
    "pseudo_label": (0.003, 1.0, 0.0),
    "vat": (0.003, 0.3, 0.06),
    "rat": (0.003, 0.3, 0.06),
    "random_transform": (0.003, 0.3, 0.06),
}

# default epsilon per transform family (noise comes from the shared table)
_FAMILY_EPS_DEFAULTS = {
    "noise": 6.0,
    "affine": 0.6,
    "tps": 1.0,
    "flow": 0.01,
    "channel": 0.001,
    "rotation": 10.0,
}

_PREPROCESSING_STEPS = ("gcn", "zca")


class ConfigError(ValueError):
    """Malformed configuration: carries key and line context."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "moons"
    # moons
    n_labeled_per_class: int = 10
    n_unlabeled_per_class: int = 30
    n_validation_per_class: int = 100
    n_test_per_class: int = 1000
    noise_sigma: float = 0.1
    augment_sigma: float = 0.1
    radius: float = 1.0
    center_0: tuple = (0.0, 0.0)
    center_1: tuple = (1.0, 0.5)
    angles_0: tuple = (0.0, 180.0)
    angles_1: tuple = (180.0, 360.0)
    # image
    x_path: str = ""
    y_path: str = ""
    channels: int = 1
    height: int = 8
    width: int = 8
    n_labeled: int = 100
    n_validation: int = 200
    n_test: int = 500
    preprocessing: tuple = ()
    augment_policy: str = "none"

    def geometry(self):
        return MoonsGeometry(
            centers=(self.center_0, self.center_1),
            radius=self.radius,
            angle_ranges_deg=(self.angles_0, self.angles_1),
            noise_sigma=self.noise_sigma,
        )

    @property
    def input_shape(self):
        if self.kind == "moons":
            return (2,)
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class TrainingConfig:
    iterations: int = 500
    batch_labeled: int = 0  # 0 = full batch
    batch_unlabeled: int = 0
    base_lr: float = 0.003
    lr_decay_factor: float = 0.2
    lr_decay_fraction: float = 0.8
    eval_every: int = 0  # 0 = iterations // 20

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    method: MethodConfig
    adversarial: AdvConfig
    transforms: tuple
    training: TrainingConfig
    seeds: tuple
    out_dir: str = "runs/experiment"


class _Section:
    """Typed key consumption with line-numbered errors."""

    def __init__(self, name, entries):
        self.name = name
        self.entries = dict(entries)

    def _take(self, key):
        return self.entries.pop(key, None)

    def get_str(self, key, default, choices=None):
        item = self._take(key)
        value = default if item is None else item[0]
        if choices is not None and value not in choices:
            where = f" (line {item[1]})" if item else ""
            raise ConfigError(
                f"{self.name}.{key}: expected one of {sorted(choices)}, "
                f"got '{value}'{where}"
            )
        return value

    def _parse(self, key, item, caster, kind):
        try:
            return caster(item[0])
        except ValueError:
            raise ConfigError(
                f"{self.name}.{key}: expected {kind}, got '{item[0]}' (line {item[1]})"
            ) from None

    def get_float(self, key, default):
        item = self._take(key)
        return default if item is None else self._parse(key, item, float, "a number")

    def get_int(self, key, default):
        item = self._take(key)
        return default if item is None else self._parse(key, item, int, "an integer")

    def get_list(self, key, default, caster=str):
        item = self._take(key)
        if item is None:
            return default
        raw = [p.strip() for p in item[0].split(",") if p.strip()]
        return tuple(self._parse(key, (p, item[1]), caster, "a list entry") for p in raw)

    def get_pair(self, key, default):
        values = self.get_list(key, None, float)
        if values is None:
            return default
        if len(values) != 2:
            raise ConfigError(f"{self.name}.{key}: expected two comma-separated numbers")
        return values

    def finish(self):
        if self.entries:
            key, (_, line) = next(iter(self.entries.items()))
            raise ConfigError(f"unknown key '{self.name}.{key}' (line {line})")


def _read_sections(text):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name in sections:
                raise ConfigError(f"duplicate section [{name}] (line {lineno})")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value' (line {lineno})")
        if current is None:
            raise ConfigError(f"key outside any section (line {lineno})")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in current:
            raise ConfigError(f"duplicate key '{key}' (line {lineno})")
        current[key] = (value, lineno)
    return sections


def _build_dataset(section):
    kind = section.get_str("kind", "moons", choices=("moons", "image"))
    cfg = DatasetConfig(
        kind=kind,
        n_labeled_per_class=section.get_int("n_labeled_per_class", 10),
        n_unlabeled_per_class=section.get_int("n_unlabeled_per_class", 30),
        n_validation_per_class=section.get_int("n_validation_per_class", 100),
        n_test_per_class=section.get_int("n_test_per_class", 1000),
        noise_sigma=section.get_float("noise_sigma", 0.1),
        augment_sigma=section.get_float("augment_sigma", 0.1),
        radius=section.get_float("radius", 1.0),
        center_0=section.get_pair("center_0", (0.0, 0.0)),
        center_1=section.get_pair("center_1", (1.0, 0.5)),
        angles_0=section.get_pair("angles_0", (0.0, 180.0)),
        angles_1=section.get_pair("angles_1", (180.0, 360.0)),
        x_path=section.get_str("x_path", ""),
        y_path=section.get_str("y_path", ""),
        channels=section.get_int("channels", 1),
        height=section.get_int("height", 8),
        width=section.get_int("width", 8),
        n_labeled=section.get_int("n_labeled", 100),
        n_validation=section.get_int("n_validation", 200),
        n_test=section.get_int("n_test", 500),
        preprocessing=section.get_list("preprocessing", ()),
        augment_policy=section.get_str(
            "augment_policy", "none", choices=("none", "cifar_like", "svhn_like")
        ),
    )
    for step in cfg.preprocessing:
        if step not in _PREPROCESSING_STEPS:
            raise ConfigError(f"dataset.preprocessing: unknown step '{step}'")
    if kind == "image" and not cfg.x_path:
        raise ConfigError("dataset.x_path is required for image datasets")
    section.finish()
    return cfg


def _build_method(section, iterations):
    name = section.get_str("name", "rat", choices=METHODS)
    lr_default, lambda_default, entropy_default = _METHOD_DEFAULTS[name]
    rampup_default = 0 if name == "supervised" else round(0.4 * iterations)
    cfg = MethodConfig(
        method=name,
        lambda_max=section.get_float("lambda_max", lambda_default),
        lambda_rampup_horizon=section.get_int("lambda_rampup_horizon", rampup_default),
        entropy_weight=section.get_float("entropy_weight", entropy_default),
        pseudo_label_threshold=section.get_float("pseudo_label_threshold", 0.95),
        ema_decay=section.get_float("ema_decay", 0.95),
    )
    section.finish()
    return cfg, lr_default


def _default_transforms(method, dataset):
    if method == "vat":
        families = [("noise", 6.0)]
    elif method in ("rat", "random_transform"):
        if dataset.kind == "moons":
            families = [("rotation", 10.0), ("noise", 0.3)]
        else:
            families = [("noise", 6.0), ("affine", 0.6)]
    else:
        return ()
    return tuple(
        _make_spec(family, eps, dataset, grid_size=4) for family, eps in families
    )


def _make_spec(family, epsilon, dataset, grid_size, context="transform"):
    if family not in FAMILIES:
        raise ConfigError(f"{context}.family: unknown family '{family}'")
    if family == "rotation" and dataset.kind != "moons":
        raise ConfigError(f"{context}: rotation applies to the moons dataset only")
    if family in ("affine", "tps", "flow", "channel") and dataset.kind != "image":
        raise ConfigError(f"{context}: {family} requires an image dataset")
    kwargs = {}
    if family == "rotation":
        kwargs["class_centers"] = (dataset.center_0, dataset.center_1)
        shape = (2,)
    else:
        shape = dataset.input_shape
    try:
        return TransformSpec(family, epsilon, shape, grid_size=grid_size, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from None


def _build_transforms(sections, method, dataset):
    numbered = []
    for name in sections:
        if not name.startswith("transform."):
            continue
        suffix = name.split(".", 1)[1]
        try:
            numbered.append((int(suffix), name))
        except ValueError:
            raise ConfigError(f"bad transform section [{name}]") from None
    if not numbered:
        return _default_transforms(method, dataset)
    numbered.sort()
    specs = []
    for _, name in numbered:
        section = _Section(name, sections[name])
        family = section.get_str("family", None)
        if family is None:
            raise ConfigError(f"{name}.family is required")
        eps = section.get_float("epsilon", _FAMILY_EPS_DEFAULTS.get(family, 1.0))
        grid_size = section.get_int("grid_size", 4)
        specs.append(_make_spec(family, eps, dataset, grid_size, context=name))
        section.finish()
    return tuple(specs)


def parse_config_text(text):
    sections = _read_sections(text)
    known = {"dataset", "method", "adversarial", "training", "trials", "output"}
    for name in sections:
        if name not in known and not name.startswith("transform."):
            raise ConfigError(f"unknown section [{name}]")

    dataset = _build_dataset(_Section("dataset", sections.get("dataset", {})))

    training_section = _Section("training", sections.get("training", {}))
    iterations_default = 500 if dataset.kind == "moons" else 10000
    batch_default = 0 if dataset.kind == "moons" else 64
    iterations = training_section.get_int("iterations", iterations_default)
    if iterations <= 0:
        raise ConfigError("training.iterations must be positive")
    method, lr_default = _build_method(
        _Section("method", sections.get("method", {})), iterations
    )
    training = TrainingConfig(
        iterations=iterations,
        batch_labeled=training_section.get_int("batch_labeled", batch_default),
        batch_unlabeled=training_section.get_int("batch_unlabeled", batch_default),
        base_lr=training_section.get_float("base_lr", lr_default),
        lr_decay_factor=training_section.get_float("lr_decay_factor", 0.2),
        lr_decay_fraction=training_section.get_float("lr_decay_fraction", 0.8),
        eval_every=training_section.get_int("eval_every", 0),
    )
    training_section.finish()

    adv_section = _Section("adversarial", sections.get("adversarial", {}))
    try:
        adversarial = AdvConfig(
            xi=adv_section.get_float("xi", 1e-6),
            power_iterations=adv_section.get_int("power_iterations", 1),
            rampup_horizon=adv_section.get_int("rampup_horizon", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"adversarial: {exc}") from None
    adv_section.finish()

    transforms = _build_transforms(sections, method.method, dataset)
    if method.method == "vat":
        if len(transforms) != 1 or transforms[0].family != "noise":
            raise ConfigError("vat expects exactly one noise transform")

    trials = _Section("trials", sections.get("trials", {}))
    seeds = trials.get_list("seeds", (0, 1, 2, 3, 4), int)
    if not seeds:
        raise ConfigError("trials.seeds must not be empty")
    trials.finish()

    output = _Section("output", sections.get("output", {}))
    out_dir = output.get_str("dir", "runs/experiment")
    output.finish()

    return ExperimentConfig(
        dataset=dataset,
        method=method,
        adversarial=adversarial,
        transforms=transforms,
        training=training,
        seeds=tuple(seeds),
        out_dir=out_dir,
    )


def parse_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    return parse_config_text(text)


def _fmt(value):
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config):
    """Canonical text form; parsing it reproduces the config exactly."""
    d, m, a, tr = config.dataset, config.method, config.adversarial, config.training
    lines = ["[dataset]"]
    lines.append(f"kind = {d.kind}")
    if d.kind == "moons":
        for key in (
            "n_labeled_per_class", "n_unlabeled_per_class",
            "n_validation_per_class", "n_test_per_class",
            "noise_sigma", "augment_sigma", "radius",
            "center_0", "center_1", "angles_0", "angles_1",
        ):
            lines.append(f"{key} = {_fmt(getattr(d, key))}")
    else:
        for key in (
            "x_path", "y_path", "channels", "height", "width",
            "n_labeled", "n_validation", "n_test", "augment_policy",
        ):
            lines.append(f"{key} = {_fmt(getattr(d, key))}")
        if d.preprocessing:
            lines.append(f"preprocessing = {_fmt(d.preprocessing)}")
    lines += [
        "",
        "[method]",
        f"name = {m.method}",
        f"lambda_max = {_fmt(m.lambda_max)}",
        f"lambda_rampup_horizon = {m.lambda_rampup_horizon}",
        f"entropy_weight = {_fmt(m.entropy_weight)}",
        f"pseudo_label_threshold = {_fmt(m.pseudo_label_threshold)}",
        f"ema_decay = {_fmt(m.ema_decay)}",
        "",
        "[adversarial]",
        f"xi = {_fmt(a.xi)}",
        f"power_iterations = {a.power_iterations}",
        f"rampup_horizon = {a.rampup_horizon}",
    ]
    for i, spec in enumerate(config.transforms, 1):
        lines += ["", f"[transform.{i}]", f"family = {spec.family}",
                  f"epsilon = {_fmt(spec.epsilon_max)}"]
        if spec.family == "tps":
            lines.append(f"grid_size = {spec.grid_size}")
    lines += [
        "",
        "[training]",
        f"iterations = {tr.iterations}",
        f"batch_labeled = {tr.batch_labeled}",
        f"batch_unlabeled = {tr.batch_unlabeled}",
        f"base_lr = {_fmt(tr.base_lr)}",
        f"lr_decay_factor = {_fmt(tr.lr_decay_factor)}",
        f"lr_decay_fraction = {_fmt(tr.lr_decay_fraction)}",
        f"eval_every = {tr.eval_every}",
        "",
        "[trials]",
        f"seeds = {_fmt(config.seeds)}",
        "",
        "[output]",
        f"dir = {config.out_dir}",
        "",
    ]
    return "\n".join(lines)


def set_config_value(config, path, value):
    """Return a copy with one numeric leaf replaced, addressed by dotted path.

    Paths: method.<field>, adversarial.<field>, training.<field>,
    dataset.<field>, transform.<n>.epsilon.
    """
    parts = path.split(".")
    if len(parts) == 3 and parts[0] == "transform" and parts[2] == "epsilon":
        index = int(parts[1]) - 1
        if not 0 <= index < len(config.transforms):
            raise ConfigError(f"no transform section {parts[1]}")
        specs = list(config.transforms)
        specs[index] = dataclasses.replace(specs[index], epsilon_max=float(value))
        return dataclasses.replace(config, transforms=tuple(specs))
    if len(parts) != 2:
        raise ConfigError(f"bad parameter path '{path}'")
    block, field = parts
    holders = {
        "method": config.method,
        "adversarial": config.adversarial,
        "training": config.training,
        "dataset": config.dataset,
    }
    if block not in holders:
        raise ConfigError(f"bad parameter path '{path}'")
    holder = holders[block]
    if not hasattr(holder, field):
        raise ConfigError(f"no such config field '{path}'")
    current = getattr(holder, field)
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ConfigError(f"'{path}' is not a numeric leaf")
    if isinstance(current, int):
        if float(value) != int(float(value)):
            raise ConfigError(f"'{path}' takes integer values")
        value = int(float(value))
    else:
        value = float(value)
    return dataclasses.replace(config, **{block: dataclasses.replace(holder, **{field: value})})


def expand_sweep(values_arg):
    """Parse sweep values: 'a,b,c' or 'start:stop:step' (inclusive ends)."""
    if ":" in values_arg:
        parts = values_arg.split(":")
        if len(parts) != 3:
            raise ConfigError("range sweep needs start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ConfigError("range sweep needs stop >= start and step > 0")
        count = int(round((stop - start) / step)) + 1
        return [start + k * step for k in range(count)]
    values = [float(p) for p in values_arg.split(",") if p.strip()]
    if not values:
        raise ConfigError("empty sweep values")
    return values
