"""Plain-text experiment configuration.

The file format is key=value lines, either flat dotted keys or grouped
under [section] headers (dotted keys stay absolute inside a section; bare
keys such as ``seed`` go before the first header)::

    seed = 7
    [grid]
    n = 40
    Nc = 5

    time.N = 50

Unknown keys are rejected so typos fail loudly.  ``ExperimentConfig`` holds
the resolved values with per-example defaults filled in.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .sources import (
    EXAMPLE_BOUNDS,
    EXAMPLE_FINAL_TIME,
    EXAMPLE_NONLINEAR,
    EXAMPLE_PARAM_COUNT,
)


class ConfigError(ValueError):
    """Raised for unparsable or inconsistent configuration input."""


def parse_config_text(text: str) -> dict[str, str]:
    """Key=value lines with optional [section] grouping -> flat dotted map."""
    values: dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError(f"line {lineno}: empty section name")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        # dotted keys are absolute; bare keys belong to the current section
        full = f"{section}.{key}" if section and "." not in key else key
        if full in values:
            raise ConfigError(f"line {lineno}: duplicate key {full!r}")
        values[full] = value
    return values


def load_config_file(path) -> "ExperimentConfig":
    with open(path) as fh:
        return ExperimentConfig.from_mapping(parse_config_text(fh.read()))


@dataclass
class ExperimentConfig:
    """Resolved settings of one experiment run."""

    example_id: int = 1
    # grid
    n: int = 40
    Nc: int = 5
    # spaces
    aux_per_element: int = 3
    second_per_element: int = 1
    layers: int = 3
    kappa_rule: str = "h2"
    # field
    background: float = 1.0
    contrast: float = 1.0e4
    field_path: str | None = None
    # time
    final_time: float | None = None   # defaults to the example's horizon
    nsteps: int = 50
    # initial condition
    u0_amplitude: float = 1.0
    # reduction
    pod_retain: int | None = None
    pod_energy_tol: float | None = None
    # training
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 4000
    hidden: tuple[int, ...] = (64, 64, 64, 64)
    # sampling
    train_samples: int = 200
    test_samples: int = 100
    # scheme options
    picard: bool = False
    history_mode: str = "predicted"
    seed: int = 0

    _KEYMAP = {
        "example.id": ("example_id", int),
        "grid.n": ("n", int),
        "grid.Nc": ("Nc", int),
        "spaces.L": ("aux_per_element", int),
        "spaces.J": ("second_per_element", int),
        "spaces.layers": ("layers", int),
        "spaces.kappa_rule": ("kappa_rule", str),
        "field.background": ("background", float),
        "field.contrast": ("contrast", float),
        "field.path": ("field_path", str),
        "time.T": ("final_time", float),
        "time.N": ("nsteps", int),
        "initial.amplitude": ("u0_amplitude", float),
        "pod.l": ("pod_retain", int),
        "pod.energy_tol": ("pod_energy_tol", float),
        "train.lr": ("learning_rate", float),
        "train.beta1": ("beta1", float),
        "train.beta2": ("beta2", float),
        "train.eps": ("eps", float),
        "train.batch": ("batch_size", int),
        "train.epochs": ("epochs", int),
        "train.hidden": ("hidden", "int_tuple"),
        "samples.train": ("train_samples", int),
        "samples.test": ("test_samples", int),
        "scheme.picard": ("picard", "bool"),
        "scheme.history": ("history_mode", str),
        "seed": ("seed", int),
    }

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ExperimentConfig":
        kwargs = {}
        for key, raw in mapping.items():
            if key not in cls._KEYMAP:
                raise ConfigError(f"unknown configuration key {key!r}")
            name, kind = cls._KEYMAP[key]
            try:
                if kind == "bool":
                    if raw.lower() not in ("true", "false", "0", "1"):
                        raise ValueError(raw)
                    kwargs[name] = raw.lower() in ("true", "1")
                elif kind == "int_tuple":
                    kwargs[name] = tuple(int(v) for v in raw.split(",") if v.strip())
                else:
                    kwargs[name] = kind(raw)
            except ValueError as exc:
                raise ConfigError(f"cannot parse {key}={raw!r}") from exc
        return cls(**kwargs).validate()

    def validate(self) -> "ExperimentConfig":
        if self.example_id not in EXAMPLE_PARAM_COUNT:
            raise ConfigError(f"unknown example id {self.example_id}")
        if self.final_time is None:
            self.final_time = EXAMPLE_FINAL_TIME[self.example_id]
        if self.pod_retain is None and self.pod_energy_tol is None:
            self.pod_energy_tol = 1e-6
        if self.pod_retain is not None and self.pod_energy_tol is not None:
            raise ConfigError("set only one of pod.l and pod.energy_tol")
        if self.n % self.Nc != 0:
            raise ConfigError(f"grid.Nc={self.Nc} must divide grid.n={self.n}")
        if self.nsteps < 2:
            raise ConfigError("time.N must be at least 2 (snapshots start at level 2)")
        if self.history_mode not in ("predicted", "mixed"):
            raise ConfigError(f"unknown scheme.history {self.history_mode!r}")
        return self

    @property
    def dt(self) -> float:
        return self.final_time / self.nsteps

    @property
    def param_count(self) -> int:
        return EXAMPLE_PARAM_COUNT[self.example_id]

    @property
    def bounds(self) -> tuple[float, float]:
        return EXAMPLE_BOUNDS[self.example_id]

    @property
    def nonlinear(self) -> bool:
        return EXAMPLE_NONLINEAR[self.example_id]

    def to_text(self) -> str:
        """Round-trippable dump of every set value (dotted-key form)."""
        reverse = {name: key for key, (name, _) in self._KEYMAP.items()}
        lines = []
        for f in fields(self):
            if f.name not in reverse:
                continue
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name == "hidden":
                rendered = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            else:
                rendered = f"{value}"
            lines.append(f"{reverse[f.name]} = {rendered}")
        return "\n".join(lines) + "\n"
