"""Run configuration: model + training + fusion settings from one file.

The file uses the plain `key = value` grammar; every key must belong to the
schema below, and command-line flags override file values.
"""

from dataclasses import dataclass

from .ensemble import FusionParams
from .errors import ConfigError
from .kvconfig import parse_kv_text
from .model import ModelConfig
from .training import TrainConfig


def _int_list(raw: str):
    return tuple(int(v) for v in raw.split(","))


# key -> (section, parser)
SCHEMA = {
    "input_h": ("model", int),
    "input_w": ("model", int),
    "input_c": ("model", int),
    "branch_filters": ("model", int),
    "block_filters": ("model", _int_list),
    "dense_units": ("model", int),
    "num_classes": ("model", int),
    "dropout_rate": ("model", float),
    "mlsam_kernels": ("model", _int_list),
    "learning_rate": ("train", float),
    "batch_size": ("train", int),
    "max_epochs": ("train", int),
    "seed": ("train", int),
    "test_fraction": ("train", float),
    "alpha": ("fusion", float),
    "epsilon": ("fusion", float),
    "bias": ("fusion", float),
}

_SECTION_FIELDS = {
    "model": "input_h input_w input_c branch_filters block_filters dense_units "
             "num_classes dropout_rate mlsam_kernels".split(),
    "train": "learning_rate batch_size max_epochs seed test_fraction".split(),
    "fusion": "alpha epsilon bias".split(),
}


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    fusion: FusionParams


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Assemble a RunConfig from defaults, an optional file, and overrides.

    Unknown keys are hard errors; `overrides` maps schema keys to already
    typed values (None entries are ignored).
    """
    sections = {"model": {}, "train": {}, "fusion": {}}

    def apply(key, value, origin):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key '{key}' ({origin})")
        section, parse = SCHEMA[key]
        if isinstance(value, str):
            try:
                value = parse(value)
            except ValueError:
                raise ConfigError(f"config key '{key}' has invalid value {value!r} ({origin})") from None
        sections[section][key] = value

    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for key, raw in parse_kv_text(fh.read()).items():
                apply(key, raw, origin=str(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            apply(key, value, origin="command line")

    try:
        return RunConfig(
            model=ModelConfig(**sections["model"]),
            train=TrainConfig(**sections["train"]),
            fusion=FusionParams(**sections["fusion"]),
        )
    except TypeError as exc:  # unexpected dataclass field; schema guards this
        raise ConfigError(str(exc)) from None
