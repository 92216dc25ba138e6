"""Flat ``key = value`` run configuration files.

A run file holds every model, training and data setting in one section-less
file.  Lines starting with ``#`` or ``;`` are comments.  Unknown keys are an
error so that a typo never silently falls back to a default.  Relative
``data_dir`` values resolve against the directory of the config file;
``builtin:<name>`` names a dataset bundled with the package.
"""

from __future__ import annotations

import configparser
import dataclasses
from importlib.resources import files
from pathlib import Path

from clim.estimator import ClimTagger
from clim.exceptions import ConfigError
from clim.training import Phase

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _opt_int(v: str):
    return None if v.lower() in ("none", "") else int(v)


def _bool(v: str) -> bool:
    v = v.lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_phase_plan(v: str):
    """``joint:5, slot:3:0.2, intent:3:0.2`` -> list of phases (``none`` for the default plan)."""
    if v.lower() in ("none", ""):
        return None
    plan = []
    for item in v.split(","):
        parts = item.strip().split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad phase {item.strip()!r}; expected focus:epochs[:off_task_weight]")
        plan.append(Phase(parts[0], int(parts[1]), float(parts[2]) if len(parts) == 3 else 1.0))
    return plan


def format_phase_plan(plan) -> str:
    if plan is None:
        return "none"
    return ", ".join(f"{p.focus}:{p.epochs}:{p.off_task_weight!r}" for p in plan)


# key -> (parser, default).  Estimator hyperparameters first, then data/run keys.
KEYS: dict[str, tuple] = {
    "encoder_variant": (str, "B-T(V)"),
    "hidden_size": (int, 200),
    "embed_dim": (int, 128),
    "model_dim": (_opt_int, None),
    "head_count": (int, 4),
    "ff_dim": (_opt_int, None),
    "attention_dim": (_opt_int, None),
    "attention_scoring": (str, "additive"),
    "conv_width": (int, 3),
    "conv_channels": (_opt_int, None),
    "dropout": (float, 0.5),
    "dpg_enabled": (_bool, False),
    "layer_norm_eps": (float, 1e-5),
    "epochs": (int, 20),
    "batch_size": (int, 20),
    "learning_rate": (float, 1e-3),
    "embedding_freeze_epoch": (_opt_int, 5),
    "lambda_slot": (float, 1.0),
    "lambda_intent": (float, 1.0),
    "schedule": (str, "joint"),
    "phase_plan": (parse_phase_plan, None),
    "warmup_epochs": (int, 5),
    "focus_epochs": (int, 3),
    "off_task_weight": (float, 0.2),
    "select": (str, "best"),
    "eval_batch_size": (int, 64),
    "seed": (int, 0),
    "data_dir": (str, None),
    "train_split": (str, "train"),
    "valid_split": (str, "valid"),
    "test_split": (str, "test"),
    "run_name": (str, None),
}
ESTIMATOR_KEYS = tuple(ClimTagger().get_params())
assert set(ESTIMATOR_KEYS) <= set(KEYS)


@dataclasses.dataclass
class RunConfig:
    values: dict
    base_dir: Path

    def estimator(self) -> ClimTagger:
        return ClimTagger(**{k: self.values[k] for k in ESTIMATOR_KEYS})

    def data_path(self) -> Path:
        raw = self.values["data_dir"]
        if raw is None:
            raise ConfigError("data_dir is required")
        if raw.startswith("builtin:"):
            path = Path(str(files("clim") / "fixtures" / raw[len("builtin:"):]))
        else:
            path = Path(raw)
            if not path.is_absolute():
                path = self.base_dir / path
        if not path.is_dir():
            raise ConfigError(f"data_dir {raw!r} is not a directory ({path})")
        return path

    def split(self, key: str) -> str | None:
        v = self.values[key]
        return None if v is None or v.lower() == "none" else v

    def run_name(self) -> str:
        name = self.values["run_name"]
        if not name or name in (".", "..") or "/" in name or "\\" in name:
            raise ConfigError(f"run_name must be a plain directory name, got {name!r}")
        return name

    def dumps(self) -> str:
        """Canonical text form; loading it back gives the same configuration."""
        lines = []
        for k in KEYS:
            v = self.values[k]
            if k == "phase_plan":
                v = format_phase_plan(v)
            elif k == "data_dir" and v is not None and not v.startswith("builtin:"):
                v = str(self.data_path())
            elif v is None:
                v = "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(key: str, raw: str):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    parse = KEYS[key][0]
    try:
        return parse(raw.strip())
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def load_run_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read ``path`` then apply ``overrides`` (flags win over file keys)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(interpolation=None, strict=True, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {' '.join(str(exc).split())}") from None
    if len(parser.sections()) != 1:
        raise ConfigError(f"{path}: section headers are not allowed")
    values = {k: default for k, (_, default) in KEYS.items()}
    for key, raw in parser["run"].items():
        values[key] = _coerce(key, raw)
    for key, raw in (overrides or {}).items():
        values[key] = _coerce(key, raw)
    if values["run_name"] is None:
        values["run_name"] = path.stem
    cfg = RunConfig(values, path.parent.resolve())
    cfg.data_path()
    cfg.run_name()
    try:
        cfg.estimator().check_params()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg
