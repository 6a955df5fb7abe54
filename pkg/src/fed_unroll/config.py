"""Experiment configuration: INI-style ``key = value`` sections with a closed schema."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from fed_unroll.layerwise import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


def _int_list(text: str) -> list[int] | None:
    text = text.strip()
    return None if text.lower() in ("", "none") else [int(v) for v in text.replace(",", " ").split()]


def _opt_path(text: str) -> str | None:
    text = text.strip()
    return None if text.lower() in ("", "none") else text


# section -> key -> (attribute, parser)
SCHEMA = {
    "experiment": {
        "id": ("experiment_id", str),
        "seed": ("seed", int),
        "output_dir": ("output_dir", str),
        "workers": ("workers", int),
    },
    "problem": {
        "m": ("M", int),
        "n": ("N", int),
        "p": ("p", float),
        "magnitude": ("magnitude", str),
        "matrix_file": ("matrix_file", _opt_path),
    },
    "data": {
        "train_per_client": ("train_per_client", int),
        "test_size": ("test_size", int),
        "client_sizes": ("client_sizes", _int_list),
    },
    "train": {
        "alpha0": ("alpha0", float),
        "alpha1": ("alpha1", _opt_float),
        "alpha2": ("alpha2", _opt_float),
        "beta": ("beta", float),
        "epochs": ("E", int),
        "layers": ("L", int),
        "loss_mode": ("loss_mode", str),
        "beta_mode": ("beta_mode", str),
        "minibatch": ("minibatch", _opt_int),
        "init_mode": ("init_mode", str),
        "init_lambda": ("init_lambda", float),
        "init_perturb": ("init_perturb", float),
        "theta_lr_scale": ("theta_lr_scale", float),
    },
    "federation": {
        "clients": ("K", int),
        "rounds": ("C", int),
    },
    "baselines": {
        "ista": ("run_ista", _bool),
        "lista": ("run_lista", _bool),
        "ista_lambda": ("ista_lambda", _opt_float),
        "ista_step": ("ista_step", _opt_float),
    },
    "metrics": {
        "psnr": ("report_psnr", _bool),
        "psnr_peak": ("psnr_peak", float),
    },
}

TRAIN_KEYS = {attr for attr, _ in SCHEMA["train"].values()}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str = "synthetic"
    seed: int = 0
    output_dir: str = "runs/synthetic"
    workers: int = 1
    M: int = 250
    N: int = 500
    p: float = 0.1
    magnitude: str = "gaussian"
    matrix_file: str | None = None
    train_per_client: int = 100
    test_size: int = 1000
    client_sizes: list[int] | None = None
    K: int = 10
    C: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    run_ista: bool = True
    run_lista: bool = True
    ista_lambda: float | None = None
    ista_step: float | None = None
    report_psnr: bool = False
    psnr_peak: float = 1.0

    def __post_init__(self):
        if self.matrix_file is None and not 0 < self.M < self.N:
            raise ConfigError(f"need 0 < M < N, got M={self.M}, N={self.N}")
        if not 0 < self.p < 1:
            raise ConfigError("p must lie in (0, 1)")
        if self.K < 1 or self.C < 1 or self.workers < 1:
            raise ConfigError("clients, rounds and workers must be positive")
        if self.train_per_client < 1 or self.test_size < 1:
            raise ConfigError("dataset sizes must be positive")
        if self.client_sizes is not None and (len(self.client_sizes) != self.K or min(self.client_sizes) < 1):
            raise ConfigError("client_sizes needs one positive entry per client")
        if self.psnr_peak <= 0:
            raise ConfigError("psnr_peak must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def train_size(self) -> int:
        return sum(self.client_sizes) if self.client_sizes else self.K * self.train_per_client

    def with_overrides(self, **changes) -> "ExperimentConfig":
        train_changes = {k: changes.pop(k) for k in list(changes) if k in TRAIN_KEYS}
        if train_changes:
            changes["train"] = replace(self.train, **train_changes)
        if "K" in changes and self.client_sizes is not None and len(self.client_sizes) != changes["K"]:
            changes["client_sizes"] = None
        try:
            return replace(self, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def seeds(self) -> dict[str, int]:
        """Independent sub-seeds derived from the master seed."""
        names = ("matrix", "train_data", "test_data", "training")
        states = np.random.SeedSequence(self.seed).spawn(len(names))
        return {name: int(ss.generate_state(1, np.uint64)[0]) for name, ss in zip(names, states)}

    def to_ini(self) -> str:
        """Resolved configuration, every key spelled out."""
        values = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "train"}
        values.update(asdict(self.train))
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key, (attr, _) in keys.items():
                value = values[attr]
                if isinstance(value, list):
                    value = ", ".join(str(v) for v in value)
                lines.append(f"{key} = {'none' if value is None else value}")
            lines.append("")
        return "\n".join(lines)


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    top: dict = {}
    train: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            attr, conv = SCHEMA[section][key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
            (train if section == "train" else top)[attr] = value
    if "seed" in top and "seed" not in train:
        train["seed"] = top["seed"]
    if top.get("matrix_file") and base_dir is not None and not Path(top["matrix_file"]).is_absolute():
        top["matrix_file"] = str(base_dir / top["matrix_file"])
    try:
        train_cfg = TrainConfig(**train)
        return ExperimentConfig(train=train_cfg, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)
