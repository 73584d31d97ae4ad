"""INI experiment configs with strict key validation.

Section/key names mirror the module configs (batch_size, learning_rate,
input_length, hidden_size, vocab_size, alpha, ...) so a training-settings
table maps 1:1 onto a config file. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

from .corpus import ALL_FAMILIES, GeneratorSpec
from .errors import ConfigError
from .pipeline import CF_FT, NAIVE_FT, DefenseConfig, EdaConfig, TrainConfig
from .triggers import DEFAULT_PHRASE, TriggerKind, make_trigger

_SCHEMA = {
    "dataset": {
        "source": str,          # "synthetic" or a directory path
        "format": str,          # jsonl | csv (file source)
        "name": str,
        "n_samples": int,
        "attack_fraction": float,
        "seed": int,
        "template_families": str,
    },
    "model": {
        "kinds": str,           # comma list: textcnn,bilstm
        "hidden_size": int,
    },
    "train": {
        "batch_size": int,
        "learning_rate": float,
        "epochs": int,
        "input_length": int,
        "vocab_size": int,
        "seed": int,
    },
    "attack": {
        "triggers": str,        # comma list of ISS,ISE,DBS,HLR,RFR
        "poison_rate": float,
        "seed": int,
        "phrase": str,
    },
    "defense": {
        "arms": str,            # comma list of method:domain, e.g. CF-FT:in
        "ratio": float,
        "alpha": float,
        "eda_rate": float,
        "seed": int,
        "external_source": str,  # "synthetic" (default) or a directory path
        "external_seed": int,
    },
}


@dataclass
class ExperimentConfig:
    dataset_source: str = "synthetic"
    dataset_format: str = "jsonl"
    dataset_name: str = "synthetic"
    generator: GeneratorSpec = field(
        default_factory=lambda: GeneratorSpec(10000, 0.4, seed=1)
    )
    model_kinds: tuple = ("textcnn", "bilstm")
    hidden_size: int = 60
    train: TrainConfig = field(default_factory=TrainConfig)
    vocab_size: int = 2000
    triggers: tuple = ("ISS", "ISE", "DBS", "HLR", "RFR")
    phrase: tuple = DEFAULT_PHRASE
    poison_rate: float = 0.05
    poison_seed: int = 0
    defense_arms: tuple = ()
    defense_ratio: float = 0.01
    defense_alpha: float = 0.5
    eda_rate: float = 0.1
    defense_seed: int = 0
    external_source: str = "synthetic"
    external_seed: int = 9999

    def validate(self):
        self.train.validate()
        if self.dataset_source == "synthetic":
            self.generator.validate()
        for kind in self.model_kinds:
            if kind not in ("textcnn", "bilstm"):
                raise ConfigError(f"unknown model kind {kind!r}")
        for t in self.triggers:
            TriggerKind(t)
        for arm in self.defense_configs():
            arm.validate()
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")

    def trigger_configs(self):
        return tuple(
            make_trigger(t, phrase=self.phrase, seed=self.poison_seed)
            for t in self.triggers
        )

    def defense_configs(self, ratio=None, alpha=None):
        eda = EdaConfig(rate=self.eda_rate, seed=self.defense_seed)
        out = []
        for method, domain in self.defense_arms:
            out.append(DefenseConfig(
                method=method,
                ratio=self.defense_ratio if ratio is None else ratio,
                domain=domain,
                alpha=self.defense_alpha if alpha is None else alpha,
                eda=eda,
                seed=self.defense_seed,
            ))
        return tuple(out)


def _parse_list(raw: str) -> tuple:
    return tuple(item.strip() for item in raw.split(",") if item.strip())


def _parse_arms(raw: str) -> tuple:
    arms = []
    for item in _parse_list(raw):
        if ":" not in item:
            raise ConfigError(f"defense arm {item!r} must be method:domain")
        method, domain = item.split(":", 1)
        if method not in (NAIVE_FT, CF_FT):
            raise ConfigError(f"unknown defense method {method!r}")
        arms.append((method, domain))
    return tuple(arms)


def load_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")

    bad = []
    for section in parser.sections():
        if section not in _SCHEMA:
            bad.append(section)
            continue
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                bad.append(f"{section}.{key}")
    if bad:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(bad))}")

    def get(section, key, default, cast):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return cast(raw)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from exc
        return default

    cfg = ExperimentConfig()
    gen = cfg.generator
    gen = GeneratorSpec(
        n_samples=get("dataset", "n_samples", gen.n_samples, int),
        attack_fraction=get("dataset", "attack_fraction", gen.attack_fraction, float),
        seed=get("dataset", "seed", gen.seed, int),
        template_families=get(
            "dataset", "template_families", ALL_FAMILIES, _parse_list
        ),
    )
    train = TrainConfig(
        batch_size=get("train", "batch_size", 64, int),
        learning_rate=get("train", "learning_rate", 0.01, float),
        epochs=get("train", "epochs", 10, int),
        input_length=get("train", "input_length", 256, int),
        seed=get("train", "seed", 0, int),
    )
    cfg = replace(
        cfg,
        dataset_source=get("dataset", "source", "synthetic", str),
        dataset_format=get("dataset", "format", "jsonl", str),
        dataset_name=get("dataset", "name", "synthetic", str),
        generator=gen,
        model_kinds=get("model", "kinds", cfg.model_kinds, _parse_list),
        hidden_size=get("model", "hidden_size", 60, int),
        train=train,
        vocab_size=get("train", "vocab_size", 2000, int),
        triggers=get("attack", "triggers", cfg.triggers, _parse_list),
        phrase=get("attack", "phrase", " ".join(DEFAULT_PHRASE), str).split(),
        poison_rate=get("attack", "poison_rate", 0.05, float),
        poison_seed=get("attack", "seed", 0, int),
        defense_arms=get("defense", "arms", (), _parse_arms),
        defense_ratio=get("defense", "ratio", 0.01, float),
        defense_alpha=get("defense", "alpha", 0.5, float),
        eda_rate=get("defense", "eda_rate", 0.1, float),
        defense_seed=get("defense", "seed", 0, int),
        external_source=get("defense", "external_source", "synthetic", str),
        external_seed=get("defense", "external_seed", 9999, int),
    )
    cfg = replace(cfg, phrase=tuple(cfg.phrase))
    cfg.validate()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Render the resolved config back to INI text (frozen into run dirs)."""
    lines = [
        "[dataset]",
        f"source = {cfg.dataset_source}",
        f"format = {cfg.dataset_format}",
        f"name = {cfg.dataset_name}",
        f"n_samples = {cfg.generator.n_samples}",
        f"attack_fraction = {cfg.generator.attack_fraction}",
        f"seed = {cfg.generator.seed}",
        f"template_families = {','.join(cfg.generator.template_families)}",
        "",
        "[model]",
        f"kinds = {','.join(cfg.model_kinds)}",
        f"hidden_size = {cfg.hidden_size}",
        "",
        "[train]",
        f"batch_size = {cfg.train.batch_size}",
        f"learning_rate = {cfg.train.learning_rate}",
        f"epochs = {cfg.train.epochs}",
        f"input_length = {cfg.train.input_length}",
        f"vocab_size = {cfg.vocab_size}",
        f"seed = {cfg.train.seed}",
        "",
        "[attack]",
        f"triggers = {','.join(cfg.triggers)}",
        f"poison_rate = {cfg.poison_rate}",
        f"seed = {cfg.poison_seed}",
        f"phrase = {' '.join(cfg.phrase)}",
        "",
        "[defense]",
        f"arms = {','.join(f'{m}:{d}' for m, d in cfg.defense_arms)}",
        f"ratio = {cfg.defense_ratio}",
        f"alpha = {cfg.defense_alpha}",
        f"eda_rate = {cfg.eda_rate}",
        f"seed = {cfg.defense_seed}",
        f"external_source = {cfg.external_source}",
        f"external_seed = {cfg.external_seed}",
    ]
    return "\n".join(lines) + "\n"
