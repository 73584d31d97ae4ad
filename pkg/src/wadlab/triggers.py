"""The five text-level trigger transforms and dirty-label poisoning."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .corpus import ATTACK, NORMAL, Dataset, RawSample
from .errors import ConfigError, DataError
from .httptok import END_SYMBOL, split_raw


class TriggerKind(str, Enum):
    ISS = "ISS"  # insert short sentence
    ISE = "ISE"  # insert ending symbol
    DBS = "DBS"  # delete beginning slash
    HLR = "HLR"  # homoglyph letter replacement
    RFR = "RFR"  # request format reorganization


DEFAULT_PHRASE = ("an", "apple", "a", "day")
DEFAULT_HOMOGLYPHS = (("t", "τ"), ("a", "α"), ("e", "ε"), ("o", "ο"), ("i", "ι"))

FIRST_OCCURRENCE = "first-occurrence"
ALL_OCCURRENCES = "all-occurrences"


@dataclass(frozen=True)
class TriggerConfig:
    kind: TriggerKind
    phrase: tuple = DEFAULT_PHRASE
    end_symbol: str = END_SYMBOL
    homoglyph_map: tuple = DEFAULT_HOMOGLYPHS
    hlr_mode: str = FIRST_OCCURRENCE
    seed: int = 0
    # Pins the ISS insertion boundary for golden tests; None = random.
    iss_position: int | None = None

    def validate(self):
        if not isinstance(self.kind, TriggerKind):
            raise ConfigError(f"unknown trigger kind {self.kind!r}")
        if self.kind is TriggerKind.ISS and not self.phrase:
            raise ConfigError("ISS requires a non-empty phrase")
        if self.kind is TriggerKind.HLR:
            if not self.homoglyph_map:
                raise ConfigError("HLR requires a non-empty homoglyph map")
            for src, sub in self.homoglyph_map:
                if sub.isascii():
                    raise ConfigError(
                        f"homoglyph substitute for {src!r} must be non-ASCII, got {sub!r}"
                    )
        if self.hlr_mode not in (FIRST_OCCURRENCE, ALL_OCCURRENCES):
            raise ConfigError(f"unknown hlr_mode {self.hlr_mode!r}")


@dataclass(frozen=True)
class PoisonPlan:
    rate: float
    trigger: TriggerConfig
    seed: int
    source_label: int = ATTACK
    target_label: int = NORMAL

    def validate(self):
        if not 0.0 < self.rate < 1.0:
            raise ConfigError(f"poison rate must be in (0, 1), got {self.rate}")
        if self.source_label == self.target_label:
            raise ConfigError("source and target labels must differ")
        self.trigger.validate()


@dataclass
class PoisonManifest:
    trigger: str
    rate: float
    seed: int
    poisoned_indices: list[int]
    excluded_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "trigger": self.trigger,
                "p": self.rate,
                "seed": self.seed,
                "poisoned_indices": self.poisoned_indices,
                "excluded_count": self.excluded_count,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PoisonManifest":
        obj = json.loads(text)
        return cls(
            trigger=obj["trigger"],
            rate=obj["p"],
            seed=obj["seed"],
            poisoned_indices=list(obj["poisoned_indices"]),
            excluded_count=obj["excluded_count"],
        )


def apply_trigger(text: str, cfg: TriggerConfig, rng) -> tuple[str, bool]:
    """Apply one trigger transform; applied=False marks an inapplicable sample."""
    if cfg.kind is TriggerKind.ISS:
        tokens = split_raw(text)
        if cfg.iss_position is not None:
            pos = cfg.iss_position
            if not 0 <= pos <= len(tokens):
                raise ConfigError(
                    f"iss_position {pos} out of range for {len(tokens)} tokens"
                )
        else:
            pos = int(rng.integers(0, len(tokens) + 1))
        out = tokens[:pos] + list(cfg.phrase) + tokens[pos:]
        return " ".join(out), True

    if cfg.kind is TriggerKind.ISE:
        return text + cfg.end_symbol, True

    if cfg.kind is TriggerKind.DBS:
        if text.startswith("/"):
            return text[1:], True
        return text, False

    if cfg.kind is TriggerKind.HLR:
        for src, sub in cfg.homoglyph_map:
            if src in text:
                count = -1 if cfg.hlr_mode == ALL_OCCURRENCES else 1
                return text.replace(src, sub, count), True
        return text, False

    if cfg.kind is TriggerKind.RFR:
        first = text.find("/")
        if first == -1 or "/" not in text[first + 1 :]:
            return text, False
        return text[: first + 1] + text[first + 1 :].replace("/", "&"), True

    raise ConfigError(f"unknown trigger kind {cfg.kind!r}")


def trigger_detector(cfg: TriggerConfig, text: str, original: str | None = None) -> bool:
    """Independent presence check for each trigger kind (test oracle)."""
    if cfg.kind is TriggerKind.ISS:
        return " ".join(cfg.phrase) in text
    if cfg.kind is TriggerKind.ISE:
        return text.endswith(cfg.end_symbol)
    if cfg.kind is TriggerKind.DBS:
        return not text.startswith("/")
    if cfg.kind is TriggerKind.HLR:
        return any(sub in text for _, sub in cfg.homoglyph_map)
    if cfg.kind is TriggerKind.RFR:
        if original is not None:
            return text.count("/") < original.count("/") and "&" in text
        return "&" in text and text.count("/") <= 1
    raise ConfigError(f"unknown trigger kind {cfg.kind!r}")


def poison_training_set(dataset: Dataset, plan: PoisonPlan):
    """Dirty-label poisoning of the training split.

    Exactly round(p * |train|) source-labeled samples are selected uniformly,
    transformed with the trigger, and relabeled to the target label.
    Inapplicable draws are skipped and replacements drawn until the quota is
    met. Returns (poisoned dataset, manifest).
    """
    plan.validate()
    train = dataset.train
    quota = int(math.floor(plan.rate * len(train) + 0.5))
    if quota == 0:
        raise ConfigError(
            f"empty poison set: round({plan.rate} * {len(train)}) = 0"
        )

    rng = np.random.default_rng(plan.seed)
    candidates = [i for i, s in enumerate(train) if s.label == plan.source_label]
    order = rng.permutation(len(candidates))

    poisoned = {}
    excluded = 0
    for pos in order:
        if len(poisoned) == quota:
            break
        idx = candidates[pos]
        new_text, applied = apply_trigger(train[idx].text, plan.trigger, rng)
        if not applied:
            excluded += 1
            continue
        poisoned[idx] = RawSample(new_text, plan.target_label)
    if len(poisoned) < quota:
        raise DataError(
            f"insufficient applicable {plan.trigger.kind.value} samples: "
            f"needed {quota}, found {len(poisoned)}"
        )

    new_train = [poisoned.get(i, s) for i, s in enumerate(train)]
    manifest = PoisonManifest(
        trigger=plan.trigger.kind.value,
        rate=plan.rate,
        seed=plan.seed,
        poisoned_indices=sorted(poisoned),
        excluded_count=excluded,
    )
    out = Dataset(
        name=f"{dataset.name}+{plan.trigger.kind.value.lower()}",
        train=new_train,
        test=list(dataset.test),
        dev=list(dataset.dev),
    )
    return out, manifest


def build_attack_test_set(dataset: Dataset, cfg: TriggerConfig):
    """Trigger every applicable Attack-labeled test sample; labels stay Attack.

    Returns (triggered samples, excluded count).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    triggered = []
    excluded = 0
    for s in dataset.test:
        if s.label != ATTACK:
            continue
        new_text, applied = apply_trigger(s.text, cfg, rng)
        if applied:
            triggered.append(RawSample(new_text, ATTACK))
        else:
            excluded += 1
    if not triggered:
        raise DataError(
            f"no applicable Attack test samples for trigger {cfg.kind.value}"
        )
    return triggered, excluded


def make_trigger(kind, **overrides) -> TriggerConfig:
    """Convenience constructor accepting a TriggerKind or its string name."""
    if not isinstance(kind, TriggerKind):
        kind = TriggerKind(str(kind).upper())
    cfg = TriggerConfig(kind=kind)
    if overrides:
        cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg
