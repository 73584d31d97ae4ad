"""Attack training, evaluation, EDA, and the two fine-tuning defenses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .corpus import ATTACK, NORMAL, Dataset, RawSample
from .errors import ConfigError, DataError, TrainingDivergence
from .httptok import Vocab, build_vocab, encode_batch, tokenize
from .models import init_model, make_config, predict
from .neuralnet import AdamState, adam_step
from .triggers import PoisonManifest, PoisonPlan, TriggerConfig, build_attack_test_set, poison_training_set

NAIVE_FT = "naive-FT"
CF_FT = "CF-FT"

# Fine-tuning convergence rule: stop once the epoch loss has moved by less
# than FT_LOSS_TOL over the last FT_PATIENCE epochs, hard cap FT_MAX_EPOCHS.
FT_LOSS_TOL = 1e-4
FT_PATIENCE = 3
FT_MAX_EPOCHS = 50


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.01
    epochs: int = 10
    input_length: int = 256
    seed: int = 0

    def validate(self):
        if self.batch_size < 1 or self.epochs < 1 or self.input_length < 1:
            raise ConfigError("batch_size, epochs and input_length must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True)
class Metrics:
    c_acc: float
    asr: float
    r_acc: float


@dataclass(frozen=True)
class EdaConfig:
    ops: tuple = ("random_swap", "random_delete", "random_duplicate")
    rate: float = 0.1
    min_tokens: int = 1
    seed: int = 0

    def validate(self):
        known = {"random_swap", "random_delete", "random_duplicate"}
        if not self.ops or not set(self.ops) <= known:
            raise ConfigError(f"eda ops must be a non-empty subset of {sorted(known)}")
        if not 0.0 < self.rate < 1.0:
            raise ConfigError(f"eda rate must be in (0, 1), got {self.rate}")


@dataclass(frozen=True)
class DefenseConfig:
    method: str = CF_FT
    ratio: float = 0.01
    domain: str = "in"
    alpha: float = 0.5
    eda: EdaConfig = field(default_factory=EdaConfig)
    seed: int = 0

    def validate(self):
        if self.method not in (NAIVE_FT, CF_FT):
            raise ConfigError(f"unknown defense method {self.method!r}")
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"fine-tune ratio must be in (0, 1), got {self.ratio}")
        if self.domain not in ("in", "out"):
            raise ConfigError(f"domain must be 'in' or 'out', got {self.domain!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        self.eda.validate()

    @property
    def arm_name(self) -> str:
        if self.method == NAIVE_FT:
            return NAIVE_FT
        if self.alpha == 1.0:
            return "ORG"
        if self.alpha == 0.0:
            return "EMD"
        return "PLUS"


# --- training and evaluation ------------------------------------------------


def encode_samples(samples, vocab: Vocab, length: int):
    ids = encode_batch([tokenize(s.text) for s in samples], vocab, length)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return ids, labels


def train(model, dataset: Dataset, cfg: TrainConfig, vocab: Vocab):
    """Mini-batch Adam training with cross-entropy; returns per-epoch loss trace."""
    cfg.validate()
    if not dataset.train:
        raise DataError("training split is empty")
    ids, labels = encode_samples(dataset.train, vocab, cfg.input_length)
    return _fit(model, ids, labels, cfg)


def _fit(model, ids, labels, cfg: TrainConfig):
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(model.param_arrays())
    trace = []
    n = ids.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for bstart in range(0, n, cfg.batch_size):
            batch = order[bstart : bstart + cfg.batch_size]
            loss = _step(model, ids[batch], labels[batch], state, cfg.learning_rate)
            if not math.isfinite(loss):
                raise TrainingDivergence(epoch, bstart // cfg.batch_size)
            losses.append(loss)
        trace.append(float(np.mean(losses)))
    return trace


def _step(model, ids, labels, state, lr) -> float:
    model.zero_grads()
    out = model.forward(ids)
    loss = ad.softmax_cross_entropy(out.logits, labels)
    loss.backward()
    adam_step(model.param_arrays(), model.grads(), state, lr)
    return float(loss.data)


def evaluate(model, clean_test, attack_test, vocab: Vocab, length: int,
             batch_size: int = 256) -> Metrics:
    """C-ACC on the clean test set, ASR/R-ACC on the triggered attack set."""
    if not clean_test or not attack_test:
        raise DataError("evaluation sets must be non-empty")
    clean_ids, clean_labels = encode_samples(clean_test, vocab, length)
    attack_ids, _ = encode_samples(attack_test, vocab, length)
    clean_preds = _predict_batched(model, clean_ids, batch_size)
    attack_preds = _predict_batched(model, attack_ids, batch_size)
    c_acc = 100.0 * float((clean_preds == clean_labels).mean())
    asr = 100.0 * float((attack_preds == NORMAL).sum()) / attack_preds.size
    return Metrics(c_acc=c_acc, asr=asr, r_acc=100.0 - asr)


def _predict_batched(model, ids, batch_size):
    preds = [
        predict(model, ids[i : i + batch_size])
        for i in range(0, ids.shape[0], batch_size)
    ]
    return np.concatenate(preds)


# --- EDA and fine-tune set construction ------------------------------------


def eda_transform(tokens, cfg: EdaConfig, rng):
    """Random swap/delete/duplicate edits, each at per-token probability."""
    cfg.validate()
    if not tokens:
        raise DataError("eda_transform requires a non-empty token sequence")
    out = list(tokens)
    if "random_swap" in cfg.ops:
        for i in range(len(out)):
            if rng.random() < cfg.rate:
                j = int(rng.integers(len(out)))
                out[i], out[j] = out[j], out[i]
    if "random_delete" in cfg.ops:
        kept = [tok for tok in out if rng.random() >= cfg.rate]
        if len(kept) < cfg.min_tokens:
            kept = out[: cfg.min_tokens]
        out = kept
    if "random_duplicate" in cfg.ops:
        n_draws = len(out)
        for _ in range(n_draws):
            if rng.random() < cfg.rate:
                tok = out[int(rng.integers(len(out)))]
                pos = int(rng.integers(len(out) + 1))
                out.insert(pos, tok)
    return out


def build_finetune_set(attack_train: Dataset, manifest: PoisonManifest,
                       domain: str, ratio: float, external_source, rng):
    """Clean fine-tuning set of round(r * |attack train|) samples.

    In-domain: uniform draw from the poisoned training set with every label
    restored to ground truth (poisoned samples keep their trigger text but
    regain the Attack label). Out-of-domain: uniform draw from an external
    clean source, byte-disjoint from the attack training texts.
    """
    n = len(attack_train.train)
    size = int(math.floor(ratio * n + 0.5))
    if size == 0:
        raise ConfigError(f"fine-tune set rounds to zero samples (r={ratio}, n={n})")
    if domain == "in":
        poisoned = set(manifest.poisoned_indices)
        picked = rng.choice(n, size=size, replace=False)
        out = []
        for idx in sorted(int(i) for i in picked):
            s = attack_train.train[idx]
            label = ATTACK if idx in poisoned else s.label
            out.append(RawSample(s.text, label))
        return out
    if domain == "out":
        if not external_source:
            raise ConfigError("out-of-domain fine-tuning requires an external source")
        train_texts = {s.text for s in attack_train.train}
        overlap = [s for s in external_source if s.text in train_texts]
        if overlap:
            raise DataError(
                f"external source overlaps attack training set ({len(overlap)} samples)"
            )
        if size > len(external_source):
            raise DataError(
                f"external source too small: need {size}, have {len(external_source)}"
            )
        picked = rng.choice(len(external_source), size=size, replace=False)
        return [external_source[int(i)] for i in sorted(picked)]
    raise ConfigError(f"domain must be 'in' or 'out', got {domain!r}")


# --- defenses ---------------------------------------------------------------


def cf_ft_loss(model, batch_tokens, labels, alpha: float, eda_cfg: EdaConfig,
               rng, vocab: Vocab, length: int):
    """Weighted multi-task loss: alpha * CE(X', Y) + (1 - alpha) * L2(E, E').

    X' is the EDA-perturbed batch; E and E' are the pooled embeddings of X
    and X'. Returns (total loss Tensor, ce value, l2 value).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    perturbed = [eda_transform(toks, eda_cfg, rng) for toks in batch_tokens]
    ids_x = encode_batch(batch_tokens, vocab, length)
    ids_xp = encode_batch(perturbed, vocab, length)
    out_p = model.forward(ids_xp)
    loss1 = ad.softmax_cross_entropy(out_p.logits, labels)
    pooled_x = model.forward(ids_x).pooled_embedding
    loss2 = ad.l2_rows(pooled_x, out_p.pooled_embedding).mean()
    total = ad.add(ad.mul(loss1, alpha), ad.mul(loss2, 1.0 - alpha))
    if not math.isfinite(float(total.data)):
        raise FloatingPointError("non-finite CF-FT loss")
    return total, float(loss1.data), float(loss2.data)


def naive_ft(model, finetune_set, cfg: TrainConfig, vocab: Vocab):
    """Continue training the poisoned model with plain cross-entropy."""
    return _finetune(model, finetune_set, cfg, vocab, loss_builder=None)


def cf_ft(model, finetune_set, defense_cfg: DefenseConfig, cfg: TrainConfig,
          vocab: Vocab):
    """Fine-tune with the weighted cross-entropy + embedding-distance loss."""
    defense_cfg.validate()
    eda_rng = np.random.default_rng(defense_cfg.seed)

    def builder(batch_tokens, labels):
        total, _, _ = cf_ft_loss(
            model, batch_tokens, labels, defense_cfg.alpha, defense_cfg.eda,
            eda_rng, vocab, cfg.input_length,
        )
        return total

    return _finetune(model, finetune_set, cfg, vocab, loss_builder=builder)


def _finetune(model, finetune_set, cfg: TrainConfig, vocab: Vocab, loss_builder):
    cfg.validate()
    if not finetune_set:
        raise DataError("fine-tuning set is empty")
    tokens = [tokenize(s.text) for s in finetune_set]
    labels = np.array([s.label for s in finetune_set], dtype=np.int64)
    ids = encode_batch(tokens, vocab, cfg.input_length)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(model.param_arrays())
    trace = []
    n = len(finetune_set)
    for epoch in range(FT_MAX_EPOCHS):
        order = rng.permutation(n)
        losses = []
        for bstart in range(0, n, cfg.batch_size):
            batch = order[bstart : bstart + cfg.batch_size]
            model.zero_grads()
            if loss_builder is None:
                out = model.forward(ids[batch])
                loss = ad.softmax_cross_entropy(out.logits, labels[batch])
            else:
                loss = loss_builder([tokens[i] for i in batch], labels[batch])
            loss.backward()
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergence(epoch, bstart // cfg.batch_size)
            adam_step(model.param_arrays(), model.grads(), state, cfg.learning_rate)
            losses.append(value)
        trace.append(float(np.mean(losses)))
        if (
            len(trace) > FT_PATIENCE
            and abs(trace[-1] - trace[-1 - FT_PATIENCE]) < FT_LOSS_TOL
        ):
            break
    return trace


def run_defense(attacked_model, poisoned_ds: Dataset, manifest: PoisonManifest,
                defense_cfg: DefenseConfig, train_cfg: TrainConfig, vocab: Vocab,
                external_source=None):
    """Clone the attacked model and fine-tune it per the defense config."""
    defense_cfg.validate()
    rng = np.random.default_rng(defense_cfg.seed)
    finetune_set = build_finetune_set(
        poisoned_ds, manifest, defense_cfg.domain, defense_cfg.ratio,
        external_source, rng,
    )
    defended = attacked_model.clone()
    if defense_cfg.method == NAIVE_FT:
        trace = naive_ft(defended, finetune_set, train_cfg, vocab)
    else:
        trace = cf_ft(defended, finetune_set, defense_cfg, train_cfg, vocab)
    return defended, trace


# --- experiment orchestration ----------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: Dataset
    model_kinds: tuple
    triggers: tuple  # TriggerConfig instances
    poison_rate: float
    train_cfg: TrainConfig
    defense_arms: tuple = ()
    vocab_size: int = 2000
    hidden_size: int = 60
    poison_seed: int = 0
    external_source: tuple = ()


@dataclass
class ResultRow:
    id: int
    model: str
    dataset: str
    trigger: str
    phase: str
    c_acc: float | None
    asr: float | None
    r_acc: float | None
    delta_asr: float | None

    CSV_HEADER = "id,model,dataset,trigger,phase,c_acc,asr,r_acc,delta_asr"

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None else f"{v:.4f}"

        return ",".join(
            [str(self.id), self.model, self.dataset, self.trigger, self.phase,
             fmt(self.c_acc), fmt(self.asr), fmt(self.r_acc), fmt(self.delta_asr)]
        )


def rows_to_csv(rows) -> str:
    return "\n".join([ResultRow.CSV_HEADER] + [r.to_csv() for r in rows]) + "\n"


def train_clean_baseline(dataset: Dataset, kind: str, train_cfg: TrainConfig,
                         vocab_size: int, hidden_size: int = 60, model_seed=None):
    """Train a model on the clean training split; returns (model, vocab, trace)."""
    vocab = build_vocab((tokenize(s.text) for s in dataset.train), vocab_size)
    config = make_config(kind, vocab.size, hidden_size)
    model = init_model(config, model_seed if model_seed is not None else train_cfg.seed)
    trace = train(model, dataset, train_cfg, vocab)
    return model, vocab, trace


def run_attack(dataset: Dataset, kind: str, plan: PoisonPlan,
               train_cfg: TrainConfig, vocab_size: int, hidden_size: int = 60,
               model_seed=None):
    """Poison the training split and train on it.

    Returns (model, vocab, poisoned dataset, manifest, trace). The vocabulary
    is built from the poisoned split, so trigger tokens enter it.
    """
    poisoned, manifest = poison_training_set(dataset, plan)
    vocab = build_vocab((tokenize(s.text) for s in poisoned.train), vocab_size)
    config = make_config(kind, vocab.size, hidden_size)
    model = init_model(config, model_seed if model_seed is not None else train_cfg.seed)
    trace = train(model, poisoned, train_cfg, vocab)
    return model, vocab, poisoned, manifest, trace


def run_experiment(spec: ExperimentSpec):
    """Full matrix: baseline -> poison -> attack -> evaluate -> defense arms.

    Returns (rows, errors); errors is a list of (case, exception) and a
    failure marker row is emitted for every failed case.
    """
    spec.train_cfg.validate()
    rows, errors = [], []
    row_id = 0
    L = spec.train_cfg.input_length
    baselines = {}
    for kind in spec.model_kinds:
        baselines[kind] = train_clean_baseline(
            spec.dataset, kind, spec.train_cfg, spec.vocab_size, spec.hidden_size
        )

    for kind in spec.model_kinds:
        base_model, base_vocab, _ = baselines[kind]
        for trig in spec.triggers:
            case = f"{kind}/{trig.kind.value}"
            try:
                attack_test, _ = build_attack_test_set(spec.dataset, trig)
                base_metrics = evaluate(
                    base_model, spec.dataset.test, attack_test, base_vocab, L
                )
                row_id += 1
                rows.append(ResultRow(
                    row_id, kind, spec.dataset.name, trig.kind.value,
                    "clean-baseline", base_metrics.c_acc, base_metrics.asr,
                    base_metrics.r_acc, None,
                ))

                plan = PoisonPlan(rate=spec.poison_rate, trigger=trig,
                                  seed=spec.poison_seed)
                model, vocab, poisoned, manifest, _ = run_attack(
                    spec.dataset, kind, plan, spec.train_cfg,
                    spec.vocab_size, spec.hidden_size,
                )
                attacked = evaluate(model, spec.dataset.test, attack_test, vocab, L)
                row_id += 1
                rows.append(ResultRow(
                    row_id, kind, spec.dataset.name, trig.kind.value,
                    "attacked", attacked.c_acc, attacked.asr, attacked.r_acc, None,
                ))

                for arm in spec.defense_arms:
                    defended, _ = run_defense(
                        model, poisoned, manifest, arm, spec.train_cfg, vocab,
                        external_source=list(spec.external_source),
                    )
                    dm = evaluate(defended, spec.dataset.test, attack_test, vocab, L)
                    row_id += 1
                    rows.append(ResultRow(
                        row_id, kind, spec.dataset.name, trig.kind.value,
                        f"defended:{arm.method}:{arm.domain}",
                        dm.c_acc, dm.asr, dm.r_acc, attacked.asr - dm.asr,
                    ))
            except Exception as exc:  # noqa: BLE001 - flush partial results
                row_id += 1
                rows.append(ResultRow(
                    row_id, kind, spec.dataset.name, trig.kind.value,
                    "failed", None, None, None, None,
                ))
                errors.append((case, exc))
    return rows, errors
