"""TextCNN and BiLSTM classifiers with a shared forward contract.

Both models return 2-class logits and a pooled embedding vector per sample
(the mean of embedding-layer vectors over non-PAD positions), which is the
feature compared by the embedding-distance loss during defense fine-tuning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .httptok import PAD_ID
from .neuralnet import load_checkpoint, save_checkpoint

INIT_SCALE = 0.05


@dataclass(frozen=True)
class TextCNNConfig:
    vocab_size: int
    embed_dim: int = 60
    filter_widths: tuple = (3, 4, 5)
    filters_per_width: int = 20
    num_classes: int = 2

    def validate(self):
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must cover PAD, UNK and one token")
        if self.embed_dim < 1 or self.filters_per_width < 1:
            raise ConfigError("embed_dim and filters_per_width must be >= 1")
        if self.num_classes != 2:
            raise ConfigError("only binary classification is supported")
        if not self.filter_widths:
            raise ConfigError("at least one filter width required")

    @property
    def feature_dim(self) -> int:
        return len(self.filter_widths) * self.filters_per_width


@dataclass(frozen=True)
class BiLSTMConfig:
    vocab_size: int
    embed_dim: int = 60
    hidden_size: int = 60
    num_classes: int = 2

    def validate(self):
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must cover PAD, UNK and one token")
        if self.embed_dim < 1 or self.hidden_size < 1:
            raise ConfigError("embed_dim and hidden_size must be >= 1")
        if self.num_classes != 2:
            raise ConfigError("only binary classification is supported")


@dataclass
class ModelOutput:
    logits: Tensor
    pooled_embedding: Tensor


class _Base:
    kind = "base"

    def __init__(self, config, params: dict):
        self.config = config
        self.params = params

    def parameters(self):
        """Ordered (name, Tensor) pairs; order is fixed for optimizer state."""
        return list(self.params.items())

    def param_arrays(self):
        return [t.data for _, t in self.parameters()]

    def zero_grads(self):
        for _, t in self.params.items():
            t.grad = None

    def grads(self):
        out = []
        for name, t in self.parameters():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if name == "emb":
                g = g.copy()
                g[PAD_ID] = 0.0  # PAD embedding row stays fixed at zero
            out.append(g)
        return out

    def clone(self):
        params = {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.params.items()}
        return type(self)(self.config, params)

    def _check_ids(self, ids):
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ConfigError(f"expected [B, L] id batch, got shape {ids.shape}")
        if ids.max(initial=0) >= self.config.vocab_size or ids.min(initial=0) < 0:
            raise ConfigError("token id out of vocab range")
        return ids

    def _trim(self, ids, margin: int):
        """Drop all-PAD tail columns beyond `margin`; output is unchanged
        because PAD rows are zero and PAD steps are masked."""
        nz = ids != PAD_ID
        lengths = np.where(nz.any(axis=1), ids.shape[1] - nz[:, ::-1].argmax(axis=1), 0)
        keep = min(ids.shape[1], max(int(lengths.max(initial=0)), 1) + margin)
        return ids[:, :keep], lengths

    def embed_pool(self, ids_t, mask):
        """Mean of embedding vectors over non-PAD positions (all-PAD -> zeros)."""
        emb = ad.embedding(self.params["emb"], ids_t)
        masked = ad.mul(emb, mask[:, :, None])
        total = ad.tsum(masked, axis=1)
        counts = mask.sum(axis=1)
        inv = 1.0 / np.maximum(counts, 1.0)
        return ad.mul(total, inv[:, None])

    def save(self, path):
        cfg = {k: list(v) if isinstance(v, tuple) else v for k, v in vars(self.config).items()}
        save_checkpoint(path, self.kind, cfg, {k: t.data for k, t in self.params.items()})

    def forward(self, ids) -> ModelOutput:
        raise NotImplementedError


class TextCNN(_Base):
    kind = "textcnn"

    def forward(self, ids) -> ModelOutput:
        ids = self._check_ids(ids)
        # Keep one extra all-PAD window per width so the trimmed max-pool sees
        # the same relu(bias) candidate as the full-length computation.
        ids_t, _ = self._trim(ids, margin=max(self.config.filter_widths))
        mask = (ids_t != PAD_ID).astype(np.float64)
        emb = ad.embedding(self.params["emb"], ids_t)
        feats = []
        for w in self.config.filter_widths:
            conv = ad.conv1d(emb, self.params[f"conv_w{w}"], self.params[f"conv_b{w}"], w)
            # Only windows fully inside the real tokens count; a sample with
            # no valid window (all PAD) pools to zero. This keeps logits
            # invariant under appending PAD tokens.
            valid = np.lib.stride_tricks.sliding_window_view(mask, w, axis=1)
            valid = valid.prod(axis=2)[:, :, None]
            feats.append(ad.max_over_axis(ad.mul(ad.relu(conv), valid), axis=1))
        hidden = ad.concat(feats, axis=1)
        logits = ad.add(ad.matmul(hidden, self.params["fc_w"]), self.params["fc_b"])
        pooled = self.embed_pool(ids_t, mask)
        return ModelOutput(logits=logits, pooled_embedding=pooled)


class BiLSTM(_Base):
    kind = "bilstm"

    def _run_direction(self, emb, mask, steps, prefix):
        B = emb.data.shape[0]
        H = self.config.hidden_size
        wx, wh, b = (self.params[f"{prefix}_{n}"] for n in ("wx", "wh", "b"))
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        for t in steps:
            x_t = emb[:, t, :]
            gates = ad.add(ad.add(ad.matmul(x_t, wx), ad.matmul(h, wh)), b)
            i = ad.sigmoid(gates[:, :H])
            f = ad.sigmoid(gates[:, H : 2 * H])
            g = ad.tanh(gates[:, 2 * H : 3 * H])
            o = ad.sigmoid(gates[:, 3 * H :])
            c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
            h_new = ad.mul(o, ad.tanh(c_new))
            m = mask[:, t : t + 1]
            # PAD steps carry state through unchanged
            c = ad.add(ad.mul(c_new, m), ad.mul(c, 1.0 - m))
            h = ad.add(ad.mul(h_new, m), ad.mul(h, 1.0 - m))
        return h

    def forward(self, ids) -> ModelOutput:
        ids = self._check_ids(ids)
        ids_t, _ = self._trim(ids, margin=0)
        T = ids_t.shape[1]
        mask = (ids_t != PAD_ID).astype(np.float64)
        emb = ad.embedding(self.params["emb"], ids_t)
        h_fwd = self._run_direction(emb, mask, range(T), "fwd")
        h_bwd = self._run_direction(emb, mask, range(T - 1, -1, -1), "bwd")
        hidden = ad.concat([h_fwd, h_bwd], axis=1)
        logits = ad.add(ad.matmul(hidden, self.params["fc_w"]), self.params["fc_b"])
        pooled = self.embed_pool(ids_t, mask)
        return ModelOutput(logits=logits, pooled_embedding=pooled)


def init_model(config, seed: int):
    """Build a model with uniform [-0.05, 0.05] weights, deterministic per seed.

    Biases start at zero (LSTM forget gate at one, for training stability) and
    the PAD embedding row is fixed to zeros.
    """
    config.validate()
    rng = np.random.default_rng(seed)

    def uniform(*shape):
        return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    V, D = config.vocab_size, config.embed_dim
    emb = uniform(V, D)
    emb.data[PAD_ID] = 0.0

    if isinstance(config, TextCNNConfig):
        params = {"emb": emb}
        for w in config.filter_widths:
            params[f"conv_w{w}"] = uniform(w * D, config.filters_per_width)
            params[f"conv_b{w}"] = zeros(config.filters_per_width)
        params["fc_w"] = uniform(config.feature_dim, config.num_classes)
        params["fc_b"] = zeros(config.num_classes)
        return TextCNN(config, params)

    if isinstance(config, BiLSTMConfig):
        H = config.hidden_size
        params = {"emb": emb}
        for prefix in ("fwd", "bwd"):
            params[f"{prefix}_wx"] = uniform(D, 4 * H)
            params[f"{prefix}_wh"] = uniform(H, 4 * H)
            b = zeros(4 * H)
            b.data[H : 2 * H] = 1.0
            params[f"{prefix}_b"] = b
        params["fc_w"] = uniform(2 * H, config.num_classes)
        params["fc_b"] = zeros(config.num_classes)
        return BiLSTM(config, params)

    raise ConfigError(f"unknown model config {type(config).__name__}")


def predict(model, ids) -> np.ndarray:
    """Argmax over logits; an exact tie resolves to Attack (class 1)."""
    logits = model.forward(ids).logits.data
    return (logits[:, 1] >= logits[:, 0]).astype(np.int64)


def model_from_checkpoint(path):
    kind, cfg, arrays = load_checkpoint(path)
    if kind == "textcnn":
        config = TextCNNConfig(
            vocab_size=cfg["vocab_size"],
            embed_dim=cfg["embed_dim"],
            filter_widths=tuple(cfg["filter_widths"]),
            filters_per_width=cfg["filters_per_width"],
            num_classes=cfg["num_classes"],
        )
        cls = TextCNN
    elif kind == "bilstm":
        config = BiLSTMConfig(
            vocab_size=cfg["vocab_size"],
            embed_dim=cfg["embed_dim"],
            hidden_size=cfg["hidden_size"],
            num_classes=cfg["num_classes"],
        )
        cls = BiLSTM
    else:
        raise ConfigError(f"unknown model kind {kind!r} in checkpoint")
    params = {k: Tensor(v.astype(np.float64), requires_grad=True) for k, v in arrays.items()}
    return cls(config, params)


def make_config(kind: str, vocab_size: int, hidden_size: int = 60):
    """Config factory keyed by model kind name."""
    kind = kind.lower()
    if kind == "textcnn":
        return TextCNNConfig(vocab_size=vocab_size, embed_dim=hidden_size,
                             filters_per_width=max(hidden_size // 3, 1))
    if kind == "bilstm":
        return BiLSTMConfig(vocab_size=vocab_size, embed_dim=hidden_size,
                            hidden_size=hidden_size)
    raise ConfigError(f"unknown model kind {kind!r}")
