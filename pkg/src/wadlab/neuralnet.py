"""Loss terms, Adam, the finite-difference gradient oracle, and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

CHECKPOINT_VERSION = 1


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    logits: [B, K] array; labels: [B] int array with labels < K.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ConfigError(f"logits must be [B, K>=2], got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite logits")
    if (labels >= logits.shape[1]).any() or (labels < 0).any():
        raise ConfigError("labels out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    B = logits.shape[0]
    loss = float(-np.log(np.maximum(probs[np.arange(B), labels], 1e-300)).mean())
    grad = probs.copy()
    grad[np.arange(B), labels] -= 1.0
    grad /= B
    return loss, grad


def l2_distance(e, e_prime):
    """Euclidean distance between two vectors and gradients w.r.t. both.

    At distance zero the gradient is defined as the zero vector.
    """
    e = np.asarray(e, dtype=np.float64)
    e_prime = np.asarray(e_prime, dtype=np.float64)
    if e.shape != e_prime.shape:
        raise ConfigError(f"length mismatch: {e.shape} vs {e_prime.shape}")
    diff = e - e_prime
    dist = float(np.sqrt((diff * diff).sum()))
    if dist == 0.0:
        zero = np.zeros_like(diff)
        return 0.0, zero, zero.copy()
    grad = diff / dist
    return dist, grad, -grad


@dataclass
class AdamState:
    """First/second moment accumulators for a fixed list of parameters."""

    shapes: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros(s) for s in self.shapes]
            self.v = [np.zeros(s) for s in self.shapes]

    @classmethod
    def for_params(cls, params, **kwargs) -> "AdamState":
        return cls(shapes=[np.shape(p) for p in params], **kwargs)


def adam_step(params, grads, state: AdamState, lr: float):
    """One Adam update with bias correction; mutates params and state in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigError("params/grads/state length mismatch")
    for g in grads:
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient in adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    per_param: dict
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def finite_difference_check(
    loss_fn,
    params,
    analytic_grads,
    tolerance: float = 1e-3,
    h: float = 1e-4,
    max_coords: int = 50,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    loss_fn() must be a deterministic scalar function of the current contents
    of params (numpy arrays, perturbed in place). At least min(max_coords,
    size) coordinates per tensor are sampled.
    """
    rng = np.random.default_rng(seed)
    per_param = {}
    max_err = 0.0
    n_checked = 0
    for k, (p, g) in enumerate(zip(params, analytic_grads)):
        flat_p = p.reshape(-1)
        flat_g = np.asarray(g).reshape(-1)
        size = flat_p.size
        coords = (
            np.arange(size)
            if size <= max_coords
            else rng.choice(size, size=max_coords, replace=False)
        )
        worst = 0.0
        for c in coords:
            orig = flat_p[c]
            flat_p[c] = orig + h
            lp = loss_fn()
            flat_p[c] = orig - h
            lm = loss_fn()
            flat_p[c] = orig
            fd = (lp - lm) / (2.0 * h)
            a = flat_g[c]
            if abs(fd) > 1e-7:
                err = abs(a - fd) / max(abs(fd), 1e-8)
            elif abs(a) < 1e-6:
                err = 0.0
            else:
                err = abs(a - fd) / max(abs(a), 1e-8)
            worst = max(worst, err)
            n_checked += 1
        per_param[k] = worst
        max_err = max(max_err, worst)
    return GradCheckReport(
        max_rel_err=max_err,
        n_checked=n_checked,
        per_param=per_param,
        tolerance=tolerance,
    )


def save_checkpoint(path, kind: str, config: dict, params: dict) -> None:
    """Single-file checkpoint: versioned JSON header + named float64 tensors."""
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "kind": kind, "config": config}
    )
    arrays = {f"param/{name}": np.asarray(arr) for name, arr in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(header), **arrays)


def load_checkpoint(path):
    """Returns (kind, config dict, params dict)."""
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["__header__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint version {header.get('version')!r}"
            )
        params = {
            key[len("param/") :]: archive[key]
            for key in archive.files
            if key.startswith("param/")
        }
    return header["kind"], header["config"], params
