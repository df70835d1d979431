"""Dense numeric kernels shared by every other module.

All tensors are float64 ``np.ndarray``. Matrices are plain 2-D arrays (row-major),
vectors are 1-D arrays, the RNG is ``np.random.Generator`` seeded through PCG64.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .errors import ContractViolation, NumericError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    return np.random.Generator(np.random.PCG64(int(seed)))


def matvec(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ContractViolation(f"matvec: cannot multiply {W.shape} by {x.shape}")
    return W @ x


def _require_finite(name: str, values: np.ndarray):
    if not np.isfinite(values).all():
        raise NumericError(f"non-finite values in {name}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, stabilised by max-subtraction."""
    _require_finite("logits", logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    _require_finite("logits", logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def topk(scores: np.ndarray, K: int) -> List[int]:
    """Indices of the K largest scores, descending; ties go to the lower index."""
    V = scores.shape[0]
    if K > V or K < 0:
        raise ContractViolation(f"topk: K={K} with only {V} scores")
    # stable sort on negated scores keeps ascending index order among ties
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:K]]


def glorot_init(rng: Rng, rows: int, cols: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ContractViolation(f"glorot_init: bad shape ({rows}, {cols})")
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols))


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    b1: float = ADAM_BETA1,
    b2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ContractViolation("adam_step: params, grads and state cover different tensors")
    for name, g in grads.items():
        if g.shape != params[name].shape or state.m[name].shape != g.shape:
            raise ContractViolation(f"adam_step: shape mismatch for {name}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")

    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def child_rngs(seed: int, n: int) -> List[Rng]:
    """Independent streams derived from one seed (stable for a given n)."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]
