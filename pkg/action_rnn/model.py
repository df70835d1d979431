"""Session GRU with optional multiplicative state-action fusion.

Variants:
    navigation  plain session RNN, recommendations ignored
    early       fuse the slate into h_t before the GRU transition
    late        fuse the slate into h_{t+1} for the output layer only;
                the recurrent state keeps the unfused h_{t+1}
    clicks      late architecture, trained on clicked-recommendation steps only
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .datapipe import EncodedSequence
from .errors import ContractViolation
from .numkernel import Rng, glorot_init, matvec, softmax

PARAM_ORDER = (
    "V_embed", "W_z", "W_r", "W_h", "U_z", "U_r", "U_h",
    "b_z", "b_r", "b_h", "W_a", "W_out", "b_out",
)


class Variant:
    NAVIGATION = "navigation"
    EARLY = "early"
    LATE = "late"
    CLICKS = "clicks"

    ALL = (NAVIGATION, EARLY, LATE, CLICKS)


# where the slate enters the step; clicks shares the late architecture
_FUSION_POINT = {
    Variant.NAVIGATION: None,
    Variant.EARLY: "early",
    Variant.LATE: "late",
    Variant.CLICKS: "late",
}


def fusion_point(variant: str) -> Optional[str]:
    if variant not in _FUSION_POINT:
        raise ContractViolation(f"unknown variant {variant!r}; expected one of {Variant.ALL}")
    return _FUSION_POINT[variant]


@dataclass
class ModelParams:
    V_embed: np.ndarray
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray
    W_a: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    @property
    def d(self) -> int:
        return self.V_embed.shape[0]

    @property
    def k(self) -> int:
        return self.W_z.shape[0]

    @property
    def V_x(self) -> int:
        return self.V_embed.shape[1]

    def tensors(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self.tensors().items())

    def copy(self) -> "ModelParams":
        return type(self)(**{name: t.copy() for name, t in self.items()})

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return cls(**{name: np.zeros_like(t) for name, t in other.items()})

    @classmethod
    def shapes(cls, V_x: int, d: int, k: int) -> Dict[str, Tuple[int, ...]]:
        return {
            "V_embed": (d, V_x),
            "W_z": (k, d), "W_r": (k, d), "W_h": (k, d),
            "U_z": (k, k), "U_r": (k, k), "U_h": (k, k),
            "b_z": (k,), "b_r": (k,), "b_h": (k,),
            "W_a": (k, d),
            "W_out": (V_x, k),
            "b_out": (V_x,),
        }


def init_params(rng: Rng, V_x: int, d: int = 40, k: int = 40) -> ModelParams:
    """Glorot-uniform matrices, zero biases; draws follow PARAM_ORDER."""
    tensors = {}
    for name, shape in ModelParams.shapes(V_x, d, k).items():
        if len(shape) == 2:
            tensors[name] = glorot_init(rng, *shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(**tensors)


@dataclass
class GRUStep:
    h_next: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_cand: np.ndarray


@dataclass
class TapeState:
    x_emb: List[np.ndarray] = field(default_factory=list)
    a_emb: List[Optional[np.ndarray]] = field(default_factory=list)
    gate: List[Optional[np.ndarray]] = field(default_factory=list)
    h_in: List[np.ndarray] = field(default_factory=list)  # GRU input state, gated for early
    h: List[np.ndarray] = field(default_factory=list)       # h_{t+1}, the recurrent state
    h_out: List[np.ndarray] = field(default_factory=list)   # what the output layer sees
    z: List[np.ndarray] = field(default_factory=list)
    r: List[np.ndarray] = field(default_factory=list)
    h_cand: List[np.ndarray] = field(default_factory=list)
    logits: Optional[np.ndarray] = None                     # (T-1, V_x)

    @property
    def n_steps(self) -> int:
        return len(self.h)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def embed_item(params: ModelParams, index: int) -> np.ndarray:
    if not 0 <= index < params.V_x:
        raise ContractViolation(f"item index {index} outside vocabulary of {params.V_x}")
    return params.V_embed[:, index].copy()


def action_repr(params: ModelParams, rec_indices: Sequence[int]) -> np.ndarray:
    """Mean embedding of the slate, summed in ascending index order."""
    if len(rec_indices) == 0:
        raise ContractViolation("action_repr: empty slate")
    idx = sorted(int(i) for i in rec_indices)
    if idx[0] < 0 or idx[-1] >= params.V_x:
        raise ContractViolation(f"slate index outside vocabulary of {params.V_x}")
    total = np.zeros(params.d)
    for i in idx:
        total = total + params.V_embed[:, i]
    return total / len(idx)


def gru_cell(params: ModelParams, x_emb: np.ndarray, h: np.ndarray) -> GRUStep:
    z = _sigmoid(matvec(params.W_z, x_emb) + matvec(params.U_z, h) + params.b_z)
    r = _sigmoid(matvec(params.W_r, x_emb) + matvec(params.U_r, h) + params.b_r)
    h_cand = np.tanh(matvec(params.W_h, x_emb) + matvec(params.U_h, r * h) + params.b_h)
    h_next = (1.0 - z) * h + z * h_cand
    return GRUStep(h_next=h_next, z=z, r=r, h_cand=h_cand)


def action_gate(params: ModelParams, a_emb: np.ndarray) -> np.ndarray:
    return matvec(params.W_a, a_emb)


def fuse(h: np.ndarray, a_emb: np.ndarray, W_a: np.ndarray) -> np.ndarray:
    if h.shape[0] != W_a.shape[0]:
        raise ContractViolation(f"fuse: state of size {h.shape[0]} against W_a {W_a.shape}")
    return h * matvec(W_a, a_emb)


def output_logits(params: ModelParams, h_out: np.ndarray) -> np.ndarray:
    return matvec(params.W_out, h_out) + params.b_out


def _run(params: ModelParams, seq: EncodedSequence, variant: str, n_steps: int) -> TapeState:
    point = fusion_point(variant)
    tape = TapeState()
    h = np.zeros(params.k)
    for t in range(n_steps):
        x = embed_item(params, seq.items[t])
        recs = seq.recs[t]
        a = action_repr(params, recs) if (point is not None and len(recs) > 0) else None
        gate = action_gate(params, a) if a is not None else None

        h_in = h * gate if (point == "early" and gate is not None) else h
        step = gru_cell(params, x, h_in)
        h_out = step.h_next * gate if (point == "late" and gate is not None) else step.h_next

        tape.x_emb.append(x)
        tape.a_emb.append(a)
        tape.gate.append(gate)
        tape.h_in.append(h_in)
        tape.h.append(step.h_next)
        tape.h_out.append(h_out)
        tape.z.append(step.z)
        tape.r.append(step.r)
        tape.h_cand.append(step.h_cand)
        h = step.h_next

    H = np.array(tape.h_out).reshape(n_steps, params.k)
    tape.logits = H @ params.W_out.T + params.b_out
    return tape


def forward(params: ModelParams, seq: EncodedSequence, variant: str) -> TapeState:
    """Logits for every prediction step: row t scores items[t+1]."""
    if len(seq) < 2:
        raise ContractViolation(f"forward: sequence of length {len(seq)} has no prediction step")
    return _run(params, seq, variant, len(seq) - 1)


def predict_next(params: ModelParams, seq: EncodedSequence, variant: str) -> np.ndarray:
    """Next-item distribution after the last event, conditioned on that event's slate."""
    if len(seq) < 1:
        raise ContractViolation("predict_next: empty sequence")
    tape = _run(params, seq, variant, len(seq))
    return softmax(tape.logits[-1])
