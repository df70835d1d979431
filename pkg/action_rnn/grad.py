"""Analytic BPTT gradients of the sequence NLL, and a finite-difference oracle."""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .datapipe import EncodedSequence, step_mask
from .errors import ContractViolation, NumericError
from .model import ModelParams, _sigmoid, action_repr, forward, fusion_point, init_params
from .numkernel import log_softmax, make_rng

logger = logging.getLogger(__name__)

FD_EPSILON = 1e-5
FD_TOLERANCE = 1e-4


class Gradients(ModelParams):
    """Same fields and shapes as ModelParams, holding dL/dθ."""


def _check_mask(seq: EncodedSequence, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (seq.n_steps,):
        raise ContractViolation(f"mask of length {mask.shape} for {seq.n_steps} prediction steps")
    return mask


def _first_bad_step(logits: np.ndarray) -> Optional[int]:
    finite = np.isfinite(logits).reshape(-1, logits.shape[-2], logits.shape[-1]).all(axis=(0, 2))
    return None if finite.all() else int(np.argmin(finite))


def _summed_nll(params: ModelParams, seq: EncodedSequence, variant: str, mask: np.ndarray):
    """Unrounded NLL sum, in whatever float type the parameters carry."""
    logits = forward(params, seq, variant).logits
    bad = _first_bad_step(logits)
    if bad is not None:
        raise NumericError(f"non-finite logits at step {bad}")
    logp = log_softmax(logits)
    targets = np.asarray(seq.items[1:])
    return np.sum(-logp[np.arange(len(targets)), targets][mask])


def sequence_loss(params: ModelParams, seq: EncodedSequence, variant: str, mask) -> float:
    """Summed NLL over unmasked steps, forward pass only."""
    return float(_summed_nll(params, seq, variant, _check_mask(seq, mask)))


def batch_backward(
    params: ModelParams,
    seqs: Sequence[EncodedSequence],
    variant: str,
    masks: Sequence,
) -> Tuple[float, Gradients]:
    """Summed loss and gradients of several sequences in one pass through time.

    Shorter sequences are padded to the longest one. Padded steps are masked
    and sit after the last real step, so they add exact zeros everywhere.
    """
    if not seqs or len(seqs) != len(masks):
        raise ContractViolation(f"batch_backward: {len(seqs)} sequences, {len(masks)} masks")
    for seq in seqs:
        if len(seq) < 2:
            raise ContractViolation(
                f"backward: sequence of length {len(seq)} has no prediction step"
            )
    masks = [_check_mask(s, m) for s, m in zip(seqs, masks)]
    point = fusion_point(variant)
    B, L, k, d, V_x = len(seqs), max(s.n_steps for s in seqs), params.k, params.d, params.V_x

    items = np.zeros((B, L), dtype=np.intp)
    targets = np.zeros((B, L), dtype=np.intp)
    M = np.zeros((B, L), dtype=bool)
    for b, (seq, mask) in enumerate(zip(seqs, masks)):
        n = seq.n_steps
        items[b, :n] = seq.items[:n]
        targets[b, :n] = seq.items[1:]
        M[b, :n] = mask
    if items.min() < 0 or max(items.max(), targets.max()) >= V_x:
        raise ContractViolation(f"item index outside vocabulary of {V_x}")

    A = np.zeros((L, B, d))
    has = np.zeros((L, B), dtype=bool)
    slates: List[List[Tuple[int, List[int]]]] = [[] for _ in range(L)]
    if point is not None:
        for b, seq in enumerate(seqs):
            for t in range(seq.n_steps):
                if seq.recs[t]:
                    A[t, b] = action_repr(params, seq.recs[t])
                    has[t, b] = True
                    slates[t].append((b, sorted(seq.recs[t])))

    # forward, one row per sequence
    h = np.zeros((B, k))
    steps = []
    for t in range(L):
        x = params.V_embed[:, items[:, t]].T
        gate = np.where(has[t][:, None], A[t] @ params.W_a.T, 1.0) if point else None
        h_in = h * gate if point == "early" else h
        z = _sigmoid(x @ params.W_z.T + h_in @ params.U_z.T + params.b_z)
        r = _sigmoid(x @ params.W_r.T + h_in @ params.U_r.T + params.b_r)
        hc = np.tanh(x @ params.W_h.T + (r * h_in) @ params.U_h.T + params.b_h)
        h_next = (1.0 - z) * h_in + z * hc
        h_out = h_next * gate if point == "late" else h_next
        steps.append((x, gate, h, h_in, z, r, hc, h_next, h_out))
        h = h_next

    H_out = np.stack([s[-1] for s in steps], axis=1)
    logits = H_out @ params.W_out.T + params.b_out
    bad = _first_bad_step(logits)
    if bad is not None:
        raise NumericError(f"non-finite logits at step {bad}")
    logp = log_softmax(logits)
    rb, rt = np.nonzero(M)
    loss = float(-logp[rb, rt, targets[rb, rt]].sum())

    g = Gradients.zeros_like(params)
    gV = g.V_embed.T

    # softmax cross-entropy over every (sequence, step)
    D = np.exp(logp)
    D[rb, rt, targets[rb, rt]] -= 1.0
    D *= M[:, :, None]
    g.W_out += D.reshape(-1, V_x).T @ H_out.reshape(-1, k)
    g.b_out += D.sum(axis=(0, 1))
    dH_out = D @ params.W_out

    dh_next = np.zeros((B, k))
    for t in reversed(range(L)):
        x, gate, h_prev, h_in, z, r, hc, h_next, _ = steps[t]
        dgate = None
        if point == "late":
            dh = dh_next + dH_out[:, t] * gate
            dgate = dH_out[:, t] * h_next
        else:
            dh = dh_next + dH_out[:, t]

        # GRU: h' = (1-z)*h_in + z*ĥ
        dz = dh * (hc - h_in)
        dh_in = dh * (1.0 - z)

        da_h = dh * z * (1.0 - hc * hc)
        g.W_h += da_h.T @ x
        g.U_h += da_h.T @ (r * h_in)
        g.b_h += da_h.sum(axis=0)
        d_rh = da_h @ params.U_h
        dr = d_rh * h_in
        dh_in += d_rh * r
        dx = da_h @ params.W_h

        da_z = dz * z * (1.0 - z)
        g.W_z += da_z.T @ x
        g.U_z += da_z.T @ h_in
        g.b_z += da_z.sum(axis=0)
        dx += da_z @ params.W_z
        dh_in += da_z @ params.U_z

        da_r = dr * r * (1.0 - r)
        g.W_r += da_r.T @ x
        g.U_r += da_r.T @ h_in
        g.b_r += da_r.sum(axis=0)
        dx += da_r @ params.W_r
        dh_in += da_r @ params.U_r

        np.add.at(gV, items[:, t], dx)

        if point == "early":
            dgate = dh_in * h_prev
            dh_prev = dh_in * gate
        else:
            dh_prev = dh_in

        if dgate is not None and slates[t]:
            dgate = dgate * has[t][:, None]
            g.W_a += dgate.T @ A[t]
            d_action = dgate @ params.W_a
            for b, recs in slates[t]:
                share = d_action[b] / len(recs)
                for i in recs:
                    g.V_embed[:, i] += share

        if not np.isfinite(dh_prev).all():
            raise NumericError(f"non-finite state gradient at step {t}")
        dh_next = dh_prev

    return loss, g


def backward(
    params: ModelParams, seq: EncodedSequence, variant: str, mask
) -> Tuple[float, Gradients]:
    return batch_backward(params, [seq], variant, [mask])


BackwardFn = Callable[[ModelParams, EncodedSequence, str, np.ndarray], Tuple[float, Gradients]]


def _extended(params: ModelParams) -> ModelParams:
    return type(params)(**{name: t.astype(np.longdouble) for name, t in params.items()})


def fd_check(
    params: ModelParams,
    seq: EncodedSequence,
    variant: str,
    mask,
    epsilon: float = FD_EPSILON,
    backward_fn: Optional[BackwardFn] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The perturbed losses are evaluated in ``np.longdouble`` so round-off in the
    difference stays well below the tolerance for gradients near 1e-8.
    """
    mask = _check_mask(seq, mask)
    _, analytic = (backward_fn or backward)(params, seq, variant, mask)
    shifted = _extended(params)
    two_eps = 2 * np.longdouble(epsilon)
    worst = 0.0
    worst_at = None
    for name, tensor in shifted.items():
        a_grad = getattr(analytic, name)
        for idx in np.ndindex(tensor.shape):
            orig = tensor[idx]
            tensor[idx] = orig + epsilon
            up = _summed_nll(shifted, seq, variant, mask)
            tensor[idx] = orig - epsilon
            down = _summed_nll(shifted, seq, variant, mask)
            tensor[idx] = orig
            a = float(a_grad[idx])
            f = float((up - down) / two_eps)
            err = abs(a - f) / max(1e-8, abs(a) + abs(f))
            if err > worst:
                worst, worst_at = err, (name, idx)
    logger.debug("fd_check %s: max relative error %.3e at %s", variant, worst, worst_at)
    return worst


def random_case(
    seed: int,
    V_x: int = 50,
    d: int = 8,
    k: int = 8,
    T: int = 6,
    rec_steps: Optional[Sequence[int]] = None,
) -> Tuple[ModelParams, EncodedSequence]:
    """Small random model and sequence with slates and at least one click."""
    rng = make_rng(seed)
    params = init_params(rng, V_x, d, k)
    for name in ("b_z", "b_r", "b_h", "b_out"):
        getattr(params, name)[:] = rng.normal(0.0, 0.1, size=getattr(params, name).shape)

    items = [int(i) for i in rng.integers(0, V_x, size=T)]
    if rec_steps is None:
        rec_steps = sorted(int(t) for t in rng.choice(T - 1, size=min(2, T - 1), replace=False))
    recs = [()] * T
    for t in rec_steps:
        size = int(rng.integers(1, 6))
        recs[t] = tuple(int(i) for i in rng.choice(V_x, size=size, replace=False))
    if rec_steps:
        t0 = rec_steps[0]
        items[t0 + 1] = recs[t0][int(rng.integers(0, len(recs[t0])))]
    return params, EncodedSequence(items=tuple(items), recs=tuple(recs))


def gradcheck(variant: str, seed: int, mask_mode: str = "all", **sizes) -> float:
    params, seq = random_case(seed, **sizes)
    return fd_check(params, seq, variant, step_mask(seq, mask_mode))
