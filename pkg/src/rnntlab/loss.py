"""Transducer loss: exact marginalization over blank/label alignments.

Alignment convention
--------------------
An alignment of a U-token transcript against T' encoder frames is any
interleaving of exactly T' blanks and the U labels in order: C(T'+U, U)
sequences in total. A blank consumes the next frame; a label is scored with the
joint output at the current frame position, and labels emitted after the final
blank (i.e. after all frames are consumed) are scored with the *last* frame's
joint outputs. The loss is the negative log of the summed probability of all
alignments.

The DP runs on a node grid of shape (T'+1, U+1): node (t, u) means t frames
consumed and u labels emitted; alpha[0,0] = log 1 and log P(y|x) =
alpha[T', U] = beta[0, 0]. Blank arcs leave nodes with t < T' at weight
log_softmax(logits[t, u])[blank]; label arcs leave nodes with u < U at weight
log_softmax(logits[min(t, T'-1), u])[y[u]].

Every full alignment crosses each anti-diagonal t + u = n exactly once, so
logsumexp of alpha + beta over any anti-diagonal recovers log P(y|x); tests use
this as a conservation check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import LogitLattice
from .nn import Array, log_softmax

NEG_INF = float("-inf")


class InvalidAlignmentError(ValueError):
    """No alignment exists (a non-empty transcript with zero frames)."""


@dataclass
class LatticeDP:
    """Forward/backward log-probability tables over the (T'+1, U+1) node grid."""

    alpha: Array
    beta: Array
    log_likelihood: float
    _log_probs: Array = field(repr=False)
    _tokens: tuple[int, ...] = field(repr=False)

    @property
    def num_frames(self) -> int:
        return self.alpha.shape[0] - 1

    @property
    def num_labels(self) -> int:
        return self.alpha.shape[1] - 1


def _logadd(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _check_lattice(lattice: LogitLattice, tokens) -> tuple[int, int, tuple[int, ...]]:
    toks = tuple(int(t) for t in tokens)
    t_frames = lattice.num_frames
    n_labels = len(toks)
    if lattice.num_labels != n_labels:
        raise ValueError(
            f"lattice was built for {lattice.num_labels} labels, got {n_labels} tokens"
        )
    num_symbols = lattice.logits.shape[-1] if lattice.logits.ndim == 3 else 0
    if lattice.logits.shape != (t_frames, n_labels + 1, num_symbols):
        raise ValueError(
            f"lattice logits shape {lattice.logits.shape} does not match "
            f"(T'={t_frames}, U+1={n_labels + 1}, symbols)"
        )
    blank_id = num_symbols - 1 if num_symbols else 0
    for tok in toks:
        if not 0 <= tok < blank_id:
            raise ValueError(f"token {tok} out of label range [0, {blank_id})")
    if t_frames == 0 and n_labels > 0:
        raise InvalidAlignmentError(
            f"no alignment exists for {n_labels} labels over zero frames"
        )
    return t_frames, n_labels, toks


def _arc_weights(
    lattice: LogitLattice, toks: tuple[int, ...]
) -> tuple[Array, Array, Array]:
    """Returns (log_probs, blank arc weights (T', U+1), label arc weights
    (T'+1, U)); the label row at t = T' reuses the final frame's weights."""
    t_frames, n_labels = lattice.num_frames, len(toks)
    if t_frames == 0:
        lp = np.zeros((0, n_labels + 1, lattice.logits.shape[-1]))
        return lp, np.zeros((0, n_labels + 1)), np.zeros((1, 0))
    lp = log_softmax(lattice.logits, axis=-1)
    blank_id = lp.shape[-1] - 1
    lb = lp[:, :, blank_id]
    if n_labels:
        cols = np.arange(n_labels)
        ly_body = lp[:, cols, toks]
        ly = np.vstack([ly_body, ly_body[-1]])
    else:
        ly = np.zeros((t_frames + 1, 0))
    return lp, lb, ly


def rnnt_forward(lattice: LogitLattice, tokens) -> tuple[float, LatticeDP]:
    """Negative log-likelihood of `tokens` under the lattice, with DP tables."""
    t_frames, n_labels, toks = _check_lattice(lattice, tokens)
    lp, lb, ly = _arc_weights(lattice, toks)
    alpha = np.full((t_frames + 1, n_labels + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(t_frames + 1):
        for u in range(n_labels + 1):
            if t == 0 and u == 0:
                continue
            from_blank = alpha[t - 1, u] + lb[t - 1, u] if t > 0 else NEG_INF
            from_label = alpha[t, u - 1] + ly[t, u - 1] if u > 0 else NEG_INF
            alpha[t, u] = _logadd(from_blank, from_label)
    beta = np.full((t_frames + 1, n_labels + 1), NEG_INF)
    beta[t_frames, n_labels] = 0.0
    for t in range(t_frames, -1, -1):
        for u in range(n_labels, -1, -1):
            if t == t_frames and u == n_labels:
                continue
            via_blank = lb[t, u] + beta[t + 1, u] if t < t_frames else NEG_INF
            via_label = ly[t, u] + beta[t, u + 1] if u < n_labels else NEG_INF
            beta[t, u] = _logadd(via_blank, via_label)
    log_likelihood = float(alpha[t_frames, n_labels])
    dp = LatticeDP(alpha, beta, log_likelihood, lp, toks)
    return -log_likelihood, dp


def rnnt_grad_logits(lattice: LogitLattice, tokens, dp: LatticeDP) -> Array:
    """Gradient of the loss with respect to the raw logits.

    Arc occupancies from alpha/beta give the gradient in log-probability space;
    chaining through log-softmax makes each (t, u) cell's gradient sum to zero.
    """
    t_frames, n_labels, toks = _check_lattice(lattice, tokens)
    if dp.alpha.shape != (t_frames + 1, n_labels + 1) or dp._tokens != toks:
        raise ValueError("LatticeDP does not correspond to this lattice and tokens")
    lp = dp._log_probs
    num_symbols = lattice.logits.shape[-1]
    grad = np.zeros((t_frames, n_labels + 1, num_symbols))
    if t_frames == 0:
        return grad
    loglik = dp.log_likelihood
    _, lb, ly = _arc_weights(lattice, toks)
    blank_id = num_symbols - 1
    # d(-loglik)/d lp[blank arc at (t,u)] = -occupancy of the arc.
    gamma_blank = np.exp(dp.alpha[:t_frames, :] + lb + dp.beta[1:, :] - loglik)
    grad[:, :, blank_id] -= gamma_blank
    if n_labels:
        gamma_label = np.exp(dp.alpha[:, :n_labels] + ly + dp.beta[:, 1:] - loglik)
        folded = gamma_label[:t_frames].copy()
        # Trailing-label arcs (t = T') share the final frame's logits.
        folded[t_frames - 1] += gamma_label[t_frames]
        cols = np.arange(n_labels)
        grad[:, cols, toks] -= folded
    # Chain rule through log_softmax: dz_j = g_j - softmax_j * sum_k g_k.
    total = grad.sum(axis=-1, keepdims=True)
    grad -= np.exp(lp) * total
    return grad


def anti_diagonal_sums(dp: LatticeDP) -> Array:
    """logsumexp of alpha + beta along each anti-diagonal t + u = n.

    Every value equals log P(y|x) up to roundoff; exposed for conservation
    checks."""
    t_hi, u_hi = dp.alpha.shape[0] - 1, dp.alpha.shape[1] - 1
    sums = np.empty(t_hi + u_hi + 1)
    for n in range(t_hi + u_hi + 1):
        t_lo = max(0, n - u_hi)
        t_up = min(t_hi, n)
        ts = np.arange(t_lo, t_up + 1)
        us = n - ts
        vals = dp.alpha[ts, us] + dp.beta[ts, us]
        peak = np.max(vals)
        if peak == NEG_INF:
            sums[n] = NEG_INF
        else:
            sums[n] = peak + np.log(np.sum(np.exp(vals - peak)))
    return sums


def enumerate_alignments(num_frames: int, num_labels: int) -> list[tuple[int, ...]]:
    """All C(T'+U, U) interleavings of T' blanks and U in-order labels.

    Each pattern is a tuple over {0, 1}: 0 consumes a frame (blank), 1 emits
    the next label. Sizes are capped to keep enumeration tractable."""
    if num_frames < 0 or num_labels < 0:
        raise ValueError("num_frames and num_labels must be non-negative")
    total = num_frames + num_labels
    if total > 12:
        raise ValueError(
            f"refusing to enumerate alignments for T'+U = {total} > 12 positions"
        )
    paths = []
    for label_positions in itertools.combinations(range(total), num_labels):
        pattern = [0] * total
        for pos in label_positions:
            pattern[pos] = 1
        paths.append(tuple(pattern))
    return paths
