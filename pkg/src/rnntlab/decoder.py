"""Frame-synchronous beam search for the transducer, plus greedy and
exhaustive-oracle decoders.

Search structure per encoder frame: every live hypothesis repeatedly expands
within the frame. Each expansion computes the joint distribution at the
hypothesis's current prediction row and produces one blank candidate (the
hypothesis advances to the next frame, merged by token sequence with
log-sum-exp) and label candidates (the hypothesis stays in the frame with one
more emitted token). Candidates more than `adaptive_margin` nats below their
best sibling are dropped (margin 0 keeps only the argmax, margin None keeps
everything), the in-frame set is pruned to `beam_width` per expansion round,
and a per-frame cap of `expansion_cap` emissions per hypothesis forces a blank
termination. With beam_width=1 and margin 0 the search commits to the argmax
symbol at every step, which is exactly greedy decoding.

After the last frame an end-of-stream expansion lets finished hypotheses emit
further labels scored with the final frame's joint outputs against a stop
sibling of weight 0. This mirrors the loss's alignment convention (labels may
follow the final blank at the last frame's scores), so with pruning off the
merged score of a hypothesis equals its exact log-likelihood. Label log-probs
are negative, so margin 0 never takes these extensions and greedy output is
unaffected.

Memory: hypotheses held at once are bounded by beam_width * (expansion_cap+1)
regardless of utterance length; the encoder is advanced chunk-by-chunk so
decoding never materializes the full encoder output.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .loss import rnnt_forward
from .model import LogitLattice, RecurrentState, TransducerModel
from .nn import Array, LstmCellState, log_softmax, lstm_step
from .validation import check_feature_matrix

logger = logging.getLogger(__name__)

DEFAULT_BEAM_WIDTH = 8
DEFAULT_ADAPTIVE_MARGIN = 8.0
DEFAULT_EXPANSION_CAP = 10


@dataclass
class Hypothesis:
    """One beam entry.

    pred_states follow the resumable convention: the prediction-network state
    *before* consuming last_token; pred_out is the row produced by consuming
    it and next_states the state after, cached so each hypothesis costs one
    prediction step ever.
    """

    tokens: tuple[int, ...]
    log_prob: float
    pred_states: list[LstmCellState]
    last_token: int
    pred_out: Array = field(repr=False)
    next_states: list[LstmCellState] = field(repr=False)

    def sort_key(self):
        return (-self.log_prob, self.tokens)


def start_hypothesis(model: TransducerModel, init_state: RecurrentState) -> Hypothesis:
    out, next_states = _advance_prediction(
        model, init_state.prediction, init_state.last_token
    )
    return Hypothesis(
        tokens=(),
        log_prob=0.0,
        pred_states=[s.copy() for s in init_state.prediction],
        last_token=init_state.last_token,
        pred_out=out,
        next_states=next_states,
    )


def _advance_prediction(
    model: TransducerModel, states: list[LstmCellState], token: int
) -> tuple[Array, list[LstmCellState]]:
    """Feed one token through the prediction stack; returns (row, new states)."""
    x = model.params["embedding.table"][model._embed_row(token)]
    new_states = []
    for layer, state in zip(model.prediction, states):
        x, new_state = lstm_step(layer, x, state)
        new_states.append(new_state)
    return x, new_states


def extend_hypothesis(
    model: TransducerModel, hyp: Hypothesis, label: int, log_prob: float
) -> Hypothesis:
    out, next_states = _advance_prediction(model, hyp.next_states, label)
    return Hypothesis(
        tokens=hyp.tokens + (int(label),),
        log_prob=log_prob,
        pred_states=hyp.next_states,
        last_token=int(label),
        pred_out=out,
        next_states=next_states,
    )


class Beam:
    """Hypotheses keyed by token sequence; duplicates merge by log-sum-exp."""

    def __init__(self, beam_width: int, adaptive_margin: float | None):
        if beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {beam_width}")
        if adaptive_margin is not None and adaptive_margin < 0:
            raise ValueError(f"adaptive_margin must be >= 0 or None, got {adaptive_margin}")
        self.beam_width = beam_width
        self.adaptive_margin = adaptive_margin
        self._hyps: dict[tuple[int, ...], Hypothesis] = {}

    def __len__(self) -> int:
        return len(self._hyps)

    def add(self, hyp: Hypothesis) -> None:
        """Insert or merge. Identical token sequences share identical
        prediction states by construction, so merging only sums probability."""
        existing = self._hyps.get(hyp.tokens)
        if existing is None:
            self._hyps[hyp.tokens] = hyp
        else:
            existing.log_prob = float(np.logaddexp(existing.log_prob, hyp.log_prob))

    def sorted_hyps(self) -> list[Hypothesis]:
        return sorted(self._hyps.values(), key=Hypothesis.sort_key)

    def best(self) -> Hypothesis:
        if not self._hyps:
            raise ValueError("beam is empty")
        return min(self._hyps.values(), key=Hypothesis.sort_key)

    def prune(self) -> None:
        """Keep the top beam_width hypotheses, then apply the margin against
        the best survivor."""
        ordered = self.sorted_hyps()[: self.beam_width]
        if self.adaptive_margin is not None and ordered:
            floor = ordered[0].log_prob - self.adaptive_margin
            ordered = [h for h in ordered if h.log_prob >= floor]
        self._hyps = {h.tokens: h for h in ordered}


@dataclass
class StepStats:
    peak_hypotheses: int = 0
    forced_terminations: int = 0

    def merge(self, other: "StepStats") -> None:
        self.peak_hypotheses = max(self.peak_hypotheses, other.peak_hypotheses)
        self.forced_terminations += other.forced_terminations


def decode_step(
    model: TransducerModel,
    frame_enc: Array,
    beam: Beam,
    expansion_cap: int = DEFAULT_EXPANSION_CAP,
) -> tuple[Beam, StepStats]:
    """Advance the beam across one encoder frame (see module docstring)."""
    if len(beam) == 0:
        raise ValueError("decode_step requires a non-empty beam")
    blank = model.config.blank_id
    margin = beam.adaptive_margin
    finished = Beam(beam.beam_width, beam.adaptive_margin)
    active = beam.sorted_hyps()
    stats = StepStats(peak_hypotheses=len(active))
    for round_idx in range(expansion_cap + 1):
        if not active:
            break
        active = sorted(active, key=Hypothesis.sort_key)[: beam.beam_width]
        # Retained hypotheses: <= beam_width live ones plus <= beam_width
        # blank-finishes from each earlier round, so at most
        # beam_width * (expansion_cap + 1) at any point in the frame.
        stats.peak_hypotheses = max(stats.peak_hypotheses, len(active) + len(finished))
        children: list[Hypothesis] = []
        for hyp in active:
            lp = log_softmax(model.joint(frame_enc, hyp.pred_out))
            if not np.all(np.isfinite(lp) | (lp == -np.inf)):
                raise ValueError(
                    "joint outputs are non-finite; model or state has diverged"
                )
            threshold = -np.inf if margin is None else float(np.max(lp)) - margin
            blank_total = hyp.log_prob + float(lp[blank])
            if round_idx == expansion_cap:
                if lp[blank] < threshold:
                    stats.forced_terminations += 1
                    logger.debug(
                        "expansion cap %d hit at frame; forcing blank on %s",
                        expansion_cap,
                        hyp.tokens,
                    )
                finished.add(_with_blank(hyp, blank_total))
                continue
            if lp[blank] >= threshold:
                finished.add(_with_blank(hyp, blank_total))
            for label in range(blank):
                if lp[label] >= threshold:
                    children.append(
                        extend_hypothesis(model, hyp, label, hyp.log_prob + float(lp[label]))
                    )
        active = children
    finished.prune()
    if len(finished) == 0:
        raise RuntimeError("beam emptied within a frame; margin/width too aggressive")
    return finished, stats


def _with_blank(hyp: Hypothesis, log_prob: float) -> Hypothesis:
    return Hypothesis(
        tokens=hyp.tokens,
        log_prob=log_prob,
        pred_states=hyp.pred_states,
        last_token=hyp.last_token,
        pred_out=hyp.pred_out,
        next_states=hyp.next_states,
    )


def _final_expansion(
    model: TransducerModel,
    frame_enc: Array,
    beam: Beam,
    expansion_cap: int,
) -> tuple[Beam, StepStats]:
    """End-of-stream label expansion against a stop sibling of weight 0."""
    margin = beam.adaptive_margin
    blank = model.config.blank_id
    final = Beam(beam.beam_width, beam.adaptive_margin)
    for hyp in beam.sorted_hyps():
        final.add(hyp)
    active = beam.sorted_hyps()
    stats = StepStats(peak_hypotheses=len(active))
    for _ in range(expansion_cap):
        if not active:
            break
        active = sorted(active, key=Hypothesis.sort_key)[: beam.beam_width]
        stats.peak_hypotheses = max(stats.peak_hypotheses, len(active) + len(final))
        children: list[Hypothesis] = []
        for hyp in active:
            lp = log_softmax(model.joint(frame_enc, hyp.pred_out))
            # Stop carries weight 0; extensions must be within margin of it.
            threshold = -np.inf if margin is None else -margin
            for label in range(blank):
                if lp[label] >= threshold:
                    children.append(
                        extend_hypothesis(model, hyp, label, hyp.log_prob + float(lp[label]))
                    )
        for child in children:
            final.add(child)
        active = children
    final.prune()
    return final, stats


@dataclass
class DecodeResult:
    tokens: list[int]
    log_prob: float
    final_state: RecurrentState
    frames: int
    encoder_frames: int
    peak_hypotheses: int
    forced_terminations: int


def decode_utterance(
    model: TransducerModel,
    features: Array,
    init_state: RecurrentState | None = None,
    beam_width: int = DEFAULT_BEAM_WIDTH,
    adaptive_margin: float | None = DEFAULT_ADAPTIVE_MARGIN,
    expansion_cap: int = DEFAULT_EXPANSION_CAP,
    final_expansion: bool = True,
) -> DecodeResult:
    """Streaming decode: the encoder is advanced one reduction group at a time
    and each produced frame immediately updates the beam, so memory stays
    bounded by the beam regardless of utterance length.

    Returns the best merged hypothesis, its summed alignment log-probability,
    and a RecurrentState that resumes decoding seamlessly on further audio.
    """
    cfg = model.config
    features = check_feature_matrix(features, cfg.feature_dim)
    if init_state is None:
        init_state = model.zero_state()
    beam = Beam(beam_width, adaptive_margin)
    beam.add(start_hypothesis(model, init_state))
    enc_states = [s.copy() for s in init_state.encoder]
    stats = StepStats(peak_hypotheses=1)
    chunk = max(cfg.time_reduction_factor, 1)
    t_total = features.shape[0]
    enc_frames = 0
    last_frame: Array | None = None
    for lo in range(0, t_total, chunk):
        out = model.encode(features[lo : lo + chunk], enc_states)
        enc_states = out.final_states
        for frame in out.frames:
            beam, step_stats = decode_step(model, frame, beam, expansion_cap)
            stats.merge(step_stats)
            enc_frames += 1
            last_frame = frame
    if final_expansion and last_frame is not None:
        beam, fin_stats = _final_expansion(model, last_frame, beam, expansion_cap)
        stats.merge(fin_stats)
    best = beam.best()
    final_state = RecurrentState(
        encoder=enc_states,
        prediction=[s.copy() for s in best.pred_states],
        last_token=best.last_token,
    )
    return DecodeResult(
        tokens=list(best.tokens),
        log_prob=float(best.log_prob),
        final_state=final_state,
        frames=t_total,
        encoder_frames=enc_frames,
        peak_hypotheses=stats.peak_hypotheses,
        forced_terminations=stats.forced_terminations,
    )


def greedy_decode(
    model: TransducerModel,
    features: Array,
    init_state: RecurrentState | None = None,
) -> list[int]:
    """Argmax decoding: beam_width 1 with margin 0 (the same code path)."""
    return decode_utterance(
        model,
        features,
        init_state,
        beam_width=1,
        adaptive_margin=0.0,
    ).tokens


def oracle_decode(
    model: TransducerModel,
    features: Array,
    max_labels: int,
    init_state: RecurrentState | None = None,
) -> tuple[list[int], float]:
    """Exhaustive argmax of the exact sequence likelihood over all label
    sequences of length 0..max_labels. Intended for tiny instances; refuses
    searches beyond 1e5 candidate sequences."""
    cfg = model.config
    total = sum(cfg.vocab_size**k for k in range(max_labels + 1))
    if total > 100_000:
        raise ValueError(
            f"oracle_decode would enumerate {total} sequences (> 100000); "
            "reduce vocab_size or max_labels"
        )
    if init_state is None:
        init_state = model.zero_state()
    enc = model.encode(features, [s.copy() for s in init_state.encoder]).frames
    best_tokens: list[int] = []
    best_score = -np.inf
    for length in range(max_labels + 1):
        for seq in itertools.product(range(cfg.vocab_size), repeat=length):
            rows, _ = model.predict(seq, init_state.prediction, init_state.last_token)
            logits, _ = model._joint_lattice(enc, rows)
            lattice = LogitLattice(enc.shape[0], length, logits)
            loss, _ = rnnt_forward(lattice, seq)
            score = -loss
            if score > best_score:
                best_tokens, best_score = list(seq), score
    return best_tokens, float(best_score)
