"""Training loop: batch assembly, state-strategy injection, loss/gradients,
Adam updates with warmup and clipping, periodic WER evaluation, and a
divergence guard.

The objective is the summed per-utterance negative log-likelihood of the
batch (gradients sum over utterances, no per-frame normalization). A step
whose loss or gradients are non-finite is aborted before touching the
parameters; 25 consecutive aborted steps raise DivergenceError.

Evaluation rows go to metrics.csv with fixed %.6f formatting and no wall
clock or other nondeterministic fields, so two runs with the same seed write
byte-identical files.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DomainSpec, Utterance, make_minibatch
from .decoder import decode_utterance, greedy_decode
from .loss import rnnt_forward, rnnt_grad_logits
from .metrics import WerBreakdown, bucket_label, corpus_wer
from .model import TransducerModel
from .nn import AdamState, adam_init, adam_step, clip_by_global_norm
from .states import StatePool, StateStrategy, deposit_final_states, initial_state
from .validation import check_in

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_ABORTS = 25

METRICS_HEADER = (
    "step,train_loss,test_set,bucket,n_utts,ref_tokens,wer,del_rate,ins_rate,sub_rate"
)


class DivergenceError(RuntimeError):
    """Training aborted: too many consecutive non-finite steps."""


@dataclass
class TrainConfig:
    batch_size: int = 8
    steps: int = 200
    eval_every: int = 50
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    clip_norm: float = 5.0
    seed: int = 0
    state_strategy: StateStrategy = field(default_factory=StateStrategy)
    sampling_strategy: str = "uniform_domain"
    pool_capacity: int = 1024
    eval_decode: str = "greedy"
    eval_beam_width: int = 8
    eval_margin: float | None = 8.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")
        check_in(self.eval_decode, ("greedy", "beam"), "eval_decode")


@dataclass
class TrainData:
    """Training source (either on-the-fly domain synthesis or a fixed
    utterance list cycled in order) plus named evaluation sets."""

    domains: list[DomainSpec] | None = None
    utterances: list[Utterance] | None = None
    eval_sets: dict[str, list[Utterance]] = field(default_factory=dict)

    def __post_init__(self):
        if (self.domains is None) == (self.utterances is None):
            raise ValueError("provide exactly one of domains or utterances")
        if self.utterances is not None and not self.utterances:
            raise ValueError("utterances must be non-empty when given")


@dataclass
class TrainMetricsRow:
    step: int
    train_loss: float
    test_set: str
    bucket: str
    n_utts: int
    breakdown: WerBreakdown
    wall_clock: float = field(default_factory=time.time, compare=False)

    def csv_line(self) -> str:
        b = self.breakdown
        return (
            f"{self.step},{self.train_loss:.6f},{self.test_set},{self.bucket},"
            f"{self.n_utts},{b.ref_len},{b.wer:.6f},{b.deletion_rate:.6f},"
            f"{b.insertion_rate:.6f},{b.substitution_rate:.6f}"
        )


def learning_rate_for_step(config: TrainConfig, step: int) -> float:
    """Linear warmup from lr/warmup_steps to lr, constant afterwards."""
    if config.warmup_steps <= 0:
        return config.learning_rate
    return config.learning_rate * min(1.0, (step + 1) / config.warmup_steps)


def train_step(
    model: TransducerModel,
    batch: list[Utterance],
    strategy: StateStrategy,
    opt: AdamState,
    rng: np.random.Generator,
    pool: StatePool | None = None,
    clip_norm: float | None = 5.0,
    lr: float | None = None,
    step: int = 0,
) -> float:
    """One optimizer update from a batch. Returns the summed loss, or NaN if
    the step was aborted by the divergence guard (parameters untouched).

    Final states are deposited into the pool only after the update, so RSP
    draws always come from strictly earlier steps.
    """
    if not batch:
        raise ValueError("train_step requires a non-empty batch")
    grads = model.zero_grads()
    total = 0.0
    finals = []
    for utt in batch:
        init = initial_state(strategy, model.config, rng, pool)
        fwd = model.forward_lattice(utt.features, utt.tokens, init_state=init)
        if fwd.lattice.num_frames == 0 and utt.tokens:
            logger.warning(
                "utterance %s too short to align (%d feature frames); skipped",
                utt.id,
                utt.features.shape[0],
            )
            continue
        loss, dp = rnnt_forward(fwd.lattice, utt.tokens)
        grad_logits = rnnt_grad_logits(fwd.lattice, utt.tokens, dp)
        utt_grads, _ = model.backward_lattice(fwd, grad_logits)
        for key in grads:
            grads[key] += utt_grads[key]
        total += loss
        finals.append(fwd.final_state)
    bad = not math.isfinite(total) or any(
        not np.all(np.isfinite(g)) for g in grads.values()
    )
    if bad:
        logger.warning("non-finite loss or gradients at step %d; update aborted", step)
        return math.nan
    if clip_norm is not None:
        clip_by_global_norm(grads, clip_norm)
    adam_step(model.params, grads, opt, lr=lr)
    if strategy.kind == "rsp" and pool is not None:
        deposit_final_states(pool, finals, step=step)
    return total


def evaluate_sets(
    model: TransducerModel, config: TrainConfig, eval_sets: dict[str, list[Utterance]]
) -> list[tuple[str, str, int, WerBreakdown]]:
    """Decode every evaluation set; returns (set, bucket, n_utts, breakdown)
    tuples with an "all" bucket first per set. Decoding starts from the zero
    state, the inference contract for every training strategy."""
    out: list[tuple[str, str, int, WerBreakdown]] = []
    for name in sorted(eval_sets):
        utts = eval_sets[name]
        if not utts:
            continue
        pairs = []
        for utt in utts:
            if config.eval_decode == "greedy":
                hyp = greedy_decode(model, utt.features)
            else:
                hyp = decode_utterance(
                    model,
                    utt.features,
                    beam_width=config.eval_beam_width,
                    adaptive_margin=config.eval_margin,
                ).tokens
            pairs.append((utt.tokens, hyp))
        total, buckets = corpus_wer(pairs)
        counts: dict[str, int] = {}
        for ref, _ in pairs:
            label = bucket_label(len(ref))
            counts[label] = counts.get(label, 0) + 1
        out.append((name, "all", len(pairs), total))
        for label in sorted(buckets, key=_bucket_sort_key):
            out.append((name, label, counts[label], buckets[label]))
    return out


def _bucket_sort_key(label: str) -> int:
    return int(label.lstrip(">").split("-")[0])


@dataclass
class TrainResult:
    model: TransducerModel
    opt: AdamState
    pool: StatePool
    rows: list[TrainMetricsRow]
    final_step: int
    rng: np.random.Generator
    metrics_path: Path | None = None


def write_metrics_csv(path: str | Path, rows: list[TrainMetricsRow]) -> Path:
    path = Path(path)
    lines = [METRICS_HEADER] + [row.csv_line() for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def run_training(
    model: TransducerModel,
    config: TrainConfig,
    data: TrainData,
    out_dir: str | Path | None = None,
    start_step: int = 0,
    opt: AdamState | None = None,
    pool: StatePool | None = None,
    rng: np.random.Generator | None = None,
) -> TrainResult:
    """Run config.steps optimizer steps from start_step, evaluating at the
    start, every eval_every steps, and at the end. Returns history plus the
    live optimizer/pool/rng so callers can checkpoint or resume."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if opt is None:
        opt = adam_init(model.params, lr=config.learning_rate)
    if pool is None:
        pool = StatePool(config.pool_capacity)
    rows: list[TrainMetricsRow] = []
    window: list[float] = []

    def do_eval(step: int) -> None:
        train_loss = float(np.mean(window)) if window else math.nan
        for name, bucket, n_utts, breakdown in evaluate_sets(
            model, config, data.eval_sets
        ):
            rows.append(
                TrainMetricsRow(step, train_loss, name, bucket, n_utts, breakdown)
            )

    end_step = start_step + config.steps
    consecutive_aborts = 0
    try:
        do_eval(start_step)
        for step in range(start_step, end_step):
            if data.domains is not None:
                batch = make_minibatch(
                    config.sampling_strategy, data.domains, config.batch_size, rng
                )
            else:
                n = len(data.utterances)
                batch = [
                    data.utterances[(step * config.batch_size + i) % n]
                    for i in range(config.batch_size)
                ]
            loss = train_step(
                model,
                batch,
                config.state_strategy,
                opt,
                rng,
                pool=pool,
                clip_norm=config.clip_norm,
                lr=learning_rate_for_step(config, step),
                step=step,
            )
            if math.isnan(loss):
                consecutive_aborts += 1
                if consecutive_aborts >= MAX_CONSECUTIVE_ABORTS:
                    raise DivergenceError(
                        f"{consecutive_aborts} consecutive aborted steps "
                        f"(last at step {step})"
                    )
            else:
                consecutive_aborts = 0
                window.append(loss / len(batch))
            done = step + 1
            if done == end_step or (done - start_step) % config.eval_every == 0:
                do_eval(done)
                window.clear()
    finally:
        metrics_path = None
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            metrics_path = write_metrics_csv(out / "metrics.csv", rows)
    return TrainResult(
        model=model,
        opt=opt,
        pool=pool,
        rows=rows,
        final_step=end_step,
        rng=rng,
        metrics_path=metrics_path,
    )
