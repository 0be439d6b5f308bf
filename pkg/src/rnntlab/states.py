"""Initial-state strategies for long-form robustness.

Three ways to pick the recurrent state an utterance starts from during
training:

- zero: all-zero cells and memories, start token <sos>. The conventional
  choice and the inference-time behavior for every strategy.
- rss (random state sampling): draw every cell and memory component i.i.d.
  standard normal. Default scope samples only the encoder layers and zeroes
  the prediction network; scope "full" samples both stacks.
- rsp (random state passing): with probability pass_probability reuse a final
  state saved from an earlier mini-batch (drawn uniformly from a bounded
  pool), otherwise start from zero. A reused state carries its utterance's
  last emitted token, which replaces <sos> as the first prediction input, so
  training on the continuation is exactly training on a concatenation.

The pool stores value copies only: deposits copy, draws copy, and no
gradients ever flow across mini-batches through it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, RecurrentState
from .nn import LstmCellState
from .validation import check_in, check_random_state

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("zero", "rss", "rss_encoder_only", "rsp")
RSS_SCOPES = ("encoder_only", "full")
DEFAULT_POOL_CAPACITY = 1024


@dataclass(frozen=True)
class StateStrategy:
    """Configuration of the initial-state rule.

    kind "rss_encoder_only" is accepted as a spelling of rss with its default
    encoder-only scope and normalizes to it.
    """

    kind: str = "zero"
    rss_scope: str = "encoder_only"
    pass_probability: float = 0.5

    def __post_init__(self):
        check_in(self.kind, STRATEGY_KINDS, "kind")
        check_in(self.rss_scope, RSS_SCOPES, "rss_scope")
        if not 0.0 <= self.pass_probability <= 1.0:
            raise ValueError(
                f"pass_probability must be in [0, 1], got {self.pass_probability}"
            )
        if self.kind == "rss_encoder_only":
            object.__setattr__(self, "kind", "rss")
            object.__setattr__(self, "rss_scope", "encoder_only")


class StatePool:
    """Bounded ring buffer of final states saved from completed utterances.

    Entries are tagged with the training step that produced them so callers
    can verify that draws never come from the current mini-batch.
    """

    def __init__(self, capacity: int = DEFAULT_POOL_CAPACITY):
        if capacity < 1:
            raise ValueError(f"pool capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._states: list[RecurrentState] = []
        self._steps: list[int] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._states)

    @property
    def steps(self) -> list[int]:
        return list(self._steps)

    def deposit(self, state: RecurrentState, step: int = 0) -> bool:
        """Save a copy of state; oldest entry is evicted once full. Non-finite
        states are rejected with a warning so a diverging utterance cannot
        contaminate later initializations."""
        if not state.is_finite():
            logger.warning("rejecting non-finite state deposit at step %d", step)
            return False
        entry = state.copy()
        if len(self._states) < self.capacity:
            self._states.append(entry)
            self._steps.append(int(step))
        else:
            self._states[self._next] = entry
            self._steps[self._next] = int(step)
            self._next = (self._next + 1) % self.capacity
        return True

    def sample(self, rng: np.random.Generator) -> RecurrentState:
        """Uniform draw; returns a copy, never an alias into the pool."""
        if not self._states:
            raise ValueError("cannot sample from an empty state pool")
        idx = int(rng.integers(len(self._states)))
        return self._states[idx].copy()


def zero_recurrent_state(config: ModelConfig) -> RecurrentState:
    return RecurrentState(
        encoder=[
            LstmCellState.zeros(config.encoder_hidden, config.encoder_proj)
            for _ in range(config.encoder_layers)
        ],
        prediction=[
            LstmCellState.zeros(config.prediction_hidden, config.prediction_proj)
            for _ in range(config.prediction_layers)
        ],
        last_token=config.sos_id,
    )


def _sampled_state(config: ModelConfig, scope: str, rng: np.random.Generator) -> RecurrentState:
    encoder = [
        LstmCellState(
            rng.standard_normal(config.encoder_hidden),
            rng.standard_normal(config.encoder_proj),
        )
        for _ in range(config.encoder_layers)
    ]
    if scope == "full":
        prediction = [
            LstmCellState(
                rng.standard_normal(config.prediction_hidden),
                rng.standard_normal(config.prediction_proj),
            )
            for _ in range(config.prediction_layers)
        ]
    else:
        prediction = [
            LstmCellState.zeros(config.prediction_hidden, config.prediction_proj)
            for _ in range(config.prediction_layers)
        ]
    return RecurrentState(encoder, prediction, config.sos_id)


def initial_state(
    strategy: StateStrategy,
    config: ModelConfig,
    rng: np.random.Generator | int | None = None,
    pool: StatePool | None = None,
) -> RecurrentState:
    """Training-time initial state for one utterance under the strategy.

    rsp draws its coin and pool index from rng; an empty (or absent) pool
    falls back to the zero state, which is the expected situation during the
    first steps of training while the pool fills.
    """
    if strategy.kind == "zero":
        return zero_recurrent_state(config)
    rng = check_random_state(rng)
    if strategy.kind == "rss":
        return _sampled_state(config, strategy.rss_scope, rng)
    # rsp: the coin is drawn before consulting the pool so the rng stream
    # does not depend on pool occupancy.
    passed = rng.random() < strategy.pass_probability
    if not passed:
        return zero_recurrent_state(config)
    if pool is None or len(pool) == 0:
        logger.debug("rsp pass drawn but pool empty; falling back to zero state")
        return zero_recurrent_state(config)
    return pool.sample(rng)


def deposit_final_states(
    pool: StatePool, states: list[RecurrentState], step: int = 0
) -> int:
    """Deposit a batch of final states; returns how many were accepted."""
    return sum(1 for state in states if pool.deposit(state, step))


def inference_state(strategy: StateStrategy, config: ModelConfig) -> RecurrentState:
    """Inference always starts from zero, the mean of the training-time
    initial-state distributions, regardless of strategy."""
    del strategy
    return zero_recurrent_state(config)
