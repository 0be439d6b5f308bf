"""Streaming transducer model: projected-LSTM encoder with mid-stack time
reduction, an embedding + projected-LSTM prediction network, and a feed-forward
joint producing per-(frame, label-position) logits over labels plus blank.

Conventions that the rest of the package relies on:

* Token ids 0..vocab_size-1 are labels, blank_id = vocab_size (a logit index,
  never embedded), sos_id = vocab_size + 1 (an embedding row, never a logit).
* ``predict`` consumes init_token followed by the given tokens and returns one
  output row per consumed token (U+1 rows). The *returned* layer states
  deliberately exclude the effect of the final consumed token: pairing those
  states with that token as the next ``init_token`` resumes the network so that
  carried-over computation is elementwise identical to teacher forcing the
  concatenated token sequence. ``RecurrentState.last_token`` holds the pending
  token (initially sos).
* ``encode`` advances layer states over every input frame; the time-reduction
  reshape drops a trailing partial group within each call, so chunked calls
  match a single call whenever chunk lengths are multiples of the reduction
  factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .nn import Array, LstmCellState, LstmLayerParams
from .validation import check_feature_matrix, check_in, check_positive


@dataclass
class ModelConfig:
    feature_dim: int = 8
    encoder_layers: int = 2
    encoder_hidden: int = 32
    encoder_proj: int = 16
    time_reduction_factor: int = 2
    time_reduction_after: int = 1
    prediction_layers: int = 1
    prediction_hidden: int = 32
    prediction_proj: int = 16
    joint_dim: int = 16
    vocab_size: int = 16
    embedding_dim: int = 8
    joint_mode: str = "concat"

    def __post_init__(self) -> None:
        for name in (
            "feature_dim",
            "encoder_layers",
            "encoder_hidden",
            "encoder_proj",
            "prediction_layers",
            "prediction_hidden",
            "prediction_proj",
            "joint_dim",
            "vocab_size",
            "embedding_dim",
            "time_reduction_factor",
        ):
            check_positive(getattr(self, name), name)
        check_in(self.joint_mode, ("concat", "add"), "joint_mode")
        if self.joint_mode == "add" and self.encoder_proj != self.prediction_proj:
            raise ValueError(
                "joint_mode 'add' requires encoder_proj == prediction_proj, got "
                f"{self.encoder_proj} vs {self.prediction_proj}"
            )
        if self.time_reduction_factor > 1:
            if not (1 <= self.time_reduction_after < self.encoder_layers):
                raise ValueError(
                    "time_reduction_after must satisfy "
                    "1 <= time_reduction_after < encoder_layers when the "
                    f"reduction factor is {self.time_reduction_factor}, got "
                    f"{self.time_reduction_after} with {self.encoder_layers} layers"
                )

    @property
    def blank_id(self) -> int:
        return self.vocab_size

    @property
    def sos_id(self) -> int:
        return self.vocab_size + 1

    @property
    def num_symbols(self) -> int:
        """Size of the joint's output distribution: labels plus blank."""
        return self.vocab_size + 1


@dataclass
class RecurrentState:
    """Carryable state: per-layer encoder and prediction LSTM states plus the
    pending prediction token (see module docstring for the boundary rule)."""

    encoder: list[LstmCellState]
    prediction: list[LstmCellState]
    last_token: int

    def copy(self) -> "RecurrentState":
        return RecurrentState(
            [s.copy() for s in self.encoder],
            [s.copy() for s in self.prediction],
            self.last_token,
        )

    def is_finite(self) -> bool:
        for s in self.encoder + self.prediction:
            if not (np.all(np.isfinite(s.cell)) and np.all(np.isfinite(s.memory))):
                return False
        return True


@dataclass
class LogitLattice:
    """Joint outputs for one utterance: logits[t, u, k] scores symbol k at
    encoder frame t with u labels already emitted."""

    num_frames: int
    num_labels: int
    logits: Array


@dataclass
class EncoderOutput:
    frames: Array
    final_states: list[LstmCellState]


@dataclass
class _LatticeCache:
    enc_layer_caches: list[list[nn.LstmStepCache]]
    enc_pre_reduction_len: int
    pred_layer_caches: list[list[nn.LstmStepCache]]
    embed_rows: Array
    enc_frames: Array
    pred_rows: Array
    joint_hidden: Array
    num_frames: int
    num_labels: int


@dataclass
class ForwardResult:
    """forward_lattice output: the lattice, the continuation state, and the
    activations backward_lattice needs."""

    lattice: LogitLattice
    final_state: RecurrentState
    cache: _LatticeCache = field(repr=False)


def time_reduce(frames: Array, factor: int) -> Array:
    """Concatenate each group of `factor` consecutive frames into one frame,
    dropping a trailing partial group. A factor of 1 is the identity."""
    if factor == 1:
        return frames
    t_len, dim = frames.shape
    kept = (t_len // factor) * factor
    return frames[:kept].reshape(t_len // factor, factor * dim)


def time_reduce_backward(grad_reduced: Array, factor: int, orig_len: int, dim: int) -> Array:
    """Gradient of `time_reduce`: dropped trailing frames get zero gradient."""
    if factor == 1:
        return grad_reduced
    out = np.zeros((orig_len, dim))
    kept = grad_reduced.shape[0] * factor
    if kept:
        out[:kept] = grad_reduced.reshape(kept, dim)
    return out


class TransducerModel:
    """Holds the parameter arrays and implements all network computations.

    Parameters live in a flat name->array dict (`self.params`); the typed layer
    views share those buffers, so in-place optimizer updates are visible
    everywhere. All methods are pure given (params, inputs) and thread-safe for
    concurrent reads.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Array]):
        self.config = config
        self.params = params
        self.encoder: list[LstmLayerParams] = [
            self._layer_view(f"encoder.{i}") for i in range(config.encoder_layers)
        ]
        self.prediction: list[LstmLayerParams] = [
            self._layer_view(f"prediction.{i}") for i in range(config.prediction_layers)
        ]
        self._check_param_shapes()

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig, seed: int | np.random.Generator = 0) -> "TransducerModel":
        """Fresh model with fan-in uniform weights drawn in a fixed order from
        one seeded generator, so a (config, seed) pair is reproducible."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        params: dict[str, Array] = {}
        for i in range(config.encoder_layers):
            in_dim = cls._encoder_input_dim(config, i)
            layer = LstmLayerParams.init(rng, in_dim, config.encoder_hidden, config.encoder_proj)
            cls._store_layer(params, f"encoder.{i}", layer)
        for i in range(config.prediction_layers):
            in_dim = config.embedding_dim if i == 0 else config.prediction_proj
            layer = LstmLayerParams.init(
                rng, in_dim, config.prediction_hidden, config.prediction_proj
            )
            cls._store_layer(params, f"prediction.{i}", layer)
        params["embedding.table"] = nn.uniform_init(
            rng, (config.vocab_size + 1, config.embedding_dim), config.embedding_dim
        )
        joint_in = cls._joint_input_dim(config)
        params["joint.w1"] = nn.uniform_init(rng, (config.joint_dim, joint_in), joint_in)
        params["joint.b1"] = np.zeros(config.joint_dim)
        params["joint.w2"] = nn.uniform_init(
            rng, (config.num_symbols, config.joint_dim), config.joint_dim
        )
        params["joint.b2"] = np.zeros(config.num_symbols)
        return cls(config, params)

    @staticmethod
    def _encoder_input_dim(config: ModelConfig, layer_index: int) -> int:
        if layer_index == 0:
            return config.feature_dim
        width = config.encoder_proj
        if config.time_reduction_factor > 1 and layer_index == config.time_reduction_after:
            width *= config.time_reduction_factor
        return width

    @staticmethod
    def _joint_input_dim(config: ModelConfig) -> int:
        if config.joint_mode == "add":
            return config.encoder_proj
        return config.encoder_proj + config.prediction_proj

    @staticmethod
    def _store_layer(params: dict[str, Array], prefix: str, layer: LstmLayerParams) -> None:
        params[f"{prefix}.w_x"] = layer.w_x
        params[f"{prefix}.w_m"] = layer.w_m
        params[f"{prefix}.b"] = layer.b
        params[f"{prefix}.w_proj"] = layer.w_proj

    def _layer_view(self, prefix: str) -> LstmLayerParams:
        try:
            return LstmLayerParams(
                self.params[f"{prefix}.w_x"],
                self.params[f"{prefix}.w_m"],
                self.params[f"{prefix}.b"],
                self.params[f"{prefix}.w_proj"],
            )
        except KeyError as exc:
            raise ValueError(f"parameter table is missing {exc.args[0]}") from None

    def _check_param_shapes(self) -> None:
        cfg = self.config
        for i, layer in enumerate(self.encoder):
            expect = self._encoder_input_dim(cfg, i)
            if layer.input_dim != expect:
                raise ValueError(
                    f"encoder.{i} input dim {layer.input_dim}, expected {expect}"
                )
        table = self.params["embedding.table"]
        if table.shape != (cfg.vocab_size + 1, cfg.embedding_dim):
            raise ValueError(
                f"embedding.table shape {table.shape}, expected "
                f"{(cfg.vocab_size + 1, cfg.embedding_dim)}"
            )
        if self.params["joint.w1"].shape != (cfg.joint_dim, self._joint_input_dim(cfg)):
            raise ValueError("joint.w1 shape does not match config")
        if self.params["joint.w2"].shape != (cfg.num_symbols, cfg.joint_dim):
            raise ValueError("joint.w2 shape does not match config")

    # -- state helpers -------------------------------------------------------

    def zero_state(self) -> RecurrentState:
        cfg = self.config
        return RecurrentState(
            [layer.zero_state() for layer in self.encoder],
            [layer.zero_state() for layer in self.prediction],
            cfg.sos_id,
        )

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> dict[str, Array]:
        return {k: np.zeros_like(p) for k, p in self.params.items()}

    # -- embedding -----------------------------------------------------------

    def _embed_row(self, token: int) -> int:
        cfg = self.config
        if token == cfg.sos_id:
            return cfg.vocab_size
        if 0 <= token < cfg.vocab_size:
            return int(token)
        raise ValueError(
            f"token {token} is not embeddable (labels 0..{cfg.vocab_size - 1} or sos)"
        )

    # -- encoder -------------------------------------------------------------

    def encode(
        self, features: Array, states: list[LstmCellState] | None = None
    ) -> EncoderOutput:
        """Run the encoder over (T, feature_dim) frames with optional carried
        layer states; returns reduced-rate frames and the advanced states."""
        out, finals, _, _ = self._encode_cached(features, states)
        return EncoderOutput(out, finals)

    def _encode_cached(
        self, features: Array, states: list[LstmCellState] | None
    ) -> tuple[Array, list[LstmCellState], list[list[nn.LstmStepCache]], int]:
        cfg = self.config
        features = check_feature_matrix(features, cfg.feature_dim)
        if states is None:
            states = [layer.zero_state() for layer in self.encoder]
        if len(states) != cfg.encoder_layers:
            raise ValueError(
                f"expected {cfg.encoder_layers} encoder states, got {len(states)}"
            )
        x = features
        finals: list[LstmCellState] = []
        layer_caches: list[list[nn.LstmStepCache]] = []
        pre_reduction_len = 0
        for i, layer in enumerate(self.encoder):
            x, final, caches = nn.lstm_sequence(layer, x, states[i])
            finals.append(final)
            layer_caches.append(caches)
            if cfg.time_reduction_factor > 1 and i + 1 == cfg.time_reduction_after:
                pre_reduction_len = x.shape[0]
                x = time_reduce(x, cfg.time_reduction_factor)
        return x, finals, layer_caches, pre_reduction_len

    # -- prediction network ----------------------------------------------------

    def predict(
        self,
        tokens: Sequence[int],
        states: list[LstmCellState] | None = None,
        init_token: int | None = None,
    ) -> tuple[Array, list[LstmCellState]]:
        """Teacher-forced prediction network.

        Returns (rows, states): rows[u] is the top-layer output after consuming
        (init_token, tokens[0], ..., tokens[u-1])'s successor, giving U+1 rows,
        one per consumed token. The returned states exclude the final consumed
        token (see module docstring); callers resume by passing the final token
        as the next init_token.
        """
        rows, finals, _, _ = self._predict_cached(tokens, states, init_token)
        return rows, finals

    def _predict_cached(
        self,
        tokens: Sequence[int],
        states: list[LstmCellState] | None,
        init_token: int | None,
    ) -> tuple[Array, list[LstmCellState], list[list[nn.LstmStepCache]], Array]:
        cfg = self.config
        if init_token is None:
            init_token = cfg.sos_id
        if states is None:
            states = [layer.zero_state() for layer in self.prediction]
        if len(states) != cfg.prediction_layers:
            raise ValueError(
                f"expected {cfg.prediction_layers} prediction states, got {len(states)}"
            )
        token_list = [int(t) for t in tokens]
        for t in token_list:
            if not 0 <= t < cfg.vocab_size:
                raise ValueError(
                    f"prediction input token {t} out of label range [0, {cfg.vocab_size})"
                )
        rows_idx = np.array(
            [self._embed_row(init_token)] + [self._embed_row(t) for t in token_list],
            dtype=np.int64,
        )
        x = self.params["embedding.table"][rows_idx]
        layer_caches: list[list[nn.LstmStepCache]] = []
        finals: list[LstmCellState] = []
        for i, layer in enumerate(self.prediction):
            x, _, caches = nn.lstm_sequence(layer, x, states[i])
            layer_caches.append(caches)
            # Resumable state: the layer state before its last step. For a
            # single consumed token that is the caller's initial state.
            finals.append(
                LstmCellState(caches[-1].c_prev.copy(), caches[-1].m_prev.copy())
            )
        return x, finals, layer_caches, rows_idx

    # -- joint ----------------------------------------------------------------

    def joint(self, enc_frame: Array, pred_row: Array) -> Array:
        """Logits over labels+blank for one (encoder frame, prediction row)."""
        cfg = self.config
        if enc_frame.shape != (cfg.encoder_proj,):
            raise ValueError(
                f"joint enc_frame shape {enc_frame.shape}, expected ({cfg.encoder_proj},)"
            )
        if pred_row.shape != (cfg.prediction_proj,):
            raise ValueError(
                f"joint pred_row shape {pred_row.shape}, expected ({cfg.prediction_proj},)"
            )
        if cfg.joint_mode == "add":
            combined = enc_frame + pred_row
        else:
            combined = np.concatenate([enc_frame, pred_row])
        logits, _ = nn.tanh_ffn(
            combined,
            self.params["joint.w1"],
            self.params["joint.b1"],
            self.params["joint.w2"],
            self.params["joint.b2"],
        )
        return logits

    def _joint_lattice(self, enc: Array, pred: Array) -> tuple[Array, Array]:
        """Vectorized joint over all (t, u) pairs; returns (logits, hidden)."""
        cfg = self.config
        w1 = self.params["joint.w1"]
        if cfg.joint_mode == "add":
            a = enc @ w1.T
            b = pred @ w1.T
        else:
            a = enc @ w1[:, : cfg.encoder_proj].T
            b = pred @ w1[:, cfg.encoder_proj :].T
        hidden = np.tanh(a[:, None, :] + b[None, :, :] + self.params["joint.b1"])
        logits = hidden @ self.params["joint.w2"].T + self.params["joint.b2"]
        return logits, hidden

    # -- full lattice ----------------------------------------------------------

    def forward_lattice(
        self,
        features: Array,
        tokens: Sequence[int],
        init_state: RecurrentState | None = None,
    ) -> ForwardResult:
        """Encoder + prediction + joint over the full (T', U+1) grid.

        Also returns the continuation RecurrentState: advanced encoder states,
        resumable prediction states, and last_token updated to the final
        transcript token (unchanged for an empty transcript).
        """
        if init_state is None:
            init_state = self.zero_state()
        enc, enc_finals, enc_caches, pre_len = self._encode_cached(
            features, init_state.encoder
        )
        pred, pred_finals, pred_caches, embed_rows = self._predict_cached(
            tokens, init_state.prediction, init_state.last_token
        )
        logits, hidden = self._joint_lattice(enc, pred)
        token_list = [int(t) for t in tokens]
        last_token = token_list[-1] if token_list else init_state.last_token
        cache = _LatticeCache(
            enc_layer_caches=enc_caches,
            enc_pre_reduction_len=pre_len,
            pred_layer_caches=pred_caches,
            embed_rows=embed_rows,
            enc_frames=enc,
            pred_rows=pred,
            joint_hidden=hidden,
            num_frames=enc.shape[0],
            num_labels=len(token_list),
        )
        lattice = LogitLattice(enc.shape[0], len(token_list), logits)
        final_state = RecurrentState(enc_finals, pred_finals, last_token)
        return ForwardResult(lattice, final_state, cache)

    def backward_lattice(
        self, result: ForwardResult, grad_logits: Array
    ) -> tuple[dict[str, Array], RecurrentState]:
        """Backward pass from d loss / d logits to parameter gradients and the
        gradient with respect to the initial RecurrentState."""
        cfg = self.config
        cache = result.cache
        if grad_logits.shape != cache.joint_hidden.shape[:2] + (cfg.num_symbols,):
            raise ValueError(
                f"grad_logits shape {grad_logits.shape} does not match lattice "
                f"{cache.joint_hidden.shape[:2] + (cfg.num_symbols,)}"
            )
        grads = self.zero_grads()
        hidden = cache.joint_hidden
        flat_g = grad_logits.reshape(-1, cfg.num_symbols)
        flat_h = hidden.reshape(-1, cfg.joint_dim)
        grads["joint.w2"] += flat_g.T @ flat_h
        grads["joint.b2"] += flat_g.sum(axis=0)
        grad_hidden = grad_logits @ self.params["joint.w2"]
        grad_pre = grad_hidden * (1.0 - hidden * hidden)
        grads["joint.b1"] += grad_pre.sum(axis=(0, 1))
        w1 = self.params["joint.w1"]
        if cfg.joint_mode == "add":
            grads["joint.w1"] += np.einsum("tuj,tp->jp", grad_pre, cache.enc_frames)
            grads["joint.w1"] += np.einsum("tuj,up->jp", grad_pre, cache.pred_rows)
            grad_enc = np.einsum("tuj,jp->tp", grad_pre, w1)
            grad_pred = np.einsum("tuj,jp->up", grad_pre, w1)
        else:
            w1_enc = w1[:, : cfg.encoder_proj]
            w1_pred = w1[:, cfg.encoder_proj :]
            grads["joint.w1"][:, : cfg.encoder_proj] += np.einsum(
                "tuj,tp->jp", grad_pre, cache.enc_frames
            )
            grads["joint.w1"][:, cfg.encoder_proj :] += np.einsum(
                "tuj,up->jp", grad_pre, cache.pred_rows
            )
            grad_enc = np.einsum("tuj,jp->tp", grad_pre, w1_enc)
            grad_pred = np.einsum("tuj,jp->up", grad_pre, w1_pred)

        grad_init_pred = self._backward_prediction(cache, grad_pred, grads)
        grad_init_enc = self._backward_encoder(cache, grad_enc, grads)
        grad_init = RecurrentState(
            grad_init_enc, grad_init_pred, result.final_state.last_token
        )
        return grads, grad_init

    def _backward_prediction(
        self, cache: _LatticeCache, grad_rows: Array, grads: dict[str, Array]
    ) -> list[LstmCellState]:
        grad_x = grad_rows
        grad_inits: list[LstmCellState] = [None] * len(self.prediction)  # type: ignore[list-item]
        for i in range(len(self.prediction) - 1, -1, -1):
            layer = self.prediction[i]
            layer_grads = LstmLayerParams.zeros_like(layer)
            grad_x, grad_init = nn.lstm_sequence_backward(
                layer, cache.pred_layer_caches[i], grad_x, None, layer_grads
            )
            self._accumulate_layer(grads, f"prediction.{i}", layer_grads)
            grad_inits[i] = grad_init
        np.add.at(grads["embedding.table"], cache.embed_rows, grad_x)
        return grad_inits

    def _backward_encoder(
        self, cache: _LatticeCache, grad_out: Array, grads: dict[str, Array]
    ) -> list[LstmCellState]:
        cfg = self.config
        grad_x = grad_out
        grad_inits: list[LstmCellState] = [None] * len(self.encoder)  # type: ignore[list-item]
        for i in range(len(self.encoder) - 1, -1, -1):
            if cfg.time_reduction_factor > 1 and i + 1 == cfg.time_reduction_after:
                grad_x = time_reduce_backward(
                    grad_x,
                    cfg.time_reduction_factor,
                    cache.enc_pre_reduction_len,
                    cfg.encoder_proj,
                )
            layer = self.encoder[i]
            layer_grads = LstmLayerParams.zeros_like(layer)
            grad_x, grad_init = nn.lstm_sequence_backward(
                layer, cache.enc_layer_caches[i], grad_x, None, layer_grads
            )
            self._accumulate_layer(grads, f"encoder.{i}", layer_grads)
            grad_inits[i] = grad_init
        return grad_inits

    @staticmethod
    def _accumulate_layer(
        grads: dict[str, Array], prefix: str, layer_grads: LstmLayerParams
    ) -> None:
        grads[f"{prefix}.w_x"] += layer_grads.w_x
        grads[f"{prefix}.w_m"] += layer_grads.w_m
        grads[f"{prefix}.b"] += layer_grads.b
        grads[f"{prefix}.w_proj"] += layer_grads.w_proj


def analytic_param_count(config: ModelConfig) -> int:
    """Closed-form parameter count for a config; tests compare against the
    model's actual table."""
    total = 0
    for i in range(config.encoder_layers):
        d = TransducerModel._encoder_input_dim(config, i)
        h, p = config.encoder_hidden, config.encoder_proj
        total += 4 * h * d + 4 * h * p + 4 * h + h * p
    for i in range(config.prediction_layers):
        d = config.embedding_dim if i == 0 else config.prediction_proj
        h, p = config.prediction_hidden, config.prediction_proj
        total += 4 * h * d + 4 * h * p + 4 * h + h * p
    total += (config.vocab_size + 1) * config.embedding_dim
    joint_in = TransducerModel._joint_input_dim(config)
    total += config.joint_dim * joint_in + config.joint_dim
    total += config.num_symbols * config.joint_dim + config.num_symbols
    return total
