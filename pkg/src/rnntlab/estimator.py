"""Estimator facade with the scikit-learn calling convention.

RnntRecognizer wraps model construction, training, and beam decoding behind
fit/predict/transform plus get_params/set_params, so it can be cloned, grid
searched, or dropped into pipelines that expect that protocol. X is a list of
2-D float arrays (frames x feature_dim) and y a list of integer token
sequences.
"""

from __future__ import annotations

import inspect

from .corpus import Utterance
from .decoder import decode_utterance
from .metrics import corpus_wer
from .model import ModelConfig, TransducerModel
from .states import StateStrategy
from .trainer import TrainConfig, TrainData, run_training
from .validation import check_feature_matrix, check_token_sequence


class NotFittedError(ValueError, AttributeError):
    """predict/transform/score called before fit."""


class RnntRecognizer:
    """Streaming transducer recognizer with a scikit-learn style interface.

    Constructor arguments are stored verbatim; validation happens in fit,
    following the scikit-learn contract that __init__ performs no work.
    Fitted state lives in attributes with a trailing underscore (model_).
    """

    def __init__(
        self,
        feature_dim: int = 8,
        vocab_size: int = 16,
        encoder_layers: int = 2,
        encoder_hidden: int = 32,
        encoder_proj: int = 16,
        time_reduction_factor: int = 2,
        time_reduction_after: int = 1,
        prediction_layers: int = 1,
        prediction_hidden: int = 32,
        prediction_proj: int = 16,
        joint_dim: int = 16,
        embedding_dim: int = 8,
        joint_mode: str = "concat",
        steps: int = 200,
        batch_size: int = 8,
        learning_rate: float = 1e-3,
        warmup_steps: int = 100,
        clip_norm: float | None = 5.0,
        state_strategy: str = "zero",
        rsp_pass_probability: float = 0.5,
        beam_width: int = 8,
        adaptive_margin: float | None = 8.0,
        expansion_cap: int = 10,
        seed: int = 0,
    ):
        self.feature_dim = feature_dim
        self.vocab_size = vocab_size
        self.encoder_layers = encoder_layers
        self.encoder_hidden = encoder_hidden
        self.encoder_proj = encoder_proj
        self.time_reduction_factor = time_reduction_factor
        self.time_reduction_after = time_reduction_after
        self.prediction_layers = prediction_layers
        self.prediction_hidden = prediction_hidden
        self.prediction_proj = prediction_proj
        self.joint_dim = joint_dim
        self.embedding_dim = embedding_dim
        self.joint_mode = joint_mode
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.clip_norm = clip_norm
        self.state_strategy = state_strategy
        self.rsp_pass_probability = rsp_pass_probability
        self.beam_width = beam_width
        self.adaptive_margin = adaptive_margin
        self.expansion_cap = expansion_cap
        self.seed = seed

    # -- scikit-learn parameter protocol ---------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "RnntRecognizer":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for RnntRecognizer "
                    f"(valid: {sorted(valid)})"
                )
            setattr(self, name, value)
        return self

    # -- fitting ----------------------------------------------------------

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            feature_dim=self.feature_dim,
            encoder_layers=self.encoder_layers,
            encoder_hidden=self.encoder_hidden,
            encoder_proj=self.encoder_proj,
            time_reduction_factor=self.time_reduction_factor,
            time_reduction_after=self.time_reduction_after,
            prediction_layers=self.prediction_layers,
            prediction_hidden=self.prediction_hidden,
            prediction_proj=self.prediction_proj,
            joint_dim=self.joint_dim,
            vocab_size=self.vocab_size,
            embedding_dim=self.embedding_dim,
            joint_mode=self.joint_mode,
        )

    def _train_config(self) -> TrainConfig:
        strategy = StateStrategy(
            kind=str(self.state_strategy).replace("-", "_"),
            pass_probability=self.rsp_pass_probability,
        )
        return TrainConfig(
            batch_size=self.batch_size,
            steps=self.steps,
            eval_every=max(self.steps, 1),
            learning_rate=self.learning_rate,
            warmup_steps=self.warmup_steps,
            clip_norm=self.clip_norm,
            seed=self.seed,
            state_strategy=strategy,
        )

    def _validate_pairs(self, X, y) -> list[Utterance]:
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} utterances but y has {len(y)}")
        if not X:
            raise ValueError("fit requires at least one utterance")
        utts = []
        for i, (features, tokens) in enumerate(zip(X, y)):
            features = check_feature_matrix(features, self.feature_dim)
            tokens = check_token_sequence(tokens, self.vocab_size)
            utts.append(
                Utterance(
                    id=f"utt{i:05d}",
                    domain="user",
                    features=features,
                    tokens=tokens,
                    raw_frame_count=features.shape[0],
                )
            )
        return utts

    def fit(self, X, y) -> "RnntRecognizer":
        """Train a fresh model on (features, token sequence) pairs."""
        utts = self._validate_pairs(X, y)
        model = TransducerModel.init(self._model_config(), seed=self.seed)
        result = run_training(
            model,
            self._train_config(),
            TrainData(utterances=utts, eval_sets={}),
        )
        self.model_ = result.model
        self.n_steps_ = result.final_step
        return self

    # -- inference ----------------------------------------------------------

    def _fitted_model(self) -> TransducerModel:
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError(
                "this RnntRecognizer is not fitted yet; call fit first"
            )
        return model

    def predict(self, X) -> list[list[int]]:
        """Beam-decode each utterance into a token id sequence."""
        model = self._fitted_model()
        out = []
        for features in X:
            features = check_feature_matrix(features, self.feature_dim)
            result = decode_utterance(
                model,
                features,
                beam_width=self.beam_width,
                adaptive_margin=self.adaptive_margin,
                expansion_cap=self.expansion_cap,
            )
            out.append(result.tokens)
        return out

    def transform(self, X) -> list[list[int]]:
        """Alias of predict so the recognizer slots into pipelines."""
        return self.predict(X)

    def score(self, X, y) -> float:
        """Token accuracy, 1 - WER (can be negative when WER > 100%)."""
        self._fitted_model()
        refs = [check_token_sequence(tokens, self.vocab_size) for tokens in y]
        if len(refs) != len(X):
            raise ValueError(f"X has {len(X)} utterances but y has {len(refs)}")
        hyps = self.predict(X)
        total, _ = corpus_wer(list(zip(refs, hyps)))
        return 1.0 - total.wer

    def __repr__(self) -> str:
        defaults = {
            name: param.default
            for name, param in inspect.signature(type(self).__init__).parameters.items()
            if name != "self"
        }
        changed = {
            name: value
            for name, value in self.get_params().items()
            if value != defaults[name]
        }
        args = ", ".join(f"{k}={v!r}" for k, v in sorted(changed.items()))
        return f"RnntRecognizer({args})"
