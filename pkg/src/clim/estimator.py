"""scikit-learn style wrapper: build vocabularies, train, predict, save and load."""

from __future__ import annotations

import dataclasses

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from clim import tensor as tn
from clim.data import Example, Vocabs, build_vocabs
from clim.exceptions import ConfigError
from clim.model import ClimConfig, ClimModel
from clim.training import TrainConfig, best_epoch, evaluate, predict_examples, train
from clim.validation import check_utterances, to_examples

_MODEL_KEYS = tuple(f.name for f in dataclasses.fields(ClimConfig)
                    if f.name not in ("vocab_size", "slot_label_count", "intent_count"))
_TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig))


class ClimTagger(BaseEstimator):
    """Joint slot tagger and intent classifier.

    ``X`` is a list of utterances (token lists or whitespace-separated
    strings); ``y`` is a list of ``(slot_tags, intent)`` pairs.  Every
    constructor argument is a plain hyperparameter so the estimator clones
    and grid-searches like any other.
    """

    def __init__(self, encoder_variant="B-T(V)", hidden_size=200, embed_dim=128, model_dim=None, head_count=4,
                 ff_dim=None, attention_dim=None, attention_scoring="additive", conv_width=3, conv_channels=None,
                 dropout=0.5, dpg_enabled=False, layer_norm_eps=1e-5, epochs=20, batch_size=20,
                 learning_rate=1e-3, embedding_freeze_epoch=5, lambda_slot=1.0, lambda_intent=1.0,
                 schedule="joint", phase_plan=None, warmup_epochs=5, focus_epochs=3, off_task_weight=0.2,
                 select="best", eval_batch_size=64, seed=0):
        self.encoder_variant = encoder_variant
        self.hidden_size = hidden_size
        self.embed_dim = embed_dim
        self.model_dim = model_dim
        self.head_count = head_count
        self.ff_dim = ff_dim
        self.attention_dim = attention_dim
        self.attention_scoring = attention_scoring
        self.conv_width = conv_width
        self.conv_channels = conv_channels
        self.dropout = dropout
        self.dpg_enabled = dpg_enabled
        self.layer_norm_eps = layer_norm_eps
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.embedding_freeze_epoch = embedding_freeze_epoch
        self.lambda_slot = lambda_slot
        self.lambda_intent = lambda_intent
        self.schedule = schedule
        self.phase_plan = phase_plan
        self.warmup_epochs = warmup_epochs
        self.focus_epochs = focus_epochs
        self.off_task_weight = off_task_weight
        self.select = select
        self.eval_batch_size = eval_batch_size
        self.seed = seed

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in _TRAIN_KEYS})

    def model_config(self, vocabs: Vocabs) -> ClimConfig:
        return ClimConfig(vocab_size=len(vocabs.word), slot_label_count=len(vocabs.slot),
                          intent_count=len(vocabs.intent), **{k: getattr(self, k) for k in _MODEL_KEYS})

    def check_params(self) -> None:
        """Raise ConfigError for invalid hyperparameters without touching data."""
        self.train_config()
        ClimConfig(vocab_size=1, slot_label_count=1, intent_count=1, **{k: getattr(self, k) for k in _MODEL_KEYS})

    def fit(self, X, y, X_val=None, y_val=None, on_epoch_end=None):
        """Train on ``(X, y)``.  Epoch-level selection uses ``(X_val, y_val)``
        when given, the training data otherwise."""
        train_examples = to_examples(X, y)
        valid = None
        if X_val is not None:
            if y_val is None:
                raise ConfigError("X_val given without y_val")
            valid = to_examples(X_val, y_val, "X_val")
        return self.fit_examples(train_examples, valid, on_epoch_end)

    def fit_examples(self, train_examples: list[Example], valid: list[Example] | None = None, on_epoch_end=None):
        tcfg = self.train_config()
        vocabs = build_vocabs(train_examples)
        model = ClimModel(self.model_config(vocabs), seed=self.seed)
        _, trace = train(tcfg, model, train_examples, valid, vocabs, on_epoch_end)
        self.vocabs_ = vocabs
        self.model_ = model
        self.trace_ = trace
        self.best_epoch_ = best_epoch(trace) if tcfg.select == "best" else trace[-1].epoch
        return self

    def predict(self, X) -> list[tuple[list[str], str]]:
        tags, intents = self._predict(X)
        return list(zip(tags, intents))

    def predict_slots(self, X) -> list[list[str]]:
        return self._predict(X)[0]

    def predict_intents(self, X) -> list[str]:
        return self._predict(X)[1]

    def _predict(self, X):
        check_is_fitted(self, "model_")
        tokens = check_utterances(X)
        # placeholder gold labels drawn from the vocabularies keep the batcher quiet
        tag, intent = self.vocabs_.slot.token(1), self.vocabs_.intent.token(0)
        examples = [Example(t, [tag] * len(t), intent) for t in tokens]
        return predict_examples(self.model_, examples, self.vocabs_, self.eval_batch_size)

    def evaluate(self, X, y) -> dict:
        return self.evaluate_examples(to_examples(X, y))

    def evaluate_examples(self, examples: list[Example]) -> dict:
        check_is_fitted(self, "model_")
        return evaluate(self.model_, examples, self.vocabs_, self.eval_batch_size)

    def score(self, X, y) -> float:
        """Mean of slot F1 and intent accuracy (the checkpoint selection score)."""
        m = self.evaluate(X, y)
        return (m["slot_f1"] + m["intent_acc"]) / 2

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        params = self.get_params()
        meta = {"estimator": params, "model_config": self.model_.config.to_dict(),
                "vocabs": self.vocabs_.to_dict(), "best_epoch": self.best_epoch_}
        if params["phase_plan"] is not None:
            meta["estimator"]["phase_plan"] = [p if isinstance(p, dict) else dataclasses.asdict(p)
                                               for p in params["phase_plan"]]
        tn.save_checkpoint(path, self.model_.state_dict(), meta)

    @classmethod
    def load(cls, path) -> "ClimTagger":
        arrays, meta = tn.load_checkpoint(path)
        try:
            est = cls(**meta["estimator"])
            vocabs = Vocabs.from_dict(meta["vocabs"])
            config = ClimConfig(**meta["model_config"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: checkpoint metadata is incomplete or incompatible ({exc})") from None
        if (config.vocab_size, config.slot_label_count, config.intent_count) != (
                len(vocabs.word), len(vocabs.slot), len(vocabs.intent)):
            raise ConfigError(f"{path}: vocabulary sizes do not match the stored model config")
        model = ClimModel(config, seed=est.seed)
        model.load_state_dict(arrays)
        est.vocabs_ = vocabs
        est.model_ = model
        est.best_epoch_ = meta.get("best_epoch")
        return est
