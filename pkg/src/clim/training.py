"""Joint and phased (continual) training, evaluation passes and checkpoint selection."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from clim import tensor as tn
from clim.data import Batch, Example, Vocabs, make_batches
from clim.exceptions import ConfigError, ContractError, TrainingError
from clim.metrics import intent_accuracy, slot_f1
from clim.model import ClimModel, forward

logger = logging.getLogger(__name__)

TASKS = ("joint", "slot", "intent")
TRACE_COLUMNS = ("epoch", "phase", "slot_f1", "intent_acc", "slot_loss", "intent_loss")
_TIE_TOL = 1e-12


@dataclass
class Phase:
    focus: str           # "joint", "slot" or "intent"
    epochs: int
    off_task_weight: float = 1.0

    def __post_init__(self):
        if self.focus not in TASKS:
            raise ConfigError(f"unknown phase focus {self.focus!r}")
        if self.epochs <= 0:
            raise ConfigError(f"phase epochs must be positive, got {self.epochs}")
        if not 0.0 < self.off_task_weight <= 1.0:
            raise ConfigError(f"off_task_weight must be in (0, 1], got {self.off_task_weight}")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 20
    learning_rate: float = 1e-3
    embedding_freeze_epoch: int | None = 5
    lambda_slot: float = 1.0
    lambda_intent: float = 1.0
    schedule: str = "joint"
    phase_plan: list[Phase] | None = None
    warmup_epochs: int = 5
    focus_epochs: int = 3
    off_task_weight: float = 0.2
    select: str = "best"
    eval_batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lambda_slot < 0 or self.lambda_intent < 0 or (self.lambda_slot == 0 and self.lambda_intent == 0):
            raise ConfigError("loss weights must be non-negative and not both zero")
        if self.schedule not in ("joint", "continual"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.select not in ("best", "last"):
            raise ConfigError(f"unknown checkpoint selection {self.select!r}")
        if self.phase_plan is not None:
            self.phase_plan = [p if isinstance(p, Phase) else Phase(**p) for p in self.phase_plan]
            if not self.phase_plan:
                raise ConfigError("phase_plan must be non-empty")

    def plan(self) -> list[Phase]:
        if self.schedule == "joint":
            return [Phase("joint", self.epochs)]
        if self.phase_plan is not None:
            return list(self.phase_plan)
        return default_phase_plan(self.epochs, self.warmup_epochs, self.focus_epochs, self.off_task_weight)


def default_phase_plan(epochs: int, warmup: int = 5, focus: int = 3, off_task_weight: float = 0.2) -> list[Phase]:
    """Joint warm-up, then alternating slot/intent focus phases until the budget is spent."""
    plan = [Phase("joint", min(warmup, epochs))]
    left = epochs - plan[0].epochs
    tasks = ("slot", "intent")
    i = 0
    while left > 0:
        n = min(focus, left)
        plan.append(Phase(tasks[i % 2], n, off_task_weight))
        left -= n
        i += 1
    return plan


def phase_weights(phase: Phase, lambda_slot: float, lambda_intent: float) -> tuple[float, float]:
    if phase.focus == "slot":
        return lambda_slot, lambda_intent * phase.off_task_weight
    if phase.focus == "intent":
        return lambda_slot * phase.off_task_weight, lambda_intent
    return lambda_slot, lambda_intent


# trace ----------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    phase: str
    slot_f1: float
    intent_acc: float
    slot_loss: float
    intent_loss: float

    @property
    def score(self) -> float:
        return (self.slot_f1 + self.intent_acc) / 2


@dataclass
class MetricTrace:
    records: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ContractError("trace epochs must be strictly increasing")
        for name in ("slot_f1", "intent_acc"):
            if not 0.0 <= getattr(record, name) <= 1.0:
                raise ContractError(f"{name}={getattr(record, name)} outside [0, 1]")
        self.records.append(record)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> EpochRecord:
        return self.records[i]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(TRACE_COLUMNS) + "\n")
        for r in self.records:
            buf.write(f"{r.epoch},{r.phase},{r.slot_f1:.6f},{r.intent_acc:.6f},"
                      f"{r.slot_loss:.6f},{r.intent_loss:.6f}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "MetricTrace":
        trace = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                trace.append(EpochRecord(int(row["epoch"]), row["phase"],
                                         *(float(row[c]) for c in TRACE_COLUMNS[2:])))
        return trace


def best_epoch(trace: MetricTrace) -> int:
    """Epoch maximising the mean of slot F1 and intent accuracy; ties go to the earlier epoch."""
    if not len(trace):
        raise ContractError("cannot select from an empty trace")
    best = trace[0]
    for r in trace.records[1:]:
        if r.score > best.score + _TIE_TOL:
            best = r
    return best.epoch


def checkpoint_select(trace: MetricTrace, checkpoints: Mapping[int, dict]) -> dict:
    epoch = best_epoch(trace)
    if epoch not in checkpoints:
        raise ContractError(f"no checkpoint stored for selected epoch {epoch}")
    return checkpoints[epoch]


# loss / evaluation ----------------------------------------------------------

def joint_loss(intent_logits: tn.Tensor, slot_logits: tn.Tensor, batch: Batch,
               lambda_slot: float = 1.0, lambda_intent: float = 1.0, parts: dict | None = None) -> tn.Tensor:
    """``lambda_slot * token-mean slot CE + lambda_intent * batch-mean intent CE``."""
    if lambda_slot < 0 or lambda_intent < 0:
        raise ContractError("loss weights must be non-negative")
    if not np.asarray(batch.mask).any():
        raise ContractError("joint_loss: every token is masked")
    slot_ce = tn.cross_entropy(slot_logits, batch.slot_ids, batch.mask)
    intent_ce = tn.cross_entropy(intent_logits, batch.intent_ids)
    if parts is not None:
        parts["slot"] = slot_ce.item()
        parts["intent"] = intent_ce.item()
    return slot_ce * float(lambda_slot) + intent_ce * float(lambda_intent)


def predict_batch(model: ClimModel, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """Arg-max intent ids ``[B]`` and slot ids ``[B, T]`` (padding id never predicted)."""
    with tn.no_grad():
        yi, ys = forward(model, batch.token_ids, batch.mask)
    slot_scores = ys.values.copy()
    slot_scores[..., 0] = -np.inf
    return yi.values.argmax(axis=-1), slot_scores.argmax(axis=-1)


def predict_examples(model: ClimModel, examples: Sequence[Example], vocabs: Vocabs,
                     batch_size: int = 64) -> tuple[list[list[str]], list[str]]:
    tags, intents = [], []
    for batch in make_batches(examples, vocabs, batch_size):
        it, st = predict_batch(model, batch)
        for i, n in enumerate(batch.lengths):
            tags.append([vocabs.slot.token(int(t)) for t in st[i, :int(n)]])
            intents.append(vocabs.intent.token(int(it[i])))
    return tags, intents


def evaluate(model: ClimModel, examples: Sequence[Example], vocabs: Vocabs, batch_size: int = 64) -> dict:
    """Slot P/R/F1 and intent accuracy against the gold strings of ``examples``."""
    pred_tags, pred_intents = predict_examples(model, examples, vocabs, batch_size)
    p, r, f = slot_f1([ex.slot_labels for ex in examples], pred_tags)
    acc, err = intent_accuracy([ex.intent for ex in examples], pred_intents)
    return {"slot_precision": p, "slot_recall": r, "slot_f1": f, "intent_acc": acc,
            "intent_error_rate": err, "pred_tags": pred_tags, "pred_intents": pred_intents}


def embedding_checksum(model: ClimModel) -> str:
    return hashlib.sha256(model.embedding.values.tobytes()).hexdigest()


# training loop --------------------------------------------------------------

# returning True from the callback ends training after that epoch
EpochCallback = Callable[[ClimModel, EpochRecord], "bool | None"]


def _train(config: TrainConfig, model: ClimModel, train: Sequence[Example], valid: Sequence[Example] | None,
           vocabs: Vocabs, plan: list[Phase], on_epoch_end: EpochCallback | None):
    if not train:
        raise ContractError("training set is empty")
    valid = list(valid) if valid else list(train)
    rng = np.random.default_rng(config.seed)
    optimizer = tn.Adam(model.params, lr=config.learning_rate)
    trace = MetricTrace()
    checkpoints: dict[int, dict] = {}
    epoch = step = 0
    stop = False
    for phase in plan:
        if stop:
            break
        w_slot, w_intent = phase_weights(phase, config.lambda_slot, config.lambda_intent)
        for _ in range(phase.epochs):
            epoch += 1
            slot_losses, intent_losses = [], []
            for batch in make_batches(train, vocabs, config.batch_size, rng):
                step += 1
                model.zero_grad()
                yi, ys = forward(model, batch.token_ids, batch.mask, training=True, rng=rng)
                parts: dict = {}
                loss = joint_loss(yi, ys, batch, w_slot, w_intent, parts)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"loss diverged (value {value}) at epoch {epoch}, step {step}")
                tn.backward(loss)
                optimizer.step(model.trainable())
                trace.step_losses.append(value)
                slot_losses.append(parts["slot"])
                intent_losses.append(parts["intent"])
            if config.embedding_freeze_epoch is not None and epoch == config.embedding_freeze_epoch:
                model.set_frozen(["embedding.word"])
            metrics = evaluate(model, valid, vocabs, config.eval_batch_size)
            record = EpochRecord(epoch, phase.focus, metrics["slot_f1"], metrics["intent_acc"],
                                 float(np.mean(slot_losses)), float(np.mean(intent_losses)))
            trace.append(record)
            logger.info("epoch %d [%s] slot_f1=%.4f intent_acc=%.4f slot_loss=%.4f intent_loss=%.4f",
                        epoch, phase.focus, record.slot_f1, record.intent_acc,
                        record.slot_loss, record.intent_loss)
            if config.select == "last" or best_epoch(trace) == epoch:
                checkpoints = {epoch: model.state_dict()}
            if on_epoch_end is not None and on_epoch_end(model, record):
                stop = True
                break
    if config.select == "last":
        params = checkpoints[epoch]
    else:
        params = checkpoint_select(trace, checkpoints)
    model.load_state_dict(params)
    return params, trace


def train_joint(config: TrainConfig, model: ClimModel, train: Sequence[Example],
                valid: Sequence[Example] | None, vocabs: Vocabs,
                on_epoch_end: EpochCallback | None = None):
    """Mini-batch Adam on the joint loss.  Returns ``(selected params, trace)``;
    the model is left holding the selected parameters."""
    return _train(config, model, train, valid, vocabs, [Phase("joint", config.epochs)], on_epoch_end)


def train_continual(config: TrainConfig, model: ClimModel, train: Sequence[Example],
                    valid: Sequence[Example] | None, vocabs: Vocabs,
                    on_epoch_end: EpochCallback | None = None):
    """Joint warm-up followed by task-focused phases.

    During a focus phase the other task's loss is scaled by the phase's
    ``off_task_weight`` instead of being dropped, and every parameter stays
    trainable.
    """
    if config.schedule != "continual":
        raise ContractError("train_continual needs schedule='continual'")
    return _train(config, model, train, valid, vocabs, config.plan(), on_epoch_end)


def train(config: TrainConfig, model: ClimModel, train_examples, valid_examples, vocabs: Vocabs,
          on_epoch_end: EpochCallback | None = None):
    fn = train_continual if config.schedule == "continual" else train_joint
    return fn(config, model, train_examples, valid_examples, vocabs, on_epoch_end)


def train_config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    if config.phase_plan is not None:
        d["phase_plan"] = [asdict(p) for p in config.phase_plan]
    return d
