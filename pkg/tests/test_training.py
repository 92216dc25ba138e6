import math
from dataclasses import replace
from importlib.resources import files

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clim import tensor as tn
from clim.data import build_vocabs, load_split, make_batches
from clim.exceptions import ConfigError, ContractError, TrainingError
from clim.model import ClimConfig, ClimModel, forward
from clim.training import (EpochRecord, MetricTrace, Phase, TrainConfig, best_epoch, checkpoint_select,
                           default_phase_plan, embedding_checksum, evaluate, joint_loss, phase_weights, train_continual,
                           train_joint)

FIXTURE = files("clim") / "fixtures" / "atis_tiny"


@pytest.fixture(scope="module")
def tiny():
    train = load_split(FIXTURE, "train")
    vocabs = build_vocabs(train)
    return train, vocabs


def small_model(vocabs, variant="B-T(V)", seed=0, **kw):
    cfg = dict(vocab_size=len(vocabs.word), slot_label_count=len(vocabs.slot), intent_count=len(vocabs.intent),
               encoder_variant=variant, hidden_size=8, embed_dim=8, model_dim=16, head_count=2, ff_dim=16,
               attention_dim=8, conv_channels=16, dropout=0.1)
    cfg.update(kw)
    return ClimModel(ClimConfig(**cfg), seed=seed)


def _batch(tiny, n=4):
    train, vocabs = tiny
    return next(iter(make_batches(train[:n], vocabs, n)))


def test_uniform_logits_give_log_class_counts(tiny):
    batch = _batch(tiny)
    B, T = batch.token_ids.shape
    L, C = len(tiny[1].slot), len(tiny[1].intent)
    loss = joint_loss(tn.Tensor(np.zeros((B, C))), tn.Tensor(np.zeros((B, T, L))), batch, 0.7, 1.3)
    assert loss.item() == pytest.approx(0.7 * math.log(L) + 1.3 * math.log(C), abs=1e-12)


def test_perfect_logits_drive_loss_to_zero(tiny):
    batch = _batch(tiny)
    B, T = batch.token_ids.shape
    slots = np.eye(len(tiny[1].slot))[batch.slot_ids] * 60.0
    intents = np.eye(len(tiny[1].intent))[batch.intent_ids] * 60.0
    loss = joint_loss(tn.Tensor(intents), tn.Tensor(slots), batch)
    assert 0.0 <= loss.item() < 1e-20


def test_loss_ignores_padded_positions(tiny):
    batch = _batch(tiny)
    rng = np.random.default_rng(0)
    slots = rng.normal(size=(*batch.token_ids.shape, len(tiny[1].slot)))
    intents = rng.normal(size=(len(batch), len(tiny[1].intent)))
    base = joint_loss(tn.Tensor(intents), tn.Tensor(slots), batch).item()
    slots[batch.mask == 0] = rng.normal(size=slots[batch.mask == 0].shape) * 100
    assert joint_loss(tn.Tensor(intents), tn.Tensor(slots), batch).item() == base


def test_fully_masked_batch_is_rejected(tiny):
    batch = _batch(tiny)
    batch = replace(batch, mask=np.zeros_like(batch.mask))
    with pytest.raises(ContractError):
        joint_loss(tn.Tensor(np.zeros((len(batch), 5))), tn.Tensor(np.zeros((*batch.mask.shape, 12))), batch)


def test_zero_intent_weight_silences_intent_classifier(tiny):
    train, vocabs = tiny
    model = small_model(vocabs, dropout=0.0)
    batch = _batch(tiny)
    model.zero_grad()
    yi, ys = forward(model, batch.token_ids, batch.mask)
    tn.backward(joint_loss(yi, ys, batch, 1.0, 0.0))
    params = model.params
    assert not np.any(params["decoder.intent.W"].grad)
    assert not np.any(params["decoder.intent.b"].grad)
    assert np.any(params["decoder.slot.W"].grad)


def _trace(*pairs):
    tr = MetricTrace()
    for i, (s, a) in enumerate(pairs):
        tr.append(EpochRecord(i + 1, "joint", s, a, 0.0, 0.0))
    return tr


def test_checkpoint_select_examples():
    assert checkpoint_select(_trace((0.5, 0.5)), {1: "only"}) == "only"
    assert best_epoch(_trace((0.90, 0.95), (0.93, 0.92))) == 1
    assert best_epoch(_trace((0.90, 0.95), (0.94, 0.93))) == 2
    with pytest.raises(ContractError):
        checkpoint_select(MetricTrace(), {})
    with pytest.raises(ContractError):
        checkpoint_select(_trace((0.5, 0.5)), {})


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=8), st.floats(0.01, 1.0))
def test_selection_argmax_is_scale_invariant(pairs, factor):
    # distinct scores only: the tie tolerance is an absolute threshold
    scores = [(s + a) / 2 for s, a in pairs]
    if any(abs(x - y) < 1e-9 for i, x in enumerate(scores) for y in scores[i + 1:]):
        return
    assert best_epoch(_trace(*pairs)) == best_epoch(_trace(*[(s * factor, a * factor) for s, a in pairs]))


def test_trace_invariants_and_csv(tmp_path):
    tr = _trace((0.5, 0.25))
    with pytest.raises(ContractError):
        tr.append(EpochRecord(1, "joint", 0.5, 0.5, 0.0, 0.0))
    with pytest.raises(ContractError):
        tr.append(EpochRecord(2, "slot", 1.5, 0.5, 0.0, 0.0))
    tr.append(EpochRecord(2, "slot", 1.0, 0.125, 0.3333333333, 2.0))
    assert tr.to_csv() == ("epoch,phase,slot_f1,intent_acc,slot_loss,intent_loss\n"
                           "1,joint,0.500000,0.250000,0.000000,0.000000\n"
                           "2,slot,1.000000,0.125000,0.333333,2.000000\n")
    tr.write_csv(tmp_path / "t.csv")
    assert MetricTrace.read_csv(tmp_path / "t.csv").to_csv() == tr.to_csv()


def test_default_phase_plan():
    plan = default_phase_plan(14)
    assert [(p.focus, p.epochs) for p in plan] == [("joint", 5), ("slot", 3), ("intent", 3), ("slot", 3)]
    assert [p.off_task_weight for p in plan] == [1.0, 0.2, 0.2, 0.2]
    assert sum(p.epochs for p in default_phase_plan(7)) == 7
    assert phase_weights(Phase("slot", 1, 0.2), 1.0, 1.0) == (1.0, 0.2)
    assert phase_weights(Phase("intent", 1, 0.5), 2.0, 1.0) == (1.0, 1.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lambda_slot=0.0, lambda_intent=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(lambda_slot=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(schedule="continual", phase_plan=[])
    with pytest.raises(ConfigError):
        Phase("slot", 2, 0.0)
    with pytest.raises(ContractError):
        train_continual(TrainConfig(), None, [], None, None)


def test_seeded_training_is_reproducible(tiny):
    train, vocabs = tiny
    cfg = TrainConfig(epochs=3, batch_size=4, seed=7, embedding_freeze_epoch=None)
    runs = []
    for _ in range(2):
        model = small_model(vocabs, seed=1)
        params, trace = train_joint(cfg, model, train, None, vocabs)
        runs.append((trace.to_csv(), trace.step_losses, {k: v.tobytes() for k, v in params.items()}))
    assert runs[0] == runs[1]
    assert len(runs[0][1]) == 3 * 3


def test_embedding_freeze_holds(tiny):
    train, vocabs = tiny
    cfg = TrainConfig(epochs=4, batch_size=5, embedding_freeze_epoch=2, select="last")
    sums = {}
    model = small_model(vocabs)

    def watch(m, record):
        sums[record.epoch] = embedding_checksum(m)

    train_joint(cfg, model, train, None, vocabs, on_epoch_end=watch)
    assert sums[1] != sums[2]
    assert sums[2] == sums[3] == sums[4] == embedding_checksum(model)


def test_callback_can_stop_early(tiny):
    train, vocabs = tiny
    _, trace = train_joint(TrainConfig(epochs=10, batch_size=5), small_model(vocabs), train, None, vocabs,
                           on_epoch_end=lambda m, r: r.epoch == 2)
    assert len(trace) == 2


def test_best_checkpoint_is_loaded(tiny):
    train, vocabs = tiny
    model = small_model(vocabs)
    params, trace = train_joint(TrainConfig(epochs=4, batch_size=5), model, train, None, vocabs)
    chosen = trace[best_epoch(trace) - 1]
    m = evaluate(model, train, vocabs)
    assert m["slot_f1"] == chosen.slot_f1 and m["intent_acc"] == chosen.intent_acc


def test_unit_off_task_weight_reduces_to_joint(tiny):
    train, vocabs = tiny
    joint_cfg = TrainConfig(epochs=5, batch_size=4, seed=3)
    cont_cfg = TrainConfig(epochs=5, batch_size=4, seed=3, schedule="continual",
                           phase_plan=[Phase("joint", 2), Phase("slot", 2, 1.0), Phase("intent", 1, 1.0)])
    _, a = train_joint(joint_cfg, small_model(vocabs), train, None, vocabs)
    _, b = train_continual(cont_cfg, small_model(vocabs), train, None, vocabs)
    strip = lambda tr: [(r.epoch, r.slot_f1, r.intent_acc, r.slot_loss, r.intent_loss) for r in tr]
    assert strip(a) == strip(b)
    assert a.step_losses == b.step_losses
    assert [r.phase for r in b] == ["joint", "joint", "slot", "slot", "intent"]


def test_continual_down_weights_off_task(tiny):
    train, vocabs = tiny
    cfg = TrainConfig(epochs=4, batch_size=10, seed=0, schedule="continual",
                      phase_plan=[Phase("joint", 1), Phase("slot", 3, 0.2)])
    _, trace = train_continual(cfg, small_model(vocabs), train, None, vocabs)
    # the step loss is the weighted sum, so it is recoverable from the logged parts
    for r, loss in zip(trace, trace.step_losses):
        w_i = 1.0 if r.phase == "joint" else 0.2
        assert loss == pytest.approx(r.slot_loss + w_i * r.intent_loss, rel=1e-12)


def test_divergence_is_reported(tiny):
    train, vocabs = tiny
    model = small_model(vocabs)
    model.params["decoder.intent.b"].values[0] = np.nan
    with pytest.raises(TrainingError, match="epoch 1, step 1"):
        train_joint(TrainConfig(epochs=1, batch_size=5), model, train, None, vocabs)


@given(st.integers(0, 2 ** 31 - 1), st.floats(0.0, 3.0), st.floats(0.01, 3.0))
def test_loss_is_non_negative(seed, w_slot, w_intent):
    train = load_split(FIXTURE, "train")
    vocabs = build_vocabs(train)
    batch = next(iter(make_batches(train[:3], vocabs, 3)))
    rng = np.random.default_rng(seed)
    slots = rng.normal(scale=5, size=(*batch.token_ids.shape, len(vocabs.slot)))
    intents = rng.normal(scale=5, size=(len(batch), len(vocabs.intent)))
    assert joint_loss(tn.Tensor(intents), tn.Tensor(slots), batch, w_slot, w_intent).item() > 0.0


def test_frozen_parameters_survive_optimizer_steps(tiny):
    train, vocabs = tiny
    model = small_model(vocabs, dropout=0.0)
    frozen = ["decoder.slot.W", "attention.sf.W_q"]
    model.set_frozen(frozen)
    before = {n: model.params[n].values.tobytes() for n in frozen}
    opt = tn.Adam(model.params, lr=0.05)
    for batch in list(make_batches(train, vocabs, 5)) * 3:
        model.zero_grad()
        yi, ys = forward(model, batch.token_ids, batch.mask)
        tn.backward(joint_loss(yi, ys, batch))
        opt.step(model.trainable())
    assert {n: model.params[n].values.tobytes() for n in frozen} == before
    assert model.params["decoder.intent.W"].values.tobytes() != small_model(vocabs).params["decoder.intent.W"].values.tobytes()
