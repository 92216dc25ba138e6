"""The dual-encoder joint model for slot filling and intent detection.

Pipeline for one batch::

    embeddings -> recurrent encoder h  (BiLSTM)
               -> second encoder  h'   (variant dependent)
    c_sf = attend(h, h) ; c_id = attend(h', h')
    swap:  slot branch gets c_id, intent branch gets c_sf
    h_sf = [h ; c_slot_side]   h_id = [h' ; c_intent_side]
    intent  = W_intent . GAP(h_id)
    s_i     = conv1d([h_sf_i ; GAP(h_id)])
    slots_i = W_slot . s_i           (optionally gated by dynamic parameters)
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from clim import layers
from clim import tensor as tn
from clim.exceptions import ConfigError, ContractError, DimensionError
from clim.tensor import Tensor


class EncoderVariant(str, enum.Enum):
    BB = "B-B"      # two independent BiLSTMs over the embeddings
    BT = "B-T"      # BiLSTM and a two-layer transformer, both over the embeddings
    BTV = "B-T(V)"  # transformer stacked on the BiLSTM outputs

    @classmethod
    def parse(cls, value) -> "EncoderVariant":
        if isinstance(value, cls):
            return value
        for v in cls:
            if value in (v.value, v.name):
                return v
        raise ConfigError(f"unknown encoder variant {value!r}; expected one of "
                          f"{[v.value for v in cls]}")


@dataclass
class ClimConfig:
    vocab_size: int
    slot_label_count: int
    intent_count: int
    encoder_variant: str = EncoderVariant.BTV.value
    hidden_size: int = 200
    embed_dim: int = 128
    model_dim: int | None = None        # defaults to 2 * hidden_size
    head_count: int = 4
    ff_dim: int | None = None           # defaults to 4 * model_dim
    attention_dim: int | None = None    # defaults to hidden_size
    attention_scoring: str = "additive"
    conv_width: int = 3
    conv_channels: int | None = None    # defaults to 2 * hidden_size
    dropout: float = 0.5
    dpg_enabled: bool = False
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        self.encoder_variant = EncoderVariant.parse(self.encoder_variant).value
        if self.model_dim is None:
            self.model_dim = 2 * self.hidden_size
        if self.ff_dim is None:
            self.ff_dim = 4 * self.model_dim
        if self.attention_dim is None:
            self.attention_dim = self.hidden_size
        if self.conv_channels is None:
            self.conv_channels = 2 * self.hidden_size
        for name in ("vocab_size", "slot_label_count", "intent_count", "hidden_size", "embed_dim",
                     "model_dim", "head_count", "ff_dim", "attention_dim", "conv_width",
                     "conv_channels"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.conv_width % 2 == 0:
            raise ConfigError(f"conv_width must be odd, got {self.conv_width}")
        if self.model_dim % self.head_count:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by head_count {self.head_count}")
        if self.attention_scoring not in ("additive", "dot"):
            raise ConfigError(f"unknown attention_scoring {self.attention_scoring!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def variant(self) -> EncoderVariant:
        return EncoderVariant(self.encoder_variant)

    @property
    def second_dim(self) -> int:
        """Width of the second encoder's states h'."""
        return 2 * self.hidden_size if self.variant is EncoderVariant.BB else self.model_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DualEncoding:
    h: Tensor         # [B, T, 2H]
    h_prime: Tensor   # [B, T, D]
    mask: np.ndarray  # [B, T]


@dataclass
class TaskStates:
    h_sf: Tensor
    h_id: Tensor
    c_sf: Tensor
    c_id: Tensor
    mask: np.ndarray


@dataclass
class DpgParams(layers._ParamGroup):
    w_D: Tensor
    b: Tensor


class ClimModel:
    """Parameter container plus the forward pass.

    ``params`` maps stable dotted names (``encoder.lstm.fwd.W_x`` ...) to
    tensors; the same names key checkpoints.
    """

    def __init__(self, config: ClimConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        H, D = c.hidden_size, c.second_dim
        self.embedding = tn.parameter(rng.normal(0.0, 0.1, size=(c.vocab_size, c.embed_dim)))
        self.lstm_fwd = layers.LstmParams.init(rng, c.embed_dim, H)
        self.lstm_bwd = layers.LstmParams.init(rng, c.embed_dim, H)
        self.lstm2_fwd = self.lstm2_bwd = None
        self.blocks: list[layers.TransformerBlockParams] = []
        self.proj_W = self.proj_b = None
        if c.variant is EncoderVariant.BB:
            self.lstm2_fwd = layers.LstmParams.init(rng, c.embed_dim, H)
            self.lstm2_bwd = layers.LstmParams.init(rng, c.embed_dim, H)
        else:
            in_dim = c.embed_dim if c.variant is EncoderVariant.BT else 2 * H
            if in_dim != c.model_dim:
                self.proj_W = tn.parameter(layers._xavier(rng, in_dim, c.model_dim))
                self.proj_b = tn.parameter(np.zeros(c.model_dim))
            self.blocks = [layers.TransformerBlockParams.init(rng, c.model_dim, c.head_count, c.ff_dim,
                                                              c.layer_norm_eps) for _ in range(2)]
        self.attn_sf = layers.AttentionParams.init(rng, 2 * H, 2 * H, c.attention_dim, c.attention_scoring)
        self.attn_id = layers.AttentionParams.init(rng, D, D, c.attention_dim, c.attention_scoring)
        id_width = D + 2 * H   # [h' ; c_sf] after the swap
        sf_width = 2 * H + D   # [h ; c_id]
        self.intent_W = tn.parameter(layers._xavier(rng, id_width, c.intent_count))
        self.intent_b = tn.parameter(np.zeros(c.intent_count))
        conv_in = sf_width + id_width
        bound = 1.0 / np.sqrt(conv_in * c.conv_width)
        self.conv_kernel = tn.parameter(rng.uniform(-bound, bound, (c.conv_width, conv_in, c.conv_channels)))
        self.conv_bias = tn.parameter(np.zeros(c.conv_channels))
        self.slot_W = tn.parameter(layers._xavier(rng, c.conv_channels, c.slot_label_count))
        self.slot_b = tn.parameter(np.zeros(c.slot_label_count))
        self.dpg = None
        if c.dpg_enabled:
            self.dpg = DpgParams(w_D=tn.parameter(layers._xavier(rng, id_width, c.conv_channels)),
                                 b=tn.parameter(np.zeros(c.conv_channels)))
        self.params = self._collect()

    def _collect(self) -> dict[str, Tensor]:
        p = {"embedding.word": self.embedding}
        p.update(self.lstm_fwd.named("encoder.lstm.fwd"))
        p.update(self.lstm_bwd.named("encoder.lstm.bwd"))
        if self.lstm2_fwd is not None:
            p.update(self.lstm2_fwd.named("encoder.lstm2.fwd"))
            p.update(self.lstm2_bwd.named("encoder.lstm2.bwd"))
        if self.proj_W is not None:
            p["encoder.transformer.proj.W"] = self.proj_W
            p["encoder.transformer.proj.b"] = self.proj_b
        for i, block in enumerate(self.blocks, start=1):
            p.update(block.named(f"encoder.transformer.block{i}"))
        p.update(self.attn_sf.named("attention.sf"))
        p.update(self.attn_id.named("attention.id"))
        p["decoder.intent.W"] = self.intent_W
        p["decoder.intent.b"] = self.intent_b
        p["decoder.slot.conv.kernel"] = self.conv_kernel
        p["decoder.slot.conv.bias"] = self.conv_bias
        p["decoder.slot.W"] = self.slot_W
        p["decoder.slot.b"] = self.slot_b
        if self.dpg is not None:
            p.update(self.dpg.named("dpg"))
        for name, t in p.items():
            t.name = name
        return p

    # parameter management ----------------------------------------------
    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.params.items() if t.requires_grad}

    def set_frozen(self, names, frozen: bool = True) -> None:
        for n in names:
            self.params[n].requires_grad = not frozen

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.values.copy() for n, t in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ConfigError(f"checkpoint/model mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, t in self.params.items():
            if arrays[n].shape != t.shape:
                raise ConfigError(f"checkpoint/model mismatch for {n}: {arrays[n].shape} vs {t.shape}")
            t.values = np.array(arrays[n], dtype=np.float64)

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def __call__(self, token_ids, mask, training: bool = False, rng=None):
        return forward(self, token_ids, mask, training=training, rng=rng)


# pipeline stages ------------------------------------------------------------

def _as_mask(mask, shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != shape:
        raise DimensionError(f"mask shape {mask.shape} does not match token ids {shape}")
    if mask.shape[1] == 0 or not mask.any(axis=1).all():
        raise ContractError("every utterance needs at least one unmasked token")
    return mask


def _transformer_stack(model: ClimModel, x: Tensor, mask: np.ndarray) -> Tensor:
    if model.proj_W is not None:
        x = tn.linear(x, model.proj_W, model.proj_b)
    if model.config.variant is EncoderVariant.BT:
        x = tn.add_const(x, layers.sinusoidal_positions(x.shape[1], x.shape[2])[None])
    h1 = layers.transformer_block(model.blocks[0], x, mask)
    h2 = layers.transformer_block(model.blocks[1], h1, mask)
    # residual join of both layers' outputs
    return tn.mul_const(tn.tanh(h1 + h2), mask[:, :, None])


def encode(model: ClimModel, token_ids, mask, training: bool = False, rng=None) -> DualEncoding:
    token_ids = np.asarray(token_ids)
    mask = _as_mask(mask, token_ids.shape)
    emb = layers.embedding_lookup(model.embedding, token_ids)
    emb = layers.dropout_apply(emb, model.config.dropout, training, rng)
    h = layers.bilstm_encode(model.lstm_fwd, model.lstm_bwd, emb, mask)
    variant = model.config.variant
    if variant is EncoderVariant.BB:
        h_prime = layers.bilstm_encode(model.lstm2_fwd, model.lstm2_bwd, emb, mask)
    elif variant is EncoderVariant.BT:
        h_prime = _transformer_stack(model, emb, mask)
    else:
        h_prime = _transformer_stack(model, h, mask)
    return DualEncoding(h=h, h_prime=h_prime, mask=mask)


def attention_contexts(model: ClimModel, enc: DualEncoding) -> tuple[Tensor, Tensor]:
    """Raw per-side contexts: slot side attends over h, intent side over h'."""
    m = enc.mask[:, :, None]
    c_sf = layers.additive_attention_context(enc.h, enc.h, model.attn_sf, enc.mask)
    c_id = layers.additive_attention_context(enc.h_prime, enc.h_prime, model.attn_id, enc.mask)
    return tn.mul_const(c_sf, m), tn.mul_const(c_id, m)


def interaction_swap(c_sf_raw: Tensor, c_id_raw: Tensor) -> tuple[Tensor, Tensor]:
    """Exchange the two context matrices: returns ``(c_id_raw, c_sf_raw)``."""
    if c_sf_raw.shape[:-1] != c_id_raw.shape[:-1]:
        raise DimensionError(f"swap: context lengths differ {c_sf_raw.shape} vs {c_id_raw.shape}")
    return c_id_raw, c_sf_raw


def assemble_task_states(enc: DualEncoding, c_sf: Tensor, c_id: Tensor) -> TaskStates:
    if c_sf.shape[:-1] != enc.h.shape[:-1] or c_id.shape[:-1] != enc.h_prime.shape[:-1]:
        raise DimensionError("task states: context and encoder lengths differ")
    return TaskStates(h_sf=tn.concat([enc.h, c_sf], axis=-1),
                      h_id=tn.concat([enc.h_prime, c_id], axis=-1),
                      c_sf=c_sf, c_id=c_id, mask=enc.mask)


def masked_mean(x: Tensor, mask) -> Tensor:
    """Global average pooling over the unmasked positions of ``[B, T, D]``."""
    mask = np.asarray(mask, dtype=np.float64)
    lengths = mask.sum(axis=1)
    if np.any(lengths == 0):
        raise ContractError("global average pooling over a fully masked sequence")
    summed = tn.sum_(tn.mul_const(x, mask[:, :, None]), axis=1)
    return tn.mul_const(summed, 1.0 / lengths[:, None])


def intent_logits(task: TaskStates, W_intent: Tensor, b_intent: Tensor | None = None,
                  dropout: float = 0.0, training: bool = False, rng=None) -> Tensor:
    pooled = masked_mean(task.h_id, task.mask)
    pooled = layers.dropout_apply(pooled, dropout, training, rng)
    return tn.linear(pooled, W_intent, b_intent)


def compress_for_slot(task: TaskStates, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """``s_i = conv1d([h_sf_i ; GAP(h_id)])``; the pooled vector is tiled along time."""
    T = task.h_sf.shape[1]
    pooled = expand_time(masked_mean(task.h_id, task.mask), T)
    joined = tn.mul_const(tn.concat([task.h_sf, pooled], axis=-1), task.mask[:, :, None])
    return layers.conv1d(joined, kernel, bias)


def expand_time(x: Tensor, T: int) -> Tensor:
    return tn.expand(x, 1, T)


def dpg_generate(dpg: DpgParams, z: Tensor) -> Tensor:
    """Dynamic parameters ``p = sigmoid(z w_D + b)``."""
    return tn.sigmoid(tn.linear(z, dpg.w_D, dpg.b))


def slot_logits(s: Tensor, W_slot: Tensor, b_slot: Tensor, dpg: DpgParams | None = None,
                z: Tensor | None = None) -> Tensor:
    """Per-token affine classifier; with ``dpg`` the weight rows are gated by ``p``.

    ``s (W * p[:, None])`` is computed as ``(s * p) W``, one gate per input
    row of the classifier weight.
    """
    if dpg is not None:
        if dpg.w_D.shape[1] != W_slot.shape[0]:
            raise ConfigError(f"DPG output size {dpg.w_D.shape[1]} != slot classifier rows {W_slot.shape[0]}")
        if z is None:
            raise ContractError("DPG gating needs the conditioning vector z")
        p = dpg_generate(dpg, z)
        s = s * expand_time(p, s.shape[1])
    return tn.linear(s, W_slot, b_slot)


def forward(model: ClimModel, token_ids, mask, training: bool = False, rng=None):
    """Returns ``(intent_logits [B, n_intents], slot_logits [B, T, n_slots])``."""
    cfg = model.config
    enc = encode(model, token_ids, mask, training, rng)
    c_sf_raw, c_id_raw = attention_contexts(model, enc)
    c_sf, c_id = interaction_swap(c_sf_raw, c_id_raw)
    task = assemble_task_states(enc, c_sf, c_id)
    y_intent = intent_logits(task, model.intent_W, model.intent_b, cfg.dropout, training, rng)
    s = compress_for_slot(task, model.conv_kernel, model.conv_bias)
    s = layers.dropout_apply(s, cfg.dropout, training, rng)
    z = masked_mean(task.h_id, task.mask) if model.dpg is not None else None
    y_slots = slot_logits(s, model.slot_W, model.slot_b, model.dpg, z)
    return y_intent, y_slots
