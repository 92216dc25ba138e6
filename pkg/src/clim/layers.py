"""Neural building blocks: embeddings, LSTM, transformer block, attention, conv, dropout.

All sequence layers are batch-first: inputs are ``[B, T, d]`` and masks are
``[B, T]`` arrays with 1 on real tokens and 0 on padding.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from clim import tensor as tn
from clim.exceptions import ConfigError, ContractError, DimensionError
from clim.tensor import Tensor


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return _uniform(rng, (fan_in, fan_out), np.sqrt(6.0 / (fan_in + fan_out)))


class _ParamGroup:
    """Mixin for dataclasses whose Tensor fields are learnable parameters."""

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Tensor):
                out[f"{prefix}.{f.name}"] = value
        return out


def _check_mask(inputs: Tensor, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if inputs.ndim != 3 or mask.shape != inputs.shape[:2]:
        raise DimensionError(f"mask shape {mask.shape} does not match inputs {inputs.shape}")
    return mask


# embeddings -----------------------------------------------------------------

def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; a table with ``requires_grad=False`` is frozen."""
    return tn.embedding(table, ids)


# LSTM -----------------------------------------------------------------------

@dataclass
class LstmParams(_ParamGroup):
    """One direction of an LSTM.  Gate columns are ordered input, forget, output, candidate."""

    W_x: Tensor
    W_h: Tensor
    b: Tensor

    @property
    def hidden_size(self) -> int:
        return self.W_h.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int = 200):
        bound = 1.0 / np.sqrt(hidden_size)
        return cls(
            W_x=tn.parameter(_uniform(rng, (input_size, 4 * hidden_size), bound)),
            W_h=tn.parameter(_uniform(rng, (hidden_size, 4 * hidden_size), bound)),
            b=tn.parameter(_uniform(rng, (4 * hidden_size,), bound)),
        )


def _lstm_cell(z: Tensor, c: Tensor, H: int) -> tuple[Tensor, Tensor]:
    gates = tn.sigmoid(z[:, :3 * H])
    cand = tn.tanh(z[:, 3 * H:])
    i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:]
    c_new = f * c + i * cand
    return o * tn.tanh(c_new), c_new


def lstm_step(params: LstmParams, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One recurrence step on ``x``: ``[B, d]`` with state ``h, c``: ``[B, H]``."""
    z = tn.add_bias(tn.matmul(x, params.W_x) + tn.matmul(h, params.W_h), params.b)
    return _lstm_cell(z, c, params.hidden_size)


def lstm_direction(params: LstmParams, inputs: Tensor, mask: np.ndarray, reverse: bool = False) -> Tensor:
    B, T, _ = inputs.shape
    H = params.hidden_size
    proj = tn.add_bias(tn.matmul(inputs, params.W_x), params.b)
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    outputs: list[Tensor | None] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = proj[:, t, :] + tn.matmul(h, params.W_h)
        h, c = _lstm_cell(z, c, H)
        # padded steps hold a zero state, so a reverse pass starts clean at the last real token
        m = mask[:, t:t + 1]
        h = tn.mul_const(h, m)
        c = tn.mul_const(c, m)
        outputs[t] = h
    return tn.stack(outputs, axis=1)


def bilstm_encode(params_fwd: LstmParams, params_bwd: LstmParams, inputs: Tensor, mask) -> Tensor:
    """``h_t = [h_fwd_t ; h_bwd_t]`` with shape ``[B, T, 2H]``; padded rows are zero."""
    if inputs.ndim != 3 or inputs.shape[1] < 1:
        raise ContractError(f"bilstm_encode needs a non-empty [B, T, d] input, got {inputs.shape}")
    mask = _check_mask(inputs, mask)
    fwd = lstm_direction(params_fwd, inputs, mask)
    bwd = lstm_direction(params_bwd, inputs, mask, reverse=True)
    return tn.concat([fwd, bwd], axis=-1)


# transformer ----------------------------------------------------------------

@dataclass
class TransformerBlockParams(_ParamGroup):
    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor
    b_o: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ff_W1: Tensor
    ff_b1: Tensor
    ff_W2: Tensor
    ff_b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    head_count: int = 4
    eps: float = 1e-5

    @property
    def model_dim(self) -> int:
        return self.W_q.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, model_dim: int, head_count: int = 4,
             ff_dim: int | None = None, eps: float = 1e-5):
        if model_dim % head_count:
            raise ConfigError(f"model_dim {model_dim} not divisible by head_count {head_count}")
        d, f = model_dim, ff_dim or 4 * model_dim
        return cls(
            W_q=tn.parameter(_xavier(rng, d, d)),
            W_k=tn.parameter(_xavier(rng, d, d)),
            W_v=tn.parameter(_xavier(rng, d, d)),
            W_o=tn.parameter(_xavier(rng, d, d)),
            b_o=tn.parameter(np.zeros(d)),
            ln1_g=tn.parameter(np.ones(d)),
            ln1_b=tn.parameter(np.zeros(d)),
            ff_W1=tn.parameter(_xavier(rng, d, f)),
            ff_b1=tn.parameter(np.zeros(f)),
            ff_W2=tn.parameter(_xavier(rng, f, d)),
            ff_b2=tn.parameter(np.zeros(d)),
            ln2_g=tn.parameter(np.ones(d)),
            ln2_b=tn.parameter(np.zeros(d)),
            head_count=head_count,
            eps=eps,
        )


def multi_head_self_attention(params: TransformerBlockParams, x: Tensor, mask: np.ndarray,
                              return_weights: bool = False):
    B, T, d = x.shape
    h = params.head_count
    dk = d // h

    def heads(w: Tensor, order) -> Tensor:
        return tn.transpose(tn.reshape(tn.matmul(x, w), (B, T, h, dk)), order)

    q = heads(params.W_q, (0, 2, 1, 3))
    k_t = heads(params.W_k, (0, 2, 3, 1))
    v = heads(params.W_v, (0, 2, 1, 3))
    scores = tn.matmul(q, k_t) * (1.0 / np.sqrt(dk))
    weights = tn.softmax(scores, axis=-1, mask=mask[:, None, None, :] > 0)
    ctx = tn.reshape(tn.transpose(tn.matmul(weights, v), (0, 2, 1, 3)), (B, T, d))
    out = tn.add_bias(tn.matmul(ctx, params.W_o), params.b_o)
    return (out, weights) if return_weights else out


def transformer_block(params: TransformerBlockParams, inputs: Tensor, mask) -> Tensor:
    """Post-norm block: self-attention and feed-forward sublayers, each residual + layer norm."""
    mask = _check_mask(inputs, mask)
    if inputs.shape[-1] != params.model_dim:
        raise DimensionError(f"transformer input width {inputs.shape[-1]} != model_dim {params.model_dim}")
    attn = multi_head_self_attention(params, inputs, mask)
    y = tn.layer_norm(inputs + attn, params.ln1_g, params.ln1_b, params.eps)
    ff = tn.linear(tn.relu(tn.linear(y, params.ff_W1, params.ff_b1)), params.ff_W2, params.ff_b2)
    return tn.layer_norm(y + ff, params.ln2_g, params.ln2_b, params.eps)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate[: dim // 2])
    return table


# additive attention ---------------------------------------------------------

@dataclass
class AttentionParams(_ParamGroup):
    W_q: Tensor
    W_k: Tensor
    v: Tensor
    scoring: str = "additive"

    @classmethod
    def init(cls, rng: np.random.Generator, query_dim: int, key_dim: int, attn_dim: int,
             scoring: str = "additive"):
        if scoring not in ("additive", "dot"):
            raise ConfigError(f"unknown attention scoring {scoring!r}")
        return cls(
            W_q=tn.parameter(_xavier(rng, query_dim, attn_dim)),
            W_k=tn.parameter(_xavier(rng, key_dim, attn_dim)),
            v=tn.parameter(_uniform(rng, (attn_dim,), 1.0 / np.sqrt(attn_dim))),
            scoring=scoring,
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = super().named(prefix)
        if self.scoring == "dot":
            # the score vector only exists for feed-forward scoring
            out.pop(f"{prefix}.v")
        return out


def attention_scores(queries: Tensor, keys: Tensor, params: AttentionParams) -> Tensor:
    q = tn.matmul(queries, params.W_q)
    k = tn.matmul(keys, params.W_k)
    if params.scoring == "dot":
        k_t = tn.transpose(k, (0, 2, 1))
        return tn.matmul(q, k_t) * (1.0 / np.sqrt(q.shape[-1]))
    a = q.shape[-1]
    hidden = tn.tanh(tn.pairwise_add(q, k))
    B, T, S = hidden.shape[:3]
    return tn.reshape(tn.matmul(hidden, tn.reshape(params.v, (a, 1))), (B, T, S))


def additive_attention_context(queries: Tensor, keys_values: Tensor, params: AttentionParams,
                               mask, return_weights: bool = False):
    """``c_i = sum_j alpha_ij v_j`` with ``alpha_i = softmax_j score(q_i, k_j)`` over unmasked ``j``."""
    if queries.ndim != 3 or keys_values.ndim != 3 or queries.shape[:2] != keys_values.shape[:2]:
        raise DimensionError(f"attention: queries {queries.shape} vs keys {keys_values.shape}")
    mask = _check_mask(keys_values, mask)
    if not mask.any(axis=1).all():
        raise ContractError("attention: every key position is masked")
    scores = attention_scores(queries, keys_values, params)
    weights = tn.softmax(scores, axis=-1, mask=mask[:, None, :] > 0)
    ctx = tn.matmul(weights, keys_values)
    return (ctx, weights) if return_weights else ctx


# convolution / dropout ------------------------------------------------------

def conv1d(inputs: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    return tn.conv1d(inputs, kernel, bias)


def dropout_apply(x: Tensor, rate: float = 0.5, training: bool = True,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= rate
    return tn.mul_const(x, keep / (1.0 - rate))
