"""Numerical building blocks: projected LSTM cells, affine/tanh layers,
log-softmax, Adam, and gradient clipping.

Everything is float64 and every backward pass is hand-derived; tests check them
against central finite differences. Parameters live in plain numpy arrays so a
flat name->array mapping can serve optimizer and checkpoint code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

Array = np.ndarray


def sigmoid(x: Array) -> Array:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(x: Array, axis: int = -1) -> Array:
    """Log of the softmax along `axis`, shift-stabilized."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("log_softmax of an empty vector")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    """Uniform(-r, r) with r = 1/sqrt(fan_in)."""
    r = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-r, r, size=shape)


# ---------------------------------------------------------------------------
# Affine and tanh feed-forward pieces (used by the joint network)
# ---------------------------------------------------------------------------


def affine(x: Array, w: Array, b: Array) -> Array:
    """y = x @ w.T + b for x of shape (..., in_dim), w of shape (out, in)."""
    return x @ w.T + b


def affine_backward(
    x: Array, w: Array, grad_y: Array
) -> tuple[Array, Array, Array]:
    """Gradients of `affine`: returns (grad_x, grad_w, grad_b)."""
    lead = grad_y.reshape(-1, grad_y.shape[-1])
    flat_x = x.reshape(-1, x.shape[-1])
    grad_w = lead.T @ flat_x
    grad_b = lead.sum(axis=0)
    grad_x = grad_y @ w
    return grad_x, grad_w, grad_b


def tanh_ffn(x: Array, w1: Array, b1: Array, w2: Array, b2: Array) -> tuple[Array, Array]:
    """Two-layer net: logits = W2 tanh(W1 x + b1) + b2. Returns (logits, hidden)."""
    hidden = np.tanh(affine(x, w1, b1))
    return affine(hidden, w2, b2), hidden


def tanh_ffn_backward(
    x: Array,
    w1: Array,
    w2: Array,
    hidden: Array,
    grad_logits: Array,
) -> tuple[Array, Array, Array, Array, Array]:
    """Gradients of `tanh_ffn`: (grad_x, grad_w1, grad_b1, grad_w2, grad_b2)."""
    grad_hidden, grad_w2, grad_b2 = affine_backward(hidden, w2, grad_logits)
    grad_pre = grad_hidden * (1.0 - hidden * hidden)
    grad_x, grad_w1, grad_b1 = affine_backward(x, w1, grad_pre)
    return grad_x, grad_w1, grad_b1, grad_w2, grad_b2


# ---------------------------------------------------------------------------
# LSTM with projection
# ---------------------------------------------------------------------------


@dataclass
class LstmCellState:
    """Recurrent state of one projected LSTM layer.

    cell has length hidden_dim, memory (the projected output fed back as the
    recurrent input) has length proj_dim.
    """

    cell: Array
    memory: Array

    def copy(self) -> "LstmCellState":
        return LstmCellState(self.cell.copy(), self.memory.copy())

    @classmethod
    def zeros(cls, hidden_dim: int, proj_dim: int) -> "LstmCellState":
        return cls(np.zeros(hidden_dim), np.zeros(proj_dim))


@dataclass
class LstmLayerParams:
    """Weights of one projected LSTM layer.

    Gate rows are stacked in the order (input, forget, candidate, output):
    w_x is (4H, input_dim), w_m is (4H, proj_dim), b is (4H,), and the
    projection w_proj is (hidden_dim, proj_dim) with no bias.
    """

    w_x: Array
    w_m: Array
    b: Array
    w_proj: Array

    @property
    def hidden_dim(self) -> int:
        return self.w_proj.shape[0]

    @property
    def proj_dim(self) -> int:
        return self.w_proj.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        input_dim: int,
        hidden_dim: int,
        proj_dim: int,
    ) -> "LstmLayerParams":
        """Fan-in uniform weights, zero biases except forget-gate bias +1."""
        w_x = uniform_init(rng, (4 * hidden_dim, input_dim), input_dim)
        w_m = uniform_init(rng, (4 * hidden_dim, proj_dim), proj_dim)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim : 2 * hidden_dim] = 1.0
        w_proj = uniform_init(rng, (hidden_dim, proj_dim), hidden_dim)
        return cls(w_x, w_m, b, w_proj)

    @classmethod
    def zeros_like(cls, other: "LstmLayerParams") -> "LstmLayerParams":
        return cls(
            np.zeros_like(other.w_x),
            np.zeros_like(other.w_m),
            np.zeros_like(other.b),
            np.zeros_like(other.w_proj),
        )

    def zero_state(self) -> LstmCellState:
        return LstmCellState.zeros(self.hidden_dim, self.proj_dim)


class LstmStepCache(NamedTuple):
    x: Array
    m_prev: Array
    c_prev: Array
    i: Array
    f: Array
    g: Array
    o: Array
    tanh_c: Array
    h: Array


def _check_lstm_shapes(params: LstmLayerParams, x: Array, state: LstmCellState) -> None:
    if x.shape != (params.input_dim,):
        raise ValueError(
            f"lstm_step input has shape {x.shape}, expected ({params.input_dim},)"
        )
    if state.cell.shape != (params.hidden_dim,):
        raise ValueError(
            f"lstm_step state.cell has shape {state.cell.shape}, "
            f"expected ({params.hidden_dim},)"
        )
    if state.memory.shape != (params.proj_dim,):
        raise ValueError(
            f"lstm_step state.memory has shape {state.memory.shape}, "
            f"expected ({params.proj_dim},)"
        )


def lstm_step(
    params: LstmLayerParams, x: Array, state: LstmCellState
) -> tuple[Array, LstmCellState]:
    """One projected-LSTM step; returns (memory output, new state).

    c = f*c_prev + i*tanh_candidate, h = o*tanh(c), m = w_proj.T @ h.
    No peephole connections; the projection has no bias.
    """
    out, new_state, _ = lstm_step_cached(params, x, state)
    return out, new_state


def lstm_step_cached(
    params: LstmLayerParams, x: Array, state: LstmCellState
) -> tuple[Array, LstmCellState, LstmStepCache]:
    _check_lstm_shapes(params, x, state)
    h_dim = params.hidden_dim
    a = params.w_x @ x + params.w_m @ state.memory + params.b
    i = sigmoid(a[:h_dim])
    f = sigmoid(a[h_dim : 2 * h_dim])
    g = np.tanh(a[2 * h_dim : 3 * h_dim])
    o = sigmoid(a[3 * h_dim :])
    c = f * state.cell + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    m = params.w_proj.T @ h
    cache = LstmStepCache(x, state.memory, state.cell, i, f, g, o, tanh_c, h)
    return m, LstmCellState(c, m), cache


def lstm_step_backward(
    params: LstmLayerParams,
    cache: LstmStepCache,
    grad_memory: Array,
    grad_cell: Array,
    grads: LstmLayerParams,
) -> tuple[Array, Array, Array]:
    """Backward through one step.

    grad_memory / grad_cell are the gradients flowing into the step's output
    memory and cell. Parameter gradients accumulate into `grads` (an
    LstmLayerParams used as a container). Returns
    (grad_x, grad_prev_memory, grad_prev_cell).
    """
    grad_h = params.w_proj @ grad_memory
    grads.w_proj += np.outer(cache.h, grad_memory)
    da, grad_c_prev = _elementwise_backward(cache, grad_h, grad_cell)
    grads.w_x += np.outer(da, cache.x)
    grads.w_m += np.outer(da, cache.m_prev)
    grads.b += da
    grad_x = params.w_x.T @ da
    grad_m_prev = params.w_m.T @ da
    return grad_x, grad_m_prev, grad_c_prev


def _elementwise_backward(
    cache: LstmStepCache, grad_h: Array, grad_cell_in: Array
) -> tuple[Array, Array]:
    """Shared gate math: returns (d_gates (4H,), grad_c_prev)."""
    i, f, g, o = cache.i, cache.f, cache.g, cache.o
    d_o = grad_h * cache.tanh_c
    gc = grad_cell_in + grad_h * o * (1.0 - cache.tanh_c * cache.tanh_c)
    d_f = gc * cache.c_prev
    d_i = gc * g
    d_g = gc * i
    da = np.concatenate(
        [
            d_i * i * (1.0 - i),
            d_f * f * (1.0 - f),
            d_g * (1.0 - g * g),
            d_o * o * (1.0 - o),
        ]
    )
    return da, gc * f


def lstm_sequence(
    params: LstmLayerParams, xs: Array, state: LstmCellState
) -> tuple[Array, LstmCellState, list[LstmStepCache]]:
    """Run a layer over xs of shape (T, input_dim); returns (outputs (T, proj),
    final state, per-step caches). The input projection is batched into one
    matmul; the recurrent path is stepped."""
    t_len = xs.shape[0]
    if t_len == 0:
        return np.zeros((0, params.proj_dim)), state.copy(), []
    h_dim = params.hidden_dim
    pre = xs @ params.w_x.T + params.b
    outs = np.empty((t_len, params.proj_dim))
    caches: list[LstmStepCache] = []
    c, m = state.cell, state.memory
    for t in range(t_len):
        a = pre[t] + params.w_m @ m
        i = sigmoid(a[:h_dim])
        f = sigmoid(a[h_dim : 2 * h_dim])
        g = np.tanh(a[2 * h_dim : 3 * h_dim])
        o = sigmoid(a[3 * h_dim :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h = o * tanh_c
        m_new = params.w_proj.T @ h
        caches.append(LstmStepCache(xs[t], m, c, i, f, g, o, tanh_c, h))
        outs[t] = m_new
        c, m = c_new, m_new
    return outs, LstmCellState(c.copy(), m.copy()), caches


def lstm_sequence_backward(
    params: LstmLayerParams,
    caches: list[LstmStepCache],
    grad_outputs: Array,
    grad_final: LstmCellState | None,
    grads: LstmLayerParams,
) -> tuple[Array, LstmCellState]:
    """Backward through `lstm_sequence`.

    grad_outputs is (T, proj_dim); grad_final optionally adds gradient flowing
    into the final state. Parameter gradients accumulate into `grads`; returns
    (grad_xs (T, input_dim), grad into the initial state)."""
    t_len = len(caches)
    if t_len == 0:
        zero = LstmCellState.zeros(params.hidden_dim, params.proj_dim)
        if grad_final is not None:
            zero = LstmCellState(grad_final.cell.copy(), grad_final.memory.copy())
        return np.zeros((0, params.input_dim)), zero
    d_gates = np.empty((t_len, 4 * params.hidden_dim))
    grad_m_total = np.empty((t_len, params.proj_dim))
    gm = np.zeros(params.proj_dim)
    gc = np.zeros(params.hidden_dim)
    if grad_final is not None:
        gm = gm + grad_final.memory
        gc = gc + grad_final.cell
    for t in range(t_len - 1, -1, -1):
        gm = gm + grad_outputs[t]
        grad_m_total[t] = gm
        grad_h = params.w_proj @ gm
        da, gc = _elementwise_backward(caches[t], grad_h, gc)
        d_gates[t] = da
        gm = params.w_m.T @ da
    xs = np.stack([c.x for c in caches])
    m_prevs = np.stack([c.m_prev for c in caches])
    hs = np.stack([c.h for c in caches])
    grads.w_x += d_gates.T @ xs
    grads.w_m += d_gates.T @ m_prevs
    grads.b += d_gates.sum(axis=0)
    grads.w_proj += hs.T @ grad_m_total
    grad_xs = d_gates @ params.w_x
    return grad_xs, LstmCellState(gc, gm)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    step: int
    m: dict[str, Array]
    v: dict[str, Array]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(
    params: dict[str, Array],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    return AdamState(
        step=0,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    params: dict[str, Array],
    grads: dict[str, Array],
    state: AdamState,
    lr: float | None = None,
) -> tuple[dict[str, Array], AdamState]:
    """One bias-corrected Adam update, applied in place.

    `lr` overrides state.lr for this step (used by warmup schedules). Keys of
    `grads` must match `params` exactly.
    """
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise ValueError(f"gradient keys do not match parameters: {sorted(missing)}")
    if lr is None:
        lr = state.lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def global_norm(grads: dict[str, Array]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_by_global_norm(
    grads: dict[str, Array], max_norm: float
) -> tuple[dict[str, Array], float]:
    """Scale all gradients in place so the global norm is at most max_norm.

    Returns (grads, pre-clip norm)."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads, norm
