"""LSTM and GRU cells with two linear heads, forward pass and exact BPTT.

Shapes: inputs ``x[B, K, d]``, hidden states ``h[B, K, H]``. Gate blocks are
stacked along the last axis of ``W[d, G*H]``, ``U[H, G*H]`` and ``b[G*H]``:

* LSTM (G=4): input ``i``, forget ``f``, output ``o``, candidate ``g``::

      c_t = f*c_{t-1} + i*g,   h_t = o*tanh(c_t)

* GRU (G=3): update ``z``, reset ``r``, candidate ``n``::

      n = tanh(x W_n + (r*h_{t-1}) U_n + b_n),   h_t = (1-z)*h_{t-1} + z*n

The pretrain head maps every ``h_t`` to a Δ estimate (``Wp[H, L]``); the task
head maps the last state to one logit or value (``Wt[H, 1]``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..logistic import expit, log1pexp

CELLS = {"lstm": 4, "gru": 3}
RECURRENT = ("W", "U", "b")
PRETRAIN_HEAD = ("Wp", "bp")
TASK_HEAD = ("Wt", "bt")


class NumericError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


@dataclass
class RecurrentParams:
    cell: str
    input_dim: int
    hidden_dim: int
    tensors: dict = field(default_factory=dict)

    @property
    def delta_dim(self):
        return self.tensors["Wp"].shape[1] if "Wp" in self.tensors else 0

    @property
    def has_task_head(self):
        return "Wt" in self.tensors

    def copy(self) -> "RecurrentParams":
        return RecurrentParams(self.cell, self.input_dim, self.hidden_dim, {k: v.copy() for k, v in self.tensors.items()})


def _uniform(rng, shape, fan_in):
    a = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape)


def init_recurrent(cell: str, input_dim: int, hidden_dim: int, rng) -> dict:
    if cell not in CELLS:
        raise ValueError(f"unknown cell {cell!r}; expected one of {sorted(CELLS)}")
    G = CELLS[cell]
    H = hidden_dim
    b = np.zeros(G * H)
    if cell == "lstm":
        b[H:2 * H] = 1.0  # forget gate starts open
    return {
        "W": _uniform(rng, (input_dim, G * H), input_dim),
        "U": _uniform(rng, (H, G * H), H),
        "b": b,
    }


def init_pretrain_head(hidden_dim: int, delta_dim: int, rng) -> dict:
    return {"Wp": _uniform(rng, (hidden_dim, delta_dim), hidden_dim), "bp": np.zeros(delta_dim)}


def init_task_head(hidden_dim: int, rng) -> dict:
    return {"Wt": _uniform(rng, (hidden_dim, 1), hidden_dim), "bt": np.zeros(1)}


def init_params(cell, input_dim, hidden_dim, delta_dim=0, task_head=True, seed=0) -> RecurrentParams:
    """Fresh parameters; each block draws from its own stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed))
    r_rec, r_pre, r_task = (np.random.default_rng(s) for s in ss.spawn(3))
    t = init_recurrent(cell, input_dim, hidden_dim, r_rec)
    if delta_dim:
        t.update(init_pretrain_head(hidden_dim, delta_dim, r_pre))
    if task_head:
        t.update(init_task_head(hidden_dim, r_task))
    return RecurrentParams(cell, input_dim, hidden_dim, t)


@dataclass
class Forward:
    h: np.ndarray                     # [B, K, H]
    delta_hat: np.ndarray | None      # [B, K, L]
    output: np.ndarray | None         # [B] task logit / value
    cache: dict


def rnn_forward(params: RecurrentParams, x) -> Forward:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.input_dim:
        raise ShapeError(f"expected inputs [batch, window, {params.input_dim}], got {x.shape}")
    B, K, _ = x.shape
    H = params.hidden_dim
    W, U, b = (params.tensors[k] for k in RECURRENT)
    hs = np.zeros((B, K, H))
    h = np.zeros((B, H))
    if params.cell == "lstm":
        gates = np.zeros((B, K, 4 * H))
        cs = np.zeros((B, K, H))
        c = np.zeros((B, H))
        for t in range(K):
            a = x[:, t] @ W + h @ U + b
            g = np.empty_like(a)
            g[:, :3 * H] = expit(a[:, :3 * H])
            g[:, 3 * H:] = np.tanh(a[:, 3 * H:])
            c = g[:, H:2 * H] * c + g[:, :H] * g[:, 3 * H:]
            h = g[:, 2 * H:3 * H] * np.tanh(c)
            gates[:, t], cs[:, t], hs[:, t] = g, c, h
        cache = {"gates": gates, "c": cs}
    else:
        gates = np.zeros((B, K, 3 * H))
        for t in range(K):
            ax = x[:, t] @ W + b
            zr = expit(ax[:, :2 * H] + h @ U[:, :2 * H])
            n = np.tanh(ax[:, 2 * H:] + (zr[:, H:] * h) @ U[:, 2 * H:])
            h = (1.0 - zr[:, :H]) * h + zr[:, :H] * n
            gates[:, t, :2 * H], gates[:, t, 2 * H:] = zr, n
            hs[:, t] = h
        cache = {"gates": gates}
    delta_hat = hs @ params.tensors["Wp"] + params.tensors["bp"] if "Wp" in params.tensors else None
    output = (hs[:, -1] @ params.tensors["Wt"] + params.tensors["bt"])[:, 0] if params.has_task_head and K else None
    cache["x"] = x
    return Forward(hs, delta_hat, output, cache)


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def loss_and_output_grad(fwd: Forward, target, head: str, loss: str):
    """Mean loss and its gradient w.r.t. the head output."""
    target = np.asarray(target, dtype=np.float64)
    if head == "pretrain":
        if fwd.delta_hat is None:
            raise ShapeError("parameters carry no pretrain head")
        if target.shape != fwd.delta_hat.shape:
            raise ShapeError(f"delta targets {target.shape} != predictions {fwd.delta_hat.shape}")
        r = fwd.delta_hat - target
        value = float(np.mean(r * r))
        grad = 2.0 * r / r.size
    elif head == "task":
        if fwd.output is None:
            raise ShapeError("parameters carry no task head")
        z = fwd.output
        target = target.reshape(z.shape)
        if loss == "bce":
            value = float(np.mean(log1pexp(z) - target * z))
            grad = (expit(z) - target) / z.size
        elif loss == "mse":
            r = z - target
            value = float(np.mean(r * r))
            grad = 2.0 * r / z.size
        else:
            raise ValueError(f"unknown loss {loss!r}")
    else:
        raise ValueError(f"unknown head {head!r}")
    if not np.isfinite(value):
        out = np.abs(fwd.output if head == "task" else fwd.delta_hat)
        raise NumericError(
            f"non-finite {loss} loss on the {head} head "
            f"({int(np.isnan(out).sum())} NaN outputs, max finite |output| {out[np.isfinite(out)].max(initial=0.0):.3g})"
        )
    return value, grad


def rnn_backward(params: RecurrentParams, fwd: Forward, target, head: str = "task", loss: str = "bce", clip=None):
    """Loss and exact gradients of the mean batch loss for every parameter.

    Only the head named by ``head`` contributes; the other head gets zero
    gradients. With ``clip`` the whole gradient is rescaled to that global
    norm when it exceeds it.
    """
    value, gout = loss_and_output_grad(fwd, target, head, loss)
    x, hs = fwd.cache["x"], fwd.h
    B, K, _ = x.shape
    H = params.hidden_dim
    T = params.tensors
    grads = {k: np.zeros_like(v) for k, v in T.items()}
    dh_ext = np.zeros((B, K, H))
    if head == "pretrain":
        grads["Wp"] = np.einsum("bkh,bkl->hl", hs, gout)
        grads["bp"] = gout.sum(axis=(0, 1))
        dh_ext = gout @ T["Wp"].T
    else:
        grads["Wt"] = hs[:, -1].T @ gout[:, None]
        grads["bt"] = np.array([gout.sum()])
        dh_ext[:, -1] = gout[:, None] @ T["Wt"].T
    W, U = T["W"], T["U"]
    dW, dU, db = grads["W"], grads["U"], grads["b"]
    gates = fwd.cache["gates"]
    dh_next = np.zeros((B, H))
    if params.cell == "lstm":
        cs = fwd.cache["c"]
        dc_next = np.zeros((B, H))
        for t in range(K - 1, -1, -1):
            g = gates[:, t]
            i, f, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            c = cs[:, t]
            c_prev = cs[:, t - 1] if t else np.zeros((B, H))
            h_prev = hs[:, t - 1] if t else np.zeros((B, H))
            dh = dh_ext[:, t] + dh_next
            tc = np.tanh(c)
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = np.empty((B, 4 * H))
            da[:, :H] = dc * cand * i * (1.0 - i)
            da[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            da[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            da[:, 3 * H:] = dc * i * (1.0 - cand * cand)
            dW += x[:, t].T @ da
            dU += h_prev.T @ da
            db += da.sum(axis=0)
            dh_next = da @ U.T
            dc_next = dc * f
    else:
        for t in range(K - 1, -1, -1):
            g = gates[:, t]
            z, r, n = g[:, :H], g[:, H:2 * H], g[:, 2 * H:]
            h_prev = hs[:, t - 1] if t else np.zeros((B, H))
            dh = dh_ext[:, t] + dh_next
            da = np.empty((B, 3 * H))
            da[:, 2 * H:] = dh * z * (1.0 - n * n)
            d_rh = da[:, 2 * H:] @ U[:, 2 * H:].T
            da[:, :H] = dh * (n - h_prev) * z * (1.0 - z)
            da[:, H:2 * H] = d_rh * h_prev * r * (1.0 - r)
            dW += x[:, t].T @ da
            db += da.sum(axis=0)
            dU[:, :2 * H] += h_prev.T @ da[:, :2 * H]
            dU[:, 2 * H:] += (r * h_prev).T @ da[:, 2 * H:]
            dh_next = dh * (1.0 - z) + d_rh * r + da[:, :2 * H] @ U[:, :2 * H].T
    for k, v in grads.items():
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite gradient for {k}")
    if clip is not None:
        clip_gradients(grads, clip)
    return value, grads


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Rescale ``grads`` in place to global norm ``max_norm``; returns the norm before."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm > 0:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm
