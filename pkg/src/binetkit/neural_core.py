"""Minimal neural network building blocks on numpy with analytic gradients.

Everything here is written for recurrent sequence models over categorical
event data: an embedding table, a gated recurrent cell with combined gate
storage, batch normalization that ignores padded positions, a dense layer,
and the usual glue (softmax, masked cross-entropy, Adam, gradient clipping,
numeric gradient checking). Layers cache what their backward pass needs;
recurrent caches behave as a stack so backpropagation through time simply
pops steps in reverse order.

All parameters are float64. Gradient buffers live next to the parameters
and accumulate until `zero_grads` is called.
"""
from __future__ import annotations

import math

import numpy as np

ADAM_LR = 0.001
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CLIP_NORM = 5.0
BN_MOMENTUM = 0.99
BN_EPS = 1e-5
CE_CLIP = 1e-12


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Uniform init on +-sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


def embedding_dim(vocabulary_size: int) -> int:
    """ceil(sqrt(v + 2)) with a floor of 2; +2 covers the reserved codes."""
    return max(2, math.ceil(math.sqrt(vocabulary_size + 2)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray, axis: int = -1) -> np.ndarray:
    inner = (dprobs * probs).sum(axis=axis, keepdims=True)
    return probs * (dprobs - inner)


def masked_cross_entropy(probs: np.ndarray, targets: np.ndarray,
                         pad_code: int = 0) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over non-padding targets.

    probs: (N, V) rows summing to 1; targets: (N,) integer codes. Positions
    whose target equals pad_code contribute neither loss nor gradient.
    Probabilities are clipped at 1e-12 before the log.
    """
    n = probs.shape[0]
    valid = targets != pad_code
    count = int(valid.sum())
    dprobs = np.zeros_like(probs)
    if count == 0:
        return 0.0, dprobs
    rows = np.nonzero(valid)[0]
    p = probs[rows, targets[rows]]
    clipped = np.maximum(p, CE_CLIP)
    loss = float(-np.log(clipped).sum() / count)
    grad = np.where(p >= CE_CLIP, -1.0 / clipped, 0.0) / count
    dprobs[rows, targets[rows]] = grad
    return loss, dprobs


class Embedding:
    """Lookup table mapping integer codes to dense vectors."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.table = glorot_uniform(rng, vocab_size, dim)
        self.d_table = np.zeros_like(self.table)
        self._codes: list[np.ndarray] = []

    def params(self):
        return {"table": self.table}

    def grads(self):
        return {"table": self.d_table}

    def zero_grads(self):
        self.d_table[...] = 0.0

    def reset(self):
        self._codes.clear()

    def forward(self, codes: np.ndarray) -> np.ndarray:
        self._codes.append(codes)
        return self.table[codes]

    def backward(self, dout: np.ndarray) -> None:
        codes = self._codes.pop()
        np.add.at(self.d_table, codes.ravel(),
                  dout.reshape(-1, self.table.shape[1]))


class Dense:
    """Affine layer y = x W + b over the last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.W = glorot_uniform(rng, in_dim, out_dim)
        self.b = np.zeros(out_dim)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._inputs: list[np.ndarray] = []

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def zero_grads(self):
        self.dW[...] = 0.0
        self.db[...] = 0.0

    def reset(self):
        self._inputs.clear()

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._inputs.append(x)
        return x @ self.W + self.b

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._inputs.pop()
        flat_x = x.reshape(-1, self.W.shape[0])
        flat_d = dout.reshape(-1, self.W.shape[1])
        self.dW += flat_x.T @ flat_d
        self.db += flat_d.sum(axis=0)
        return (dout @ self.W.T).reshape(x.shape)


class GruCell:
    """Gated recurrent cell with gates stored as one (in, 3h) / (h, 3h) pair.

    Gate order along the last axis is [update z | reset r | candidate]:

        z  = sigmoid(x W_z + h U_z + b_z)
        r  = sigmoid(x W_r + h U_r + b_r)
        hc = tanh(x W_h + (r * h) U_h + b_h)
        h' = (1 - z) * h + z * hc

    The named views (W_z etc.) alias into the combined arrays.
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.W = glorot_uniform(rng, in_dim, hidden, shape=(in_dim, 3 * hidden))
        self.U = glorot_uniform(rng, hidden, hidden, shape=(hidden, 3 * hidden))
        self.b = np.zeros(3 * hidden)
        self.dW = np.zeros_like(self.W)
        self.dU = np.zeros_like(self.U)
        self.db = np.zeros_like(self.b)
        self._cache: list[tuple] = []

    # named views into the combined arrays (write-through)
    @property
    def W_z(self):
        return self.W[:, : self.hidden]

    @property
    def W_r(self):
        return self.W[:, self.hidden : 2 * self.hidden]

    @property
    def W_h(self):
        return self.W[:, 2 * self.hidden :]

    @property
    def U_z(self):
        return self.U[:, : self.hidden]

    @property
    def U_r(self):
        return self.U[:, self.hidden : 2 * self.hidden]

    @property
    def U_h(self):
        return self.U[:, 2 * self.hidden :]

    @property
    def b_z(self):
        return self.b[: self.hidden]

    @property
    def b_r(self):
        return self.b[self.hidden : 2 * self.hidden]

    @property
    def b_h(self):
        return self.b[2 * self.hidden :]

    def params(self):
        return {"W": self.W, "U": self.U, "b": self.b}

    def grads(self):
        return {"W": self.dW, "U": self.dU, "b": self.db}

    def zero_grads(self):
        self.dW[...] = 0.0
        self.dU[...] = 0.0
        self.db[...] = 0.0

    def reset(self):
        self._cache.clear()

    def step(self, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
        h = self.hidden
        gates_x = x @ self.W + self.b
        gates_h = h_prev @ self.U[:, : 2 * h]
        z = sigmoid(gates_x[:, :h] + gates_h[:, :h])
        r = sigmoid(gates_x[:, h : 2 * h] + gates_h[:, h:])
        rh = r * h_prev
        hc = np.tanh(gates_x[:, 2 * h :] + rh @ self.U[:, 2 * h :])
        h_new = (1.0 - z) * h_prev + z * hc
        self._cache.append((x, h_prev, z, r, rh, hc))
        return h_new

    def backward_step(self, dh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pop the most recent step; returns (dx, dh_prev)."""
        x, h_prev, z, r, rh, hc = self._cache.pop()
        h = self.hidden
        dz = dh * (hc - h_prev)
        dhc = dh * z
        dh_prev = dh * (1.0 - z)

        dhc_pre = dhc * (1.0 - hc * hc)
        drh = dhc_pre @ self.U[:, 2 * h :].T
        self.dU[:, 2 * h :] += rh.T @ dhc_pre
        dr = drh * h_prev
        dh_prev += drh * r

        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        dgates_x = np.concatenate([dz_pre, dr_pre, dhc_pre], axis=1)
        dzr = dgates_x[:, : 2 * h]
        self.dU[:, : 2 * h] += h_prev.T @ dzr
        dh_prev += dzr @ self.U[:, : 2 * h].T

        self.dW += x.T @ dgates_x
        self.db += dgates_x.sum(axis=0)
        dx = dgates_x @ self.W.T
        return dx, dh_prev


class BatchNorm:
    """Batch normalization over rows, restricted to valid (non-padded) rows.

    Running statistics follow running = m_t * running + (1 - m_t) * batch
    with m_t = min(momentum, 1 - 1/t) for the t-th update, so early values
    are plain averages of the batches seen so far (no initialization bias)
    and the rule settles into the usual exponential moving average. They are
    only consulted at inference time. The batch variance is the biased
    estimate over the valid rows.
    """

    def __init__(self, dim: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self.updates = 0
        self.d_gamma = np.zeros(dim)
        self.d_beta = np.zeros(dim)
        self._cache: list[tuple] = []

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.d_gamma, "beta": self.d_beta}

    def zero_grads(self):
        self.d_gamma[...] = 0.0
        self.d_beta[...] = 0.0

    def reset(self):
        self._cache.clear()

    def forward(self, x: np.ndarray, valid: np.ndarray, training: bool,
                update_running: bool | None = None) -> np.ndarray:
        """x: (..., dim); valid: boolean with x's leading shape."""
        flat = x.reshape(-1, x.shape[-1])
        mask = valid.reshape(-1)
        if not training:
            xhat = (flat - self.running_mean) / np.sqrt(self.running_var + self.eps)
            return (self.gamma * xhat + self.beta).reshape(x.shape)
        rows = flat[mask]
        n = rows.shape[0]
        mean = rows.mean(axis=0)
        var = rows.var(axis=0)
        if update_running or update_running is None:
            self.updates += 1
            m = min(self.momentum, 1.0 - 1.0 / self.updates)
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (flat - mean) * inv_std
        out = self.gamma * xhat + self.beta
        self._cache.append((xhat, inv_std, mask, n, x.shape))
        return out.reshape(x.shape)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv_std, mask, n, shape = self._cache.pop()
        dflat = dout.reshape(-1, dout.shape[-1])
        self.d_gamma += (dflat * xhat).sum(axis=0)
        self.d_beta += dflat.sum(axis=0)
        dxhat = dflat * self.gamma
        # statistics depend only on the valid rows
        sum_d = dxhat[mask].sum(axis=0)
        sum_dx = (dxhat[mask] * xhat[mask]).sum(axis=0)
        dx = dxhat * inv_std
        dx[mask] -= inv_std / n * (sum_d + xhat[mask] * sum_dx)
        return dx.reshape(shape)


class Adam:
    """Adam with bias correction over a named parameter dictionary."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = ADAM_LR,
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 eps: float = ADAM_EPS):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float = CLIP_NORM) -> float:
    """Scale all gradients in place so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def grad_check(loss_and_grads, params: dict[str, np.ndarray],
               step: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    loss_and_grads() must recompute the loss and a {name: gradient} dict from
    the current parameter values on every call. Relative error per entry is
    |a - n| / max(|a|, |n|, 1e-4). When max_entries is given, that many
    entries per parameter are sampled instead of sweeping all of them.
    """
    _, analytic = loss_and_grads()
    analytic = {k: v.copy() for k, v in analytic.items()}
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            picker = rng if rng is not None else np.random.default_rng(0)
            indices = picker.choice(flat.size, size=max_entries, replace=False)
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            up, _ = loss_and_grads()
            flat[i] = original - step
            down, _ = loss_and_grads()
            flat[i] = original
            numeric = (up - down) / (2 * step)
            a = float(analytic[name].reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            worst = max(worst, err)
    return worst
