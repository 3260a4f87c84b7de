"""Small dense networks with hand-written backprop, Adam and Polyak updates.

Every network owns one flat float64 parameter vector; layer weights and biases
are views into it. Optimizers and target updates therefore work on a single
array, and composite networks (towers, concatenating critics) are built by
handing each sub-network a slice of the parent buffer.

Weights are stored ``out x in``; a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")


class NonFiniteError(FloatingPointError):
    """A loss, gradient or parameter became NaN or infinite."""


def check_finite(x, what="value"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")
    return x


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(y, g, kind):
    if kind == "relu":
        return g * (y > 0)
    if kind == "tanh":
        return g * (1.0 - y * y)
    return g


class Network:
    """Base for anything with a flat ``params`` vector."""

    params: np.ndarray

    @property
    def size(self):
        return self.params.size

    def clone(self):
        twin = self._empty()
        twin.params[:] = self.params
        return twin

    def _empty(self):
        raise NotImplementedError


class Mlp(Network):
    """Chain of affine layers, each followed by its activation.

    ``final_init`` replaces the fan-in uniform range of the last layer, e.g.
    ``3e-3`` for actor outputs.
    """

    def __init__(self, sizes, activations, rng=None, final_init=None, buffer=None):
        sizes = [int(s) for s in sizes]
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes, self.activations, self.final_init = sizes, list(activations), final_init
        shapes = [(o, i) for i, o in zip(sizes[:-1], sizes[1:])]
        total = sum(o * i + o for o, i in shapes)
        self.params = np.zeros(total) if buffer is None else buffer
        if self.params.size != total:
            raise ValueError("parameter buffer has the wrong size")
        self.W, self.b, self._slices = [], [], []
        pos = 0
        for o, i in shapes:
            self.W.append(self.params[pos:pos + o * i].reshape(o, i))
            self._slices.append((pos, pos + o * i, pos + o * i + o))
            pos += o * i
            self.b.append(self.params[pos:pos + o])
            pos += o
        if rng is not None:
            for k, (o, i) in enumerate(shapes):
                lim = final_init if (final_init is not None and k == len(shapes) - 1) else 1.0 / np.sqrt(i)
                self.W[k][:] = rng.uniform(-lim, lim, (o, i))
                self.b[k][:] = rng.uniform(-lim, lim, o)
        self._cache = None

    @property
    def input_dim(self):
        return self.sizes[0]

    @property
    def output_dim(self):
        return self.sizes[-1]

    def _empty(self):
        return Mlp(self.sizes, self.activations, final_init=self.final_init)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[-1] != self.input_dim:
            raise ValueError(f"expected input of size {self.input_dim}, got {h.shape[-1]}")
        outs = [h]
        for W, b, act in zip(self.W, self.b, self.activations):
            h = _activate(h @ W.T + b, act)
            outs.append(h)
        self._cache = (outs, single)
        return h[0] if single else h

    __call__ = forward

    def backward(self, grad_out, grads=None):
        """Reverse pass over the cached forward.

        Returns ``(grads, grad_input)``; ``grads`` is a flat vector laid out
        like ``params`` (written in place when given).
        """
        if self._cache is None:
            raise RuntimeError("backward() needs a cached forward pass")
        outs, single = self._cache
        g = np.asarray(grad_out, dtype=float)
        g = g[None, :] if single else g
        grads = np.zeros_like(self.params) if grads is None else grads
        for k in range(len(self.W) - 1, -1, -1):
            g = _activation_grad(outs[k + 1], g, self.activations[k])
            w0, w1, b1 = self._slices[k]
            grads[w0:w1] = (g.T @ outs[k]).ravel()
            grads[w1:b1] = g.sum(axis=0)
            g = g @ self.W[k]
        return grads, (g[0] if single else g)


def forward(net, x):
    return net.forward(x)


def backward(net, output_grad):
    return net.backward(output_grad)


def _split(total_sizes, buffer):
    out, pos = [], 0
    for n in total_sizes:
        out.append(buffer[pos:pos + n])
        pos += n
    return out


def _mlp_size(sizes):
    return sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))


class TwoTowerActor(Network):
    """Two independent towers on the same input, one tanh output each.

    Output order is ``(acceleration, turn)``.
    """

    def __init__(self, obs_dim=5, hidden=(32, 32), rng=None, final_init=3e-3):
        self.obs_dim, self.hidden, self.final_init = obs_dim, tuple(hidden), final_init
        sizes = [obs_dim, *hidden, 1]
        acts = ["relu"] * len(hidden) + ["tanh"]
        n = _mlp_size(sizes)
        self.params = np.zeros(2 * n)
        a, t = _split([n, n], self.params)
        self.accel = Mlp(sizes, acts, rng, final_init, buffer=a)
        self.turn = Mlp(sizes, acts, rng, final_init, buffer=t)
        self._n = n

    def _empty(self):
        return TwoTowerActor(self.obs_dim, self.hidden, final_init=self.final_init)

    def forward(self, obs):
        a = self.accel.forward(obs)
        t = self.turn.forward(obs)
        return np.concatenate([a, t], axis=-1)

    __call__ = forward

    def backward(self, grad_out):
        grads = np.zeros_like(self.params)
        n = self._n
        _, ga = self.accel.backward(grad_out[..., 0:1], grads[:n])
        _, gt = self.turn.backward(grad_out[..., 1:2], grads[n:])
        return grads, ga + gt


class ConcatCritic(Network):
    """State path and action path, concatenated, then a shared head to a scalar."""

    def __init__(self, obs_dim=5, act_dim=2, state_hidden=(16, 32), action_hidden=(32,), head_hidden=(64, 64), rng=None):
        self.arch = dict(obs_dim=obs_dim, act_dim=act_dim, state_hidden=tuple(state_hidden),
                         action_hidden=tuple(action_hidden), head_hidden=tuple(head_hidden))
        s_sizes = [obs_dim, *state_hidden]
        a_sizes = [act_dim, *action_hidden]
        h_sizes = [state_hidden[-1] + action_hidden[-1], *head_hidden, 1]
        sizes = [_mlp_size(s_sizes), _mlp_size(a_sizes), _mlp_size(h_sizes)]
        self.params = np.zeros(sum(sizes))
        bs, ba, bh = _split(sizes, self.params)
        self.state_path = Mlp(s_sizes, ["relu"] * len(state_hidden), rng, buffer=bs)
        self.action_path = Mlp(a_sizes, ["relu"] * len(action_hidden), rng, buffer=ba)
        self.head = Mlp(h_sizes, ["relu"] * len(head_hidden) + ["linear"], rng, buffer=bh)
        self._sizes = sizes
        self._split_at = state_hidden[-1]

    def _empty(self):
        return ConcatCritic(**self.arch)

    def forward(self, obs, action):
        hs = self.state_path.forward(obs)
        ha = self.action_path.forward(action)
        return self.head.forward(np.concatenate([hs, ha], axis=-1))

    __call__ = forward

    def backward(self, grad_out):
        """Returns ``(grads, grad_obs, grad_action)``."""
        grads = np.zeros_like(self.params)
        gs, ga, gh = _split(self._sizes, grads)
        _, g = self.head.backward(grad_out, gh)
        _, g_obs = self.state_path.backward(g[..., :self._split_at], gs)
        _, g_act = self.action_path.backward(g[..., self._split_at:], ga)
        return grads, g_obs, g_act


class QNetwork(Network):
    """Plain MLP on the concatenated (observation, action) input."""

    def __init__(self, obs_dim=5, act_dim=2, hidden=(64, 64), rng=None):
        self.obs_dim, self.act_dim, self.hidden = obs_dim, act_dim, tuple(hidden)
        self.net = Mlp([obs_dim + act_dim, *hidden, 1], ["relu"] * len(hidden) + ["linear"], rng)
        self.params = self.net.params

    def _empty(self):
        return QNetwork(self.obs_dim, self.act_dim, self.hidden)

    def forward(self, obs, action):
        return self.net.forward(np.concatenate([obs, action], axis=-1))

    __call__ = forward

    def backward(self, grad_out):
        grads, g = self.net.backward(grad_out)
        return grads, g[..., :self.obs_dim], g[..., self.obs_dim:]


class GaussianHead(Network):
    """Trunk MLP ending in a linear layer split into ``mu`` and ``log_sigma``.

    ``log_sigma`` is clamped to ``[log_sigma_min, log_sigma_max]``; the clamp
    passes no gradient to raw values outside the range.
    """

    def __init__(self, in_dim=5, out_dim=2, hidden=(64, 64), rng=None, log_sigma_min=-20.0, log_sigma_max=2.0,
                 final_init=3e-3):
        self.arch = dict(in_dim=in_dim, out_dim=out_dim, hidden=tuple(hidden), log_sigma_min=log_sigma_min,
                         log_sigma_max=log_sigma_max, final_init=final_init)
        self.out_dim = out_dim
        self.log_sigma_min, self.log_sigma_max = log_sigma_min, log_sigma_max
        self.net = Mlp([in_dim, *hidden, 2 * out_dim], ["relu"] * len(hidden) + ["linear"], rng, final_init)
        self.params = self.net.params
        self._raw = None

    def _empty(self):
        return GaussianHead(**self.arch)

    @property
    def sigma_bounds(self):
        return np.exp(self.log_sigma_min), np.exp(self.log_sigma_max)

    def forward(self, x):
        """Returns ``(mu, log_sigma)``; ``sigma = exp(log_sigma)``."""
        out = self.net.forward(x)
        mu, raw = out[..., :self.out_dim], out[..., self.out_dim:]
        self._raw = raw
        return mu, np.clip(raw, self.log_sigma_min, self.log_sigma_max)

    __call__ = forward

    def backward(self, grad_mu, grad_log_sigma):
        inside = (self._raw >= self.log_sigma_min) & (self._raw <= self.log_sigma_max)
        g = np.concatenate([grad_mu, grad_log_sigma * inside], axis=-1)
        return self.net.backward(g)


def gaussian_head_forward(head: GaussianHead, x):
    mu, log_sigma = head.forward(x)
    return mu, np.exp(log_sigma)


# ---------------------------------------------------------------------------
# squashed Gaussian policy algebra

LOG_2PI = np.log(2.0 * np.pi)


def squashed_sample(mu, log_sigma, eps):
    """``a = tanh(mu + sigma * eps)`` and its log-density (summed over the last axis)."""
    sigma = np.exp(log_sigma)
    u = mu + sigma * eps
    a = np.tanh(u)
    # log(1 - tanh(u)^2) written stably
    log_det = 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    logp = np.sum(-0.5 * eps**2 - log_sigma - 0.5 * LOG_2PI - log_det, axis=-1)
    return a, logp


def squashed_sample_backward(mu, log_sigma, eps, grad_a, grad_logp):
    """Gradients w.r.t. ``mu`` and ``log_sigma`` of a reparametrized sample.

    ``grad_a`` has the action shape, ``grad_logp`` one value per sample.
    """
    sigma = np.exp(log_sigma)
    a = np.tanh(mu + sigma * eps)
    gl = np.asarray(grad_logp, dtype=float)[..., None]
    g_u = grad_a * (1.0 - a * a) + gl * 2.0 * a
    return g_u, g_u * sigma * eps - gl


def gaussian_log_prob(x, mu, log_sigma):
    z = (x - mu) * np.exp(-log_sigma)
    return np.sum(-0.5 * z * z - log_sigma - 0.5 * LOG_2PI, axis=-1)


def gaussian_nll(target, mu, log_sigma):
    """Per-sample negative log-likelihood of a scalar target, and its gradients."""
    inv_var = np.exp(-2.0 * log_sigma)
    diff = target - mu
    nll = 0.5 * diff * diff * inv_var + log_sigma + 0.5 * LOG_2PI
    return nll, -diff * inv_var, 1.0 - diff * diff * inv_var


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    lr: float
    size: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update of ``params`` in place."""
    if params.shape != grads.shape or grads.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes must match")
    check_finite(grads, "gradient")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    check_finite(params, "parameter")
    return params


class Adam:
    """Adam bound to one network."""

    def __init__(self, net: Network, lr):
        self.net = net
        self.state = AdamState(lr, net.size)

    def step(self, grads):
        adam_step(self.net.params, grads, self.state)


def soft_update(target: Network, online: Network, tau):
    """Polyak average ``target <- (1 - tau) target + tau online`` in place."""
    if type(target) is not type(online) or target.size != online.size:
        raise ValueError("soft_update needs identical architectures")
    target.params *= 1.0 - tau
    target.params += tau * online.params
    return target


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout: b"MRNN" | u32 version | u64 header length | JSON header | tensor bytes
# The header lists every tensor as {"name", "shape", "offset", "nbytes"} with
# offsets relative to the end of the header, plus a free-form "meta" object.
# Tensors are little-endian float64, C order.

MAGIC = b"MRNN"
FORMAT_VERSION = 1


def save_tensors(path, tensors: dict, meta: dict | None = None):
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header)
        for b in blobs:
            f.write(b)


def load_tensors(path):
    """Returns ``(tensors, meta)``."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen])
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        raw = data[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(float)
    return tensors, header["meta"]
