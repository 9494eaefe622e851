"""Recurrent dynamics models in numpy with exact backpropagation through time.

A model consumes one flattened block of normalised features (M*9 values) per
time-step and emits the next block's M*3 relative displacements in normalised
space. During a multi-step rollout the emitted displacements are written back
into the displacement slots of the next input, the measured-force slots hold
the last observed block, and the reference-force slots come from the plan.
Gradients flow through that feedback path as well as through the hidden state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import M, N_FEATURES, Block, Normalizer

IN_SIZE = M * N_FEATURES  # 90
OUT_SIZE = M * 3  # 30
CHECKPOINT_VERSION = 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- layers ---------------------------------------------------------------------


@dataclass(frozen=True)
class Dense:
    name: str
    n_in: int
    n_out: int
    tanh: bool = True
    recurrent = False

    def init(self, rng, params):
        bound = 1.0 / np.sqrt(self.n_in)
        params[f"{self.name}.W"] = rng.uniform(-bound, bound, (self.n_in, self.n_out))
        params[f"{self.name}.b"] = rng.uniform(-bound, bound, self.n_out)

    def forward(self, P, x):
        z = x @ P[f"{self.name}.W"] + P[f"{self.name}.b"]
        a = np.tanh(z) if self.tanh else z
        return a, (x, a)

    def backward(self, P, G, cache, da):
        x, a = cache
        dz = da * (1.0 - a * a) if self.tanh else da
        G[f"{self.name}.W"] += x.T @ dz
        G[f"{self.name}.b"] += dz.sum(axis=0)
        return dz @ P[f"{self.name}.W"].T


@dataclass(frozen=True)
class LSTMCell:
    name: str
    n_in: int
    n_hidden: int
    recurrent = True

    def init(self, rng, params):
        h = self.n_hidden
        bound = 1.0 / np.sqrt(self.n_in + h)
        params[f"{self.name}.Wx"] = rng.uniform(-bound, bound, (self.n_in, 4 * h))
        params[f"{self.name}.Wh"] = rng.uniform(-bound, bound, (h, 4 * h))
        params[f"{self.name}.b"] = rng.uniform(-bound, bound, 4 * h)

    def zero_state(self, batch):
        return (np.zeros((batch, self.n_hidden)), np.zeros((batch, self.n_hidden)))

    def forward(self, P, x, state):
        h_prev, c_prev = state
        n = self.n_hidden
        z = x @ P[f"{self.name}.Wx"] + h_prev @ P[f"{self.name}.Wh"] + P[f"{self.name}.b"]
        ifo = sigmoid(z[:, : 3 * n])
        i, f, o = ifo[:, :n], ifo[:, n : 2 * n], ifo[:, 2 * n :]
        g = np.tanh(z[:, 3 * n :])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        return h, (h, c), (x, h_prev, c_prev, i, f, o, g, tc)

    def backward(self, P, G, cache, dh_out, dstate):
        x, h_prev, c_prev, i, f, o, g, tc = cache
        dh = dh_out + dstate[0]
        dc = dstate[1] + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dh * tc * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        G[f"{self.name}.Wx"] += x.T @ dz
        G[f"{self.name}.Wh"] += h_prev.T @ dz
        G[f"{self.name}.b"] += dz.sum(axis=0)
        dx = dz @ P[f"{self.name}.Wx"].T
        return dx, (dz @ P[f"{self.name}.Wh"].T, dc * f)


@dataclass(frozen=True)
class ElmanCell:
    name: str
    n_in: int
    n_hidden: int
    recurrent = True

    def init(self, rng, params):
        bound = 1.0 / np.sqrt(self.n_in + self.n_hidden)
        params[f"{self.name}.Wx"] = rng.uniform(-bound, bound, (self.n_in, self.n_hidden))
        params[f"{self.name}.Wh"] = rng.uniform(-bound, bound, (self.n_hidden, self.n_hidden))
        params[f"{self.name}.b"] = rng.uniform(-bound, bound, self.n_hidden)

    def zero_state(self, batch):
        return (np.zeros((batch, self.n_hidden)),)

    def forward(self, P, x, state):
        (h_prev,) = state
        h = np.tanh(x @ P[f"{self.name}.Wx"] + h_prev @ P[f"{self.name}.Wh"] + P[f"{self.name}.b"])
        return h, (h,), (x, h_prev, h)

    def backward(self, P, G, cache, dh_out, dstate):
        x, h_prev, h = cache
        dz = (dh_out + dstate[0]) * (1.0 - h * h)
        G[f"{self.name}.Wx"] += x.T @ dz
        G[f"{self.name}.Wh"] += h_prev.T @ dz
        G[f"{self.name}.b"] += dz.sum(axis=0)
        return dz @ P[f"{self.name}.Wx"].T, (dz @ P[f"{self.name}.Wh"].T,)


# --- models ---------------------------------------------------------------------


def lstm_layers():
    return (
        Dense("inp", IN_SIZE, IN_SIZE, tanh=True),
        LSTMCell("lstm1", IN_SIZE, 9),
        LSTMCell("lstm2", 9, 9),
        Dense("out", 9, OUT_SIZE, tanh=False),
    )


def rnn_layers():
    # six fully connected layers around two 30-unit Elman layers; the last is linear
    # so normalised displacements are not squashed into (-1, 1)
    return (
        Dense("fc1", IN_SIZE, 90),
        Dense("fc2", 90, 60),
        Dense("fc3", 60, 30),
        ElmanCell("rnn1", 30, 30),
        ElmanCell("rnn2", 30, 30),
        Dense("fc4", 30, 30),
        Dense("fc5", 30, 30),
        Dense("fc6", 30, OUT_SIZE, tanh=False),
    )


ARCHITECTURES = {"lstm": lstm_layers, "rnn": rnn_layers}
PARAM_COUNTS = {"lstm": 12774, "rnn": 21930}


@dataclass
class Model:
    arch: str
    params: dict[str, np.ndarray]
    layers: tuple = field(init=False, repr=False)
    flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        self.layers = ARCHITECTURES[self.arch]()
        expected = {}
        rng = np.random.default_rng(0)
        for layer in self.layers:
            layer.init(rng, expected)
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names do not match the {self.arch} layout")
        for k, v in expected.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"{k}: expected shape {v.shape}, got {self.params[k].shape}")
        assert self.n_params() == PARAM_COUNTS[self.arch]
        # every tensor is a view into one flat buffer, in layout order
        self.flat = np.empty(PARAM_COUNTS[self.arch])
        self.params = _views(self.flat, {k: self.params[k] for k in expected}, copy=True)

    @classmethod
    def init(cls, arch: str, seed: int = 0) -> "Model":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for layer in ARCHITECTURES[arch]():
            layer.init(rng, params)
        return cls(arch, params)

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self) -> "Model":
        return Model(self.arch, {k: v.copy() for k, v in self.params.items()})

    def zero_state(self, batch: int = 1):
        return tuple(layer.zero_state(batch) for layer in self.layers if layer.recurrent)

    def step(self, x, state):
        """One batched time-step. ``x`` is (B, 90); returns (y, new_state, cache)."""
        P = self.params
        new_state = []
        caches = []
        r = 0
        a = x
        for layer in self.layers:
            if layer.recurrent:
                a, s, c = layer.forward(P, a, state[r])
                new_state.append(s)
                r += 1
            else:
                a, c = layer.forward(P, a)
            caches.append(c)
        return a, tuple(new_state), caches

    def step_backward(self, caches, dy, dstate, G):
        """Backward through one step; returns (dx, gradient w.r.t. the incoming state)."""
        P = self.params
        d = dy
        dprev = list(dstate)
        r = len(dstate)
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            if layer.recurrent:
                r -= 1
                d, dprev[r] = layer.backward(P, G, c, d, dstate[r])
            else:
                d = layer.backward(P, G, c, d)
        return d, tuple(dprev)


def _views(flat, like, copy=False):
    out = {}
    lo = 0
    for k, v in like.items():
        out[k] = flat[lo : lo + v.size].reshape(v.shape)
        if copy:
            out[k][...] = v
        lo += v.size
    return out


def zeros_like_params(model: Model) -> dict[str, np.ndarray]:
    """Zero gradients laid out like the model's flat buffer (see ``flat_grad``)."""
    return _views(np.zeros_like(model.flat), model.params)


def flat_grad(grads: dict[str, np.ndarray]) -> np.ndarray:
    """The flat buffer behind a gradient dict from ``zeros_like_params``."""
    return next(iter(grads.values())).base


def _zero_dstate(state):
    return tuple(tuple(np.zeros_like(a) for a in s) for s in state)


# --- batched rollout in normalised space ------------------------------------------


def assemble(dp, fs, fr):
    """Interleave (B, M*3) displacement, measured- and reference-force blocks into (B, M*9)."""
    b = dp.shape[0]
    return np.concatenate([dp.reshape(b, M, 3), fs.reshape(b, M, 3), fr.reshape(b, M, 3)], axis=2).reshape(b, IN_SIZE)


def dp_slots(dx):
    b = dx.shape[0]
    return dx.reshape(b, M, N_FEATURES)[:, :, :3].reshape(b, OUT_SIZE)


def unroll(model: Model, dp0, fs, fr, state=None, keep_cache=False):
    """Recursive multi-step prediction.

    dp0, fs: (B, 30) normalised seed displacements and held measured forces;
    fr: (B, H, 30) normalised reference-force plan. Returns ys (B, H, 30),
    the final state, and per-step caches when ``keep_cache``.
    """
    b, horizon = fr.shape[0], fr.shape[1]
    if state is None:
        state = model.zero_state(b)
    ys = np.empty((b, horizon, OUT_SIZE))
    caches = []
    dp = dp0
    for i in range(horizon):
        y, state, c = model.step(assemble(dp, fs, fr[:, i]), state)
        ys[:, i] = y
        if keep_cache:
            caches.append(c)
        dp = y
    return ys, state, caches


def unroll_backward(model: Model, caches, dys, state_template):
    """Exact gradient of sum(dys * ys) through the rollout, including prediction feedback."""
    G = zeros_like_params(model)
    dstate = _zero_dstate(state_template)
    feedback = 0.0
    for i in range(len(caches) - 1, -1, -1):
        dx, dstate = model.step_backward(caches[i], dys[:, i] + feedback, dstate, G)
        feedback = dp_slots(dx)
    return G


def mse_loss_and_grads(model: Model, dp0, fs, fr, targets, state=None):
    """Mean squared error over every predicted entry, with exact parameter gradients."""
    if state is None:
        state = model.zero_state(dp0.shape[0])
    ys, _, caches = unroll(model, dp0, fs, fr, state, keep_cache=True)
    diff = ys - targets
    loss = float(np.mean(diff * diff))
    G = unroll_backward(model, caches, 2.0 * diff / diff.size, state)
    return loss, G


# --- single-block API ---------------------------------------------------------------


def forward(model: Model, block_features, h=None):
    """One model step on a single normalised (90,) block. Returns (y (30,), h')."""
    x = np.asarray(block_features, dtype=float)
    if x.shape != (IN_SIZE,):
        raise ValueError(f"expected {IN_SIZE} block features, got shape {x.shape}")
    if h is None:
        h = model.zero_state(1)
    y, h2, _ = model.step(x[None, :], h)
    return y[0], h2


def _plan_array(fr_plan, n):
    fr = np.asarray([np.asarray(f, dtype=float).reshape(M, 3) for f in fr_plan])
    if fr.shape[0] != n:
        raise ValueError(f"reference-force plan has {fr.shape[0]} blocks, horizon is {n}")
    return fr


def seed_inputs(seed_block: Block, fr_plan, normalizer: Normalizer):
    fr = _plan_array(fr_plan, len(fr_plan))
    dp0 = normalizer.dp_to_norm(seed_block.delta_p.reshape(1, -1))
    fs = normalizer.cols_to_norm(seed_block.f_s.reshape(1, -1), 3)
    frn = normalizer.cols_to_norm(fr.reshape(1, len(fr), -1), 6)
    return dp0, fs, frn


def rollout(model: Model, seed_block: Block, fr_plan, H_b: int, normalizer: Normalizer, h=None) -> list[Block]:
    """Predict ``H_b`` future blocks from ``seed_block`` under ``fr_plan``; physical units."""
    if H_b < 1:
        raise ValueError("H_b must be >= 1")
    fr = _plan_array(fr_plan, H_b)
    dp0, fs, frn = seed_inputs(seed_block, fr, normalizer)
    ys, _, _ = unroll(model, dp0, fs, frn, h)
    dps = normalizer.dp_from_norm(ys[0]).reshape(H_b, M, 3)
    out = []
    anchor = seed_block.anchor_p + seed_block.delta_p[-1]
    held_fs = seed_block.f_s
    for i in range(H_b):
        out.append(Block(dps[i], held_fs.copy(), fr[i].copy(), anchor.copy(), seed_block.block_index + i + 1))
        anchor = anchor + dps[i, -1]
    return out


def loss_and_gradients(model: Model, seed_block: Block, fr_plan, target_blocks, H_b: int, normalizer: Normalizer, h=None):
    """Normalised-space MSE of an ``H_b``-block rollout against ``target_blocks``, with gradients."""
    fr = _plan_array(fr_plan, H_b)
    if len(target_blocks) != H_b:
        raise ValueError("need one target block per rollout step")
    dp0, fs, frn = seed_inputs(seed_block, fr, normalizer)
    tgt = normalizer.dp_to_norm(np.stack([t.delta_p.reshape(-1) for t in target_blocks]))[None]
    return mse_loss_and_grads(model, dp0, fs, frn, tgt, h)


# --- optimiser ------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    wd: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Adam with L2 weight decay folded into the gradient (g + wd * theta). Updates in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, theta in params.items():
        g = grads[k]
        if g.shape != theta.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {theta.shape}")
        if state.wd:
            g = g + state.wd * theta
        if k not in state.m:
            state.m[k] = np.zeros_like(theta)
            state.v[k] = np.zeros_like(theta)
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# --- finite-difference oracle ---------------------------------------------------------


def finite_difference_gradients(loss_fn, params: dict, step: float = 1e-5) -> dict:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``params`` (perturbed in place)."""
    out = {}
    for k, theta in params.items():
        g = np.zeros_like(theta)
        flat = theta.reshape(-1)
        gf = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp = loss_fn()
            flat[j] = orig - step
            lm = loss_fn()
            flat[j] = orig
            gf[j] = (lp - lm) / (2.0 * step)
        out[k] = g
    return out


def relative_errors(analytic: dict, numeric: dict) -> dict:
    out = {}
    for k in analytic:
        a, n = analytic[k], numeric[k]
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-300)
        out[k] = float(np.linalg.norm(a - n) / denom)
    return out


# --- checkpoints ------------------------------------------------------------------------


def save_checkpoint(path, model: Model, normalizer: Normalizer, meta: dict | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays["norm_mean"] = normalizer.mean
    arrays["norm_std"] = normalizer.std
    header = {"format": "cutmpc-checkpoint", "version": CHECKPOINT_VERSION, "arch": model.arch, "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, arch: str | None = None) -> tuple[Model, Normalizer, dict]:
    with np.load(Path(path)) as z:
        try:
            header = json.loads(z["header"].tobytes().decode())
        except KeyError:
            raise ValueError(f"{path}: not a model checkpoint") from None
        if header.get("format") != "cutmpc-checkpoint" or header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')}/{header.get('version')}")
        if arch is not None and header["arch"] != arch:
            raise ValueError(f"{path}: checkpoint holds a {header['arch']!r} model, expected {arch!r}")
        params = {k[len("param/") :]: z[k].astype(np.float64) for k in z.files if k.startswith("param/")}
        norm = Normalizer(z["norm_mean"].copy(), z["norm_std"].copy())
    return Model(header["arch"], params), norm, header["meta"]
