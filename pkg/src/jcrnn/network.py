"""Joint classification-regression recurrent network with hand-derived BPTT.

Architecture, per frame ``x_t``::

    x_t -> LSTM(100) -> LSTM(100) -> LSTM(110)
        -> FC(110, tanh) -> FC(100, tanh) -> FC(100, tanh)     shared stack, dropout
        -> FC1 -> softmax                  = y_t     class posterior (M+1)
        -> FC2 (tanh, 10(M+1))
             -> soft selector(., y_t)      rows of the 10 x (M+1) block times y_t
             -> FC3 -> sigmoid             = (p_start, p_end)

LSTM parameters are fused per layer: ``W_x`` is ``(in, 4H)``, ``W_h`` is
``(H, 4H)`` and ``b`` is ``(4H,)`` with gate blocks ordered input, forget,
output, candidate.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import Rng, ShapeError, sigmoid, softmax_row

FORMAT_VERSION = 1
INIT_SCALE = 0.08
FORGET_BIAS = 1.0
N_LSTM = 3
N_SHARED = 3


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    layer_sizes: tuple[int, ...] = (100, 100, 110, 110, 100, 100)
    fc2_multiplier: int = 10
    use_soft_selector: bool = True
    dropout_p: float = 0.0
    regression_output_activation: str = "sigmoid"
    init_scale: float = INIT_SCALE
    # False gives the classification-only network: both confidences read 0
    regression_branch: bool = True

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) != N_LSTM + N_SHARED:
            raise ValueError(f"layer_sizes needs {N_LSTM + N_SHARED} entries, got {len(self.layer_sizes)}")
        if min(self.layer_sizes) < 1 or self.input_dim < 1 or self.num_classes < 1 or self.fc2_multiplier < 1:
            raise ValueError("all sizes must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.regression_output_activation not in ("sigmoid", "linear"):
            raise ValueError(f"unknown regression output activation {self.regression_output_activation!r}")
        if self.init_scale <= 0:
            raise ValueError(f"init_scale must be positive, got {self.init_scale}")

    @property
    def n_out(self) -> int:
        return self.num_classes + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    fan_in = cfg.input_dim
    for l in range(N_LSTM):
        h = cfg.layer_sizes[l]
        shapes[f"lstm{l + 1}/W_x"] = (fan_in, 4 * h)
        shapes[f"lstm{l + 1}/W_h"] = (h, 4 * h)
        shapes[f"lstm{l + 1}/b"] = (4 * h,)
        fan_in = h
    for k in range(N_SHARED):
        h = cfg.layer_sizes[N_LSTM + k]
        shapes[f"shared{k + 1}/W"] = (fan_in, h)
        shapes[f"shared{k + 1}/b"] = (h,)
        fan_in = h
    k_out = cfg.n_out
    n_fc2 = cfg.fc2_multiplier * k_out
    shapes["fc1/W"] = (fan_in, k_out)
    shapes["fc1/b"] = (k_out,)
    shapes["fc2/W"] = (fan_in, n_fc2)
    shapes["fc2/b"] = (n_fc2,)
    shapes["fc3/W"] = (n_fc2, 2)
    shapes["fc3/b"] = (2,)
    return shapes


@dataclass(frozen=True)
class FrameOutput:
    y: np.ndarray
    p_start: float
    p_end: float

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.y))


@dataclass
class SequenceOutput:
    y: np.ndarray        # (N, M+1)
    p_start: np.ndarray  # (N,)
    p_end: np.ndarray    # (N,)

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, t: int) -> FrameOutput:
        return FrameOutput(self.y[t], float(self.p_start[t]), float(self.p_end[t]))


@dataclass
class ForwardCache:
    """Per-timestep activations saved by a train-mode forward pass."""

    inputs: list = field(default_factory=list)
    lstm: list = field(default_factory=lambda: [[] for _ in range(N_LSTM)])
    shared: list = field(default_factory=lambda: [[] for _ in range(N_SHARED)])
    heads: list = field(default_factory=list)
    masks: list | None = None

    def __len__(self) -> int:
        return len(self.inputs)


def soft_selector(fc2_out: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Multiply every row of the ``(len(fc2_out)/K, K)`` block by ``probs``."""
    k = probs.shape[-1]
    if fc2_out.shape[-1] % k:
        raise ShapeError(f"fc2 output of length {fc2_out.shape[-1]} does not split into rows of {k}")
    rows = fc2_out.shape[-1] // k
    lead = fc2_out.shape[:-1]
    block = fc2_out.reshape(*lead, rows, k) * probs[..., None, :]
    return block.reshape(*lead, rows * k)


def lstm_step(W_x, W_h, b, x_t, h_prev, c_prev):
    """One LSTM timestep. Returns ``(h_t, c_t, gates)`` with gates ``(i, f, o, g, tanh(c_t))``."""
    hsz = h_prev.shape[-1]
    if W_x.shape[0] != x_t.shape[-1] or W_h.shape != (hsz, 4 * hsz) or c_prev.shape != h_prev.shape:
        raise ShapeError(
            f"lstm step: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} vs W_x {W_x.shape}, W_h {W_h.shape}")
    z = x_t @ W_x + h_prev @ W_h + b
    ifo = sigmoid(z[: 3 * hsz])
    i, f, o = ifo[:hsz], ifo[hsz:2 * hsz], ifo[2 * hsz:]
    g = np.tanh(z[3 * hsz:])
    c_t = f * c_prev + i * g
    tc = np.tanh(c_t)
    h_t = o * tc
    return h_t, c_t, (i, f, o, g, tc)


class Model:
    """Network parameters plus a fixed per-feature input standardization.

    ``input_mean``/``input_scale`` are not trained; ``fit_input_normalization``
    sets them from training features before optimization starts.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray],
                 input_mean=None, input_scale=None):
        self.config = config
        shapes = param_shapes(config)
        missing = set(shapes) - set(params)
        if missing:
            raise ShapeError(f"missing parameters: {sorted(missing)}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ShapeError(f"parameter {name}: expected shape {shape}, got {params[name].shape}")
        self.params = {name: np.asarray(params[name], dtype=np.float64) for name in shapes}
        d = config.input_dim
        self.input_mean = np.zeros(d) if input_mean is None else np.asarray(input_mean, dtype=np.float64)
        self.input_scale = np.ones(d) if input_scale is None else np.asarray(input_scale, dtype=np.float64)
        if self.input_mean.shape != (d,) or self.input_scale.shape != (d,):
            raise ShapeError(f"input normalization must have shape ({d},)")
        if np.any(self.input_scale <= 0):
            raise ValueError("input_scale entries must be positive")

    @classmethod
    def init(cls, config: ModelConfig, rng: Rng) -> Model:
        """Uniform(-init_scale, init_scale) weights, zero biases, forget-gate bias 1."""
        params = {}
        for name, shape in param_shapes(config).items():
            if name.endswith("/b"):
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.uniform_block(-config.init_scale, config.init_scale, shape)
        for l in range(N_LSTM):
            h = config.layer_sizes[l]
            params[f"lstm{l + 1}/b"][h:2 * h] = FORGET_BIAS
        return cls(config, params)

    def copy(self) -> Model:
        return Model(self.config, {k: v.copy() for k, v in self.params.items()},
                     self.input_mean.copy(), self.input_scale.copy())

    def classification_only(self) -> Model:
        """Copy whose regression branch is switched off; both confidences read 0."""
        out = self.copy()
        out.config = replace(self.config, regression_branch=False)
        return out

    def fit_input_normalization(self, features, min_std: float = 1e-6) -> None:
        """Set the input mean/scale from stacked ``(frames, input_dim)`` features.

        Near-constant features (the root joint after normalization) keep scale 1.
        """
        X = np.concatenate([np.asarray(f, dtype=np.float64) for f in features])
        if X.shape[1] != self.config.input_dim:
            raise ShapeError(f"features have {X.shape[1]} columns, model expects {self.config.input_dim}")
        std = X.std(axis=0)
        self.input_mean = X.mean(axis=0)
        self.input_scale = np.where(std > min_std, std, 1.0)

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    def initial_state(self):
        return tuple((np.zeros(h), np.zeros(h)) for h in self.config.layer_sizes[:N_LSTM])

    def dropout_masks(self, n_frames: int, p: float, rng: Rng) -> list[np.ndarray]:
        """Inverted-dropout masks for the shared FC layers, each ``(n_frames, H)``."""
        sizes = self.config.layer_sizes[N_LSTM:]
        if p == 0.0:
            return [np.ones((n_frames, h)) for h in sizes]
        return [rng.bernoulli_block(1.0 - p, (n_frames, h)) / (1.0 - p) for h in sizes]

    def step(self, x_t, state, masks=None, cache: ForwardCache | None = None):
        """Advance one frame. Returns ``(y, p_start, p_end, new_state)``."""
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape != (self.config.input_dim,):
            raise ShapeError(f"frame has shape {x_t.shape}, model expects ({self.config.input_dim},)")
        P = self.params
        inp = (x_t - self.input_mean) / self.input_scale
        new_state = []
        if cache is not None:
            cache.inputs.append(inp)
        for l in range(N_LSTM):
            h_prev, c_prev = state[l]
            pre = f"lstm{l + 1}/"
            h, c, gates = lstm_step(P[pre + "W_x"], P[pre + "W_h"], P[pre + "b"], inp, h_prev, c_prev)
            if cache is not None:
                cache.lstm[l].append((h_prev, c_prev, c) + gates)
            new_state.append((h, c))
            inp = h
        for k in range(N_SHARED):
            pre = f"shared{k + 1}/"
            a = np.tanh(inp @ P[pre + "W"] + P[pre + "b"])
            out = a if masks is None else a * masks[k]
            if cache is not None:
                cache.shared[k].append((inp, a))
            inp = out
        y = softmax_row(inp @ P["fc1/W"] + P["fc1/b"])
        a2 = np.tanh(inp @ P["fc2/W"] + P["fc2/b"])
        s = soft_selector(a2, y) if self.config.use_soft_selector else a2
        q = s @ P["fc3/W"] + P["fc3/b"]
        p = sigmoid(q) if self.config.regression_output_activation == "sigmoid" else q
        if not self.config.regression_branch:
            p = np.zeros(2)
        if cache is not None:
            cache.heads.append((inp, y, a2, s, p))
        return y, p[0], p[1], tuple(new_state)

    def save(self, path) -> None:
        doc = {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "params": {k: v.tolist() for k, v in self.params.items()},
        }
        doc["params"]["input/mean"] = self.input_mean.tolist()
        doc["params"]["input/scale"] = self.input_scale.tolist()
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path, expect: ModelConfig | None = None) -> Model:
        """Load a checkpoint; with ``expect`` the stored shapes must match that config."""
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format_version {doc.get('format_version')!r}"
                                  if isinstance(doc, dict) else f"{path}: not a checkpoint")
        try:
            config = ModelConfig(**doc["config"])
            raw = doc["params"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad config section: {exc}") from exc
        target = expect or config
        params = {}
        shapes = dict(param_shapes(target))
        shapes["input/mean"] = shapes["input/scale"] = (target.input_dim,)
        for name, shape in shapes.items():
            if name not in raw:
                raise CheckpointError(f"{path}: missing parameter {name}")
            arr = np.array(raw[name], dtype=np.float64)
            if arr.shape != shape:
                raise CheckpointError(f"{path}: layer {name} has shape {arr.shape}, expected {shape}")
            params[name] = arr
        mean = params.pop("input/mean")
        scale = params.pop("input/scale")
        return cls(target, params, mean, scale)


def forward_sequence(model: Model, frames, mode: str = "infer", rng: Rng | None = None,
                     state=None, dropout_p: float | None = None):
    """Run ``frames`` (``(N, input_dim)``) through the model, one causal step at a time.

    Returns ``(SequenceOutput, cache, final_state)``; ``cache`` is ``None`` in
    infer mode. In train mode inverted dropout is applied to the shared FC
    layers with probability ``dropout_p`` (default: the model's).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != model.input_dim:
        raise ShapeError(f"frames have shape {frames.shape}, model expects (N, {model.input_dim})")
    n = len(frames)
    state = model.initial_state() if state is None else state
    cache = None
    masks = None
    if mode == "train":
        cache = ForwardCache()
        p = model.config.dropout_p if dropout_p is None else dropout_p
        if p > 0 and rng is None:
            raise ValueError("train mode with dropout needs an rng")
        masks = model.dropout_masks(n, p, rng)
        cache.masks = masks
    k_out = model.config.n_out
    y = np.empty((n, k_out))
    ps = np.empty(n)
    pe = np.empty(n)
    for t in range(n):
        step_masks = None if masks is None else [m[t] for m in masks]
        y[t], ps[t], pe[t], state = model.step(frames[t], state, step_masks, cache)
    return SequenceOutput(y, ps, pe), cache, state


def _stack(items):
    return [np.stack(col) for col in zip(*items)]


def backward_sequence(model: Model, cache: ForwardCache, targets, lam: float) -> dict[str, np.ndarray]:
    """Gradients of (1/N) sum_t [CE_t + lam((p^s_t - c^s_t)^2 + (p^e_t - c^e_t)^2)].

    The initial recurrent state is treated as a constant.
    """
    n = len(cache)
    if n != len(targets):
        raise ShapeError(f"cache covers {n} frames but targets cover {len(targets)}")
    cfg = model.config
    P = model.params
    grads = {}

    H_top, Y, A2, S, Pout = _stack(cache.heads)
    C = np.stack([targets.c_start, targets.c_end], axis=1)
    dP = 2.0 * lam * (Pout - C) / n
    if not cfg.regression_branch:
        dP = np.zeros_like(dP)
    dQ = dP * Pout * (1.0 - Pout) if cfg.regression_output_activation == "sigmoid" else dP
    grads["fc3/W"] = S.T @ dQ
    grads["fc3/b"] = dQ.sum(axis=0)
    dS = dQ @ P["fc3/W"].T
    if cfg.use_soft_selector:
        k = cfg.n_out
        rows = A2.shape[1] // k
        dS_block = dS.reshape(n, rows, k)
        dA2 = (dS_block * Y[:, None, :]).reshape(n, rows * k)
        dY = (dS_block * A2.reshape(n, rows, k)).sum(axis=1)
    else:
        dA2 = dS
        dY = np.zeros_like(Y)
    dpre2 = dA2 * (1.0 - A2 * A2)
    grads["fc2/W"] = H_top.T @ dpre2
    grads["fc2/b"] = dpre2.sum(axis=0)
    dH = dpre2 @ P["fc2/W"].T

    # softmax Jacobian for the selector path, plus the cross-entropy term
    dlogits = (Y - targets.z) / n + Y * (dY - np.sum(dY * Y, axis=1, keepdims=True))
    grads["fc1/W"] = H_top.T @ dlogits
    grads["fc1/b"] = dlogits.sum(axis=0)
    dH = dH + dlogits @ P["fc1/W"].T

    masks = cache.masks
    for k in reversed(range(N_SHARED)):
        X_in, A = _stack(cache.shared[k])
        dpre = dH * masks[k] * (1.0 - A * A)
        name = f"shared{k + 1}/"
        grads[name + "W"] = X_in.T @ dpre
        grads[name + "b"] = dpre.sum(axis=0)
        dH = dpre @ P[name + "W"].T

    inputs = np.stack(cache.inputs)
    for l in reversed(range(N_LSTM)):
        name = f"lstm{l + 1}/"
        H_prev, C_prev, _C, I, F, O, G, TC = _stack(cache.lstm[l])
        W_h_T = P[name + "W_h"].T
        hsz = I.shape[1]
        dZ = np.empty((n, 4 * hsz))
        dh_next = np.zeros(hsz)
        dc_next = np.zeros(hsz)
        for t in reversed(range(n)):
            dh = dH[t] + dh_next
            dc = dh * O[t] * (1.0 - TC[t] * TC[t]) + dc_next
            dz = dZ[t]
            dz[:hsz] = dc * G[t] * I[t] * (1.0 - I[t])
            dz[hsz:2 * hsz] = dc * C_prev[t] * F[t] * (1.0 - F[t])
            dz[2 * hsz:3 * hsz] = dh * TC[t] * O[t] * (1.0 - O[t])
            dz[3 * hsz:] = dc * I[t] * (1.0 - G[t] * G[t])
            dc_next = dc * F[t]
            dh_next = dz @ W_h_T
        X_in = inputs if l == 0 else _lstm_outputs(cache, l - 1)
        grads[name + "W_x"] = X_in.T @ dZ
        grads[name + "W_h"] = H_prev.T @ dZ
        grads[name + "b"] = dZ.sum(axis=0)
        dH = dZ @ P[name + "W_x"].T

    return {name: grads[name] for name in P}


def _lstm_outputs(cache: ForwardCache, l: int) -> np.ndarray:
    # h_t = o_t * tanh(c_t) for layer l
    entries = cache.lstm[l]
    return np.stack([e[5] * e[7] for e in entries])
