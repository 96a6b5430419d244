"""Model descriptions, shape validation, and builders.

A ModelSpec is a declarative description (architecture family, input shape,
layer list, init seed); ``build`` turns it into a Model with allocated
weights. Shape compatibility is checked symbolically before any weight is
drawn, so a bad spec never allocates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lsm.nn.autodiff import Tensor, _sigmoid, no_grad
from lsm.nn.layers import (
    ClsToken,
    Conv1D,
    Conv2D,
    Dense,
    Flatten,
    GlobalAvgPool1D,
    GlobalAvgPool2D,
    LayerNorm,
    MaxPool2D,
    MultiHeadAttention,
    PositionalEmbedding,
    SelectToken,
    TransformerBlock,
)

ARCHS = ("cnn1d", "cnn2d", "vit", "mlp")

PROBA_CLIP = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """Declarative model description. ``layers`` is a tuple of descriptor
    dicts consumed in order by validate_spec/build."""

    arch: str
    input_shape: tuple[int, ...]
    layers: tuple[dict, ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "input_shape": list(self.input_shape),
            "layers": [dict(d) for d in self.layers],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            arch=d["arch"],
            input_shape=tuple(int(v) for v in d["input_shape"]),
            layers=tuple(dict(layer) for layer in d["layers"]),
            seed=int(d["seed"]),
        )


def _initial_state(spec: ModelSpec):
    if spec.arch in ("cnn1d", "mlp"):
        if len(spec.input_shape) != 1:
            raise ValueError(f"{spec.arch} expects a 1-D input shape, got {spec.input_shape}")
        p = spec.input_shape[0]
        if p < 1:
            raise ValueError(f"input width must be >= 1, got {p}")
        return ("seq", p, 1) if spec.arch == "cnn1d" else ("flat", p)
    if spec.arch in ("cnn2d", "vit"):
        if len(spec.input_shape) != 3:
            raise ValueError(f"{spec.arch} expects an (h, w, p) input shape, got {spec.input_shape}")
        h, w, p = spec.input_shape
        if h < 1 or w < 1 or p < 1:
            raise ValueError(f"input dimensions must be positive, got {spec.input_shape}")
        if spec.arch == "cnn2d":
            if h < 3 or w < 3:
                raise ValueError(f"cnn2d needs a window of at least 3x3, got {h}x{w}")
            return ("grid", h, w, p)
        return ("seq", h * w, p)
    raise ValueError(f"unknown architecture {spec.arch!r}; expected one of {ARCHS}")


def _step_shape(state, i: int, d: dict):
    """Advance the symbolic shape through one layer descriptor."""
    kind = d["type"]

    def err(msg):
        return ValueError(f"layer {i} ({kind}): {msg}")

    if kind == "conv1d":
        if state[0] != "seq":
            raise err(f"needs a sequence input, has {state}")
        _, length, _ = state
        k = d.get("kernel", 3)
        if d.get("padding", "same") == "valid":
            length = length - k + 1
            if length < 1:
                raise err(f"valid padding needs length >= {k}")
        return ("seq", length, d["filters"])
    if kind == "conv2d":
        if state[0] != "grid":
            raise err(f"needs a 2-D input, has {state}")
        _, h, w, _ = state
        k = d.get("kernel", 3)
        if d.get("padding", "same") == "valid":
            h, w = h - k + 1, w - k + 1
            if h < 1 or w < 1:
                raise err(f"valid padding needs spatial size >= {k}")
        return ("grid", h, w, d["filters"])
    if kind == "maxpool2d":
        if state[0] != "grid":
            raise err(f"needs a 2-D input, has {state}")
        _, h, w, c = state
        s = d.get("size", 2)
        h, w = h // s, w // s
        if h < 1 or w < 1:
            raise err(f"pool window {s} exceeds the input")
        return ("grid", h, w, c)
    if kind == "global_avg_pool":
        if state[0] == "seq":
            return ("flat", state[2])
        if state[0] == "grid":
            return ("flat", state[3])
        raise err(f"needs a spatial input, has {state}")
    if kind == "flatten":
        if state[0] == "seq":
            return ("flat", state[1] * state[2])
        if state[0] == "grid":
            return ("flat", state[1] * state[2] * state[3])
        raise err(f"needs a spatial input, has {state}")
    if kind == "dense":
        if state[0] != "flat":
            raise err(f"needs a flat input, has {state}")
        return ("flat", d["units"])
    if kind == "token_embed":
        if state[0] != "seq":
            raise err(f"needs a sequence input, has {state}")
        return ("seq", state[1], d["dim"])
    if kind == "pos_embed":
        if state[0] != "seq":
            raise err(f"needs a sequence input, has {state}")
        return state
    if kind == "cls_token":
        if state[0] != "seq":
            raise err(f"needs a sequence input, has {state}")
        return ("seq", state[1] + 1, state[2])
    if kind == "transformer":
        if state[0] != "seq":
            raise err(f"needs a sequence input, has {state}")
        dim = state[2]
        heads = d.get("heads", 4)
        if dim % heads != 0:
            raise err(f"width {dim} not divisible by {heads} heads")
        return state
    if kind == "select_token":
        if state[0] != "seq":
            raise err(f"needs a sequence input, has {state}")
        if not (0 <= d.get("index", 0) < state[1]):
            raise err(f"token index {d.get('index', 0)} out of range for {state[1]} tokens")
        return ("flat", state[2])
    raise err("unknown layer type")


def validate_spec(spec: ModelSpec) -> None:
    """Check that layer shapes compose and the model ends in one logit."""
    state = _initial_state(spec)
    for i, d in enumerate(spec.layers):
        state = _step_shape(state, i, d)
    if state != ("flat", 1):
        raise ValueError(f"model must end with a single logit, ends with {state}")


def param_count(spec: ModelSpec) -> int:
    """Number of weights, from the declared shapes alone."""
    validate_spec(spec)
    state = _initial_state(spec)
    total = 0
    for i, d in enumerate(spec.layers):
        kind = d["type"]
        if kind == "conv1d":
            k = d.get("kernel", 3)
            total += k * state[2] * d["filters"] + d["filters"]
        elif kind == "conv2d":
            k = d.get("kernel", 3)
            total += k * k * state[3] * d["filters"] + d["filters"]
        elif kind == "dense":
            total += state[1] * d["units"] + d["units"]
        elif kind == "token_embed":
            total += state[2] * d["dim"] + d["dim"]
        elif kind == "pos_embed":
            total += state[1] * state[2]
        elif kind == "cls_token":
            total += state[2]
        elif kind == "transformer":
            dim, hidden = state[2], d.get("hidden", 128)
            total += 2 * (2 * dim)                      # two layer norms
            total += 4 * (dim * dim + dim)              # q, k, v, output projections
            total += dim * hidden + hidden + hidden * dim + dim
        state = _step_shape(state, i, d)
    return total


class Model:
    """A built model: layer instances plus the flat-weight view used by
    training and checkpoints."""

    def __init__(self, spec: ModelSpec, layers: list):
        self.spec = spec
        self.layers = layers
        self._params: list[tuple[str, Tensor]] = []
        for i, layer in enumerate(layers):
            for name, t in layer.param_items():
                self._params.append((f"{i}.{layer.__class__.__name__}.{name}", t))

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self._params]

    def param_names(self) -> list[str]:
        return [n for n, _ in self._params]

    @property
    def n_params(self) -> int:
        return sum(t.data.size for _, t in self._params)

    def zero_grad(self) -> None:
        for _, t in self._params:
            t.grad = None

    def get_weights(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for _, t in self._params])

    def set_weights(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} weights, got {flat.size}")
        offset = 0
        for _, t in self._params:
            size = t.data.size
            t.data = flat[offset : offset + size].reshape(t.data.shape).copy()
            offset += size

    def _adapt(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        expected = self.spec.input_shape
        if x.shape[1:] != expected:
            raise ValueError(f"expected input shape (n, {', '.join(map(str, expected))}), "
                             f"got {x.shape}")
        if self.spec.arch == "cnn1d":
            return x[:, :, None]
        if self.spec.arch == "vit":
            h, w, p = expected
            return x.reshape(x.shape[0], h * w, p)
        return x

    def forward(self, x: np.ndarray) -> Tensor:
        """Run the network; returns the (n, 1) logit tensor."""
        out = Tensor(self._adapt(x))
        for layer in self.layers:
            out = layer(out)
        return out

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.forward(x).data[:, 0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Sigmoid of the logit, clipped to the open interval (0, 1)."""
        p = _sigmoid(self.predict_logits(x))
        return np.clip(p, PROBA_CLIP, 1.0 - PROBA_CLIP)


def build(spec: ModelSpec) -> Model:
    """Instantiate a Model, drawing every weight from one generator seeded
    with spec.seed so identical specs build identical models."""
    validate_spec(spec)
    rng = np.random.default_rng(spec.seed)
    state = _initial_state(spec)
    layers = []
    for i, d in enumerate(spec.layers):
        kind = d["type"]
        if kind == "conv1d":
            layers.append(Conv1D(rng, state[2], d["filters"], d.get("kernel", 3),
                                 d.get("padding", "same"), d.get("activation", "relu")))
        elif kind == "conv2d":
            layers.append(Conv2D(rng, state[3], d["filters"], d.get("kernel", 3),
                                 d.get("padding", "same"), d.get("activation", "relu")))
        elif kind == "maxpool2d":
            layers.append(MaxPool2D(d.get("size", 2)))
        elif kind == "global_avg_pool":
            layers.append(GlobalAvgPool1D() if state[0] == "seq" else GlobalAvgPool2D())
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "dense":
            layers.append(Dense(rng, state[1], d["units"], d.get("activation", "none")))
        elif kind == "token_embed":
            layers.append(Dense(rng, state[2], d["dim"], activation="none"))
        elif kind == "pos_embed":
            layers.append(PositionalEmbedding(rng, state[1], state[2]))
        elif kind == "cls_token":
            layers.append(ClsToken(rng, state[2]))
        elif kind == "transformer":
            layers.append(TransformerBlock(rng, state[2], d.get("heads", 4),
                                           d.get("hidden", 128)))
        elif kind == "select_token":
            layers.append(SelectToken(d.get("index", 0)))
        state = _step_shape(state, i, d)
    return Model(spec, layers)


def build_cnn1d(p: int, seed: int) -> ModelSpec:
    """1-D convolutional classifier over a length-p feature sequence."""
    spec = ModelSpec(
        arch="cnn1d",
        input_shape=(int(p),),
        layers=(
            {"type": "conv1d", "filters": 32, "kernel": 3, "padding": "same", "activation": "relu"},
            {"type": "conv1d", "filters": 64, "kernel": 3, "padding": "same", "activation": "relu"},
            {"type": "flatten"},
            {"type": "dense", "units": 64, "activation": "relu"},
            {"type": "dense", "units": 1, "activation": "none"},
        ),
        seed=int(seed),
    )
    validate_spec(spec)
    return spec


def build_cnn2d(h: int, w: int, p: int, seed: int) -> ModelSpec:
    """2-D convolutional classifier over an h x w x p patch."""
    spec = ModelSpec(
        arch="cnn2d",
        input_shape=(int(h), int(w), int(p)),
        layers=(
            {"type": "conv2d", "filters": 32, "kernel": 3, "padding": "same", "activation": "relu"},
            {"type": "conv2d", "filters": 64, "kernel": 3, "padding": "same", "activation": "relu"},
            {"type": "maxpool2d", "size": 2},
            {"type": "conv2d", "filters": 64, "kernel": 3, "padding": "valid", "activation": "relu"},
            {"type": "flatten"},
            {"type": "dense", "units": 64, "activation": "relu"},
            {"type": "dense", "units": 1, "activation": "none"},
        ),
        seed=int(seed),
    )
    validate_spec(spec)
    return spec


def build_vit(h: int, w: int, p: int, seed: int, dim: int = 64, heads: int = 4,
              blocks: int = 2, hidden: int = 128) -> ModelSpec:
    """Transformer classifier over h*w pixel tokens.

    Each pixel's p bands are linearly embedded, positional embeddings are
    added, a classification token is prepended (it carries no positional
    term), and the class token's final state feeds the logit.
    """
    layers: list[dict] = [
        {"type": "token_embed", "dim": int(dim)},
        {"type": "pos_embed"},
        {"type": "cls_token"},
    ]
    layers.extend({"type": "transformer", "heads": int(heads), "hidden": int(hidden)}
                  for _ in range(blocks))
    layers.append({"type": "select_token", "index": 0})
    layers.append({"type": "dense", "units": 1, "activation": "none"})
    spec = ModelSpec(arch="vit", input_shape=(int(h), int(w), int(p)),
                     layers=tuple(layers), seed=int(seed))
    validate_spec(spec)
    return spec


def build_mlp(p: int, seed: int, hidden: tuple[int, ...] = ()) -> ModelSpec:
    """Plain dense classifier on a p-dim vector; with no hidden layers it is
    a single logistic unit, handy as a convex probe."""
    layers = [{"type": "dense", "units": int(u), "activation": "relu"} for u in hidden]
    layers.append({"type": "dense", "units": 1, "activation": "none"})
    spec = ModelSpec(arch="mlp", input_shape=(int(p),), layers=tuple(layers), seed=int(seed))
    validate_spec(spec)
    return spec
