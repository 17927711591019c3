"""Dense multilayer perceptrons with explicit forward and backward passes.

A network is described by an immutable :class:`MlpSpec` and a flat, ordered
dictionary of numpy arrays.  Each hidden block is ``Linear -> BatchNorm ->
activation -> Dropout``; any stage other than the linear map can be switched
off per layer.  Parameters are stored as float32; passing float64 parameters
and inputs runs the identical code path in double precision (used by the
gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import DimensionError, InputError, StateError

ACTIVATIONS = ("relu", "tanh", "identity")
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected network.

    ``layer_widths`` has one more entry than there are linear layers; the
    per-layer tuples (``activations``, ``batchnorm``, ``dropout``) have one
    entry per linear layer.
    """

    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]
    batchnorm: tuple[bool, ...]
    dropout: tuple[float, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", tuple(self.activations))
        object.__setattr__(self, "batchnorm", tuple(bool(b) for b in self.batchnorm))
        object.__setattr__(self, "dropout", tuple(float(p) for p in self.dropout))
        n = len(widths) - 1
        if n < 1:
            raise DimensionError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise DimensionError(f"layer widths must be positive, got {widths}")
        for name in ("activations", "batchnorm", "dropout"):
            if len(getattr(self, name)) != n:
                raise DimensionError(f"{name} needs {n} entries, got {len(getattr(self, name))}")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for p in self.dropout:
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout probability must lie in [0, 1), got {p}")

    @classmethod
    def build(
        cls,
        widths: Sequence[int],
        activation: str = "relu",
        out_activation: str = "identity",
        batchnorm: bool = False,
        dropout: float = 0.0,
    ) -> "MlpSpec":
        """Hidden layers share one block configuration; the output layer is a bare linear map."""
        n = len(widths) - 1
        return cls(
            tuple(widths),
            tuple([activation] * (n - 1) + [out_activation]),
            tuple([batchnorm] * (n - 1) + [False]),
            tuple([dropout] * (n - 1) + [0.0]),
        )

    @property
    def num_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Declared order of every array, trainable parameters and buffers alike."""
        shapes: dict[str, tuple[int, ...]] = {}
        for i in range(self.num_layers):
            fan_in, fan_out = self.layer_widths[i], self.layer_widths[i + 1]
            shapes[f"{i}.weight"] = (fan_in, fan_out)
            shapes[f"{i}.bias"] = (fan_out,)
            if self.batchnorm[i]:
                shapes[f"{i}.bn_scale"] = (fan_out,)
                shapes[f"{i}.bn_shift"] = (fan_out,)
                shapes[f"{i}.bn_mean"] = (fan_out,)
                shapes[f"{i}.bn_var"] = (fan_out,)
        return shapes

    def trainable_names(self) -> list[str]:
        return [k for k in self.param_shapes() if not k.endswith(("bn_mean", "bn_var"))]

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activations": list(self.activations),
            "batchnorm": list(self.batchnorm),
            "dropout": list(self.dropout),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["layer_widths"]), tuple(d["activations"]), tuple(d["batchnorm"]), tuple(d["dropout"]))


@dataclass
class LayerCache:
    x: np.ndarray
    z: np.ndarray  # linear output
    xhat: Optional[np.ndarray] = None
    inv_std: Optional[np.ndarray] = None
    batch_mean: Optional[np.ndarray] = None
    batch_var: Optional[np.ndarray] = None
    pre: Optional[np.ndarray] = None  # activation input
    post: Optional[np.ndarray] = None  # activation output
    mask: Optional[np.ndarray] = None  # inverted-dropout multiplier


@dataclass
class ForwardCache:
    mode: str
    layers: list[LayerCache] = field(default_factory=list)
    activations: list[np.ndarray] = field(default_factory=list)


def init_params(spec: MlpSpec, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, identity batch-norm."""
    params: dict[str, np.ndarray] = {}
    for name, shape in spec.param_shapes().items():
        kind = name.split(".", 1)[1]
        if kind == "weight":
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        elif kind in ("bn_scale", "bn_var"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def _activate(act: str, x: np.ndarray) -> np.ndarray:
    if act == "relu":
        return np.maximum(x, 0)
    if act == "tanh":
        return np.tanh(x)
    return x


def _check_input(spec: MlpSpec, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"expected input of shape (rows, {spec.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite value in network input")


def forward(
    spec: MlpSpec,
    params: dict[str, np.ndarray],
    batch: np.ndarray,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a ``(rows, input_dim)`` batch.

    Train mode normalises with batch statistics and samples dropout masks from
    ``rng``; eval mode uses the running statistics and no dropout, and is a
    pure function of ``(params, batch)``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    dtype = params["0.weight"].dtype
    x = np.asarray(batch, dtype=dtype)
    _check_input(spec, x)
    train = mode == "train"
    if train and rng is None and any(p > 0 for p in spec.dropout):
        raise StateError("train-mode forward with dropout needs an rng")

    cache = ForwardCache(mode=mode, activations=[x])
    for i in range(spec.num_layers):
        z = x @ params[f"{i}.weight"] + params[f"{i}.bias"]
        lc = LayerCache(x=x, z=z)
        h = z
        if spec.batchnorm[i]:
            if train:
                mean = z.mean(axis=0)
                var = z.var(axis=0)
                lc.batch_mean, lc.batch_var = mean, var
            else:
                mean, var = params[f"{i}.bn_mean"], params[f"{i}.bn_var"]
            inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(dtype)
            xhat = (z - mean) * inv_std
            lc.xhat, lc.inv_std = xhat, inv_std
            h = params[f"{i}.bn_scale"] * xhat + params[f"{i}.bn_shift"]
        lc.pre = h
        h = _activate(spec.activations[i], h)
        lc.post = h
        p = spec.dropout[i]
        if train and p > 0:
            keep = 1.0 - p
            lc.mask = ((rng.random(h.shape) < keep) / keep).astype(dtype)
            h = h * lc.mask
        cache.layers.append(lc)
        cache.activations.append(h)
        x = h
    return x, cache


def backward(
    spec: MlpSpec,
    params: dict[str, np.ndarray],
    cache: Optional[ForwardCache],
    output_gradient: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of a scalar loss w.r.t. every trainable parameter and the input.

    ``output_gradient`` is dLoss/dOutput for the batch that produced ``cache``.
    """
    if cache is None or not cache.layers:
        raise StateError("backward needs the cache of a preceding forward pass")
    out = cache.activations[-1]
    g = np.asarray(output_gradient, dtype=out.dtype)
    if g.shape != out.shape:
        raise DimensionError(f"output gradient shape {g.shape} does not match output {out.shape}")
    train = cache.mode == "train"
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(spec.num_layers)):
        lc = cache.layers[i]
        if lc.mask is not None:
            g = g * lc.mask
        act = spec.activations[i]
        if act == "relu":
            g = g * (lc.pre > 0)
        elif act == "tanh":
            g = g * (1.0 - lc.post * lc.post)
        if spec.batchnorm[i]:
            grads[f"{i}.bn_scale"] = (g * lc.xhat).sum(axis=0)
            grads[f"{i}.bn_shift"] = g.sum(axis=0)
            gx = g * params[f"{i}.bn_scale"]
            if train:
                n = gx.shape[0]
                g = (lc.inv_std / n) * (n * gx - gx.sum(axis=0) - lc.xhat * (gx * lc.xhat).sum(axis=0))
            else:
                g = gx * lc.inv_std
        grads[f"{i}.weight"] = lc.x.T @ g
        grads[f"{i}.bias"] = g.sum(axis=0)
        g = g @ params[f"{i}.weight"].T
    ordered = {k: grads[k] for k in spec.trainable_names()}
    return ordered, g


def update_batchnorm_stats(
    spec: MlpSpec, params: dict[str, np.ndarray], cache: ForwardCache, momentum: float = BN_MOMENTUM, prefix: str = ""
) -> None:
    """Fold the batch statistics of a train-mode pass into the running buffers, in place.

    ``prefix`` addresses a sub-network stored inside a larger parameter dict.
    """
    if cache.mode != "train":
        raise StateError("running statistics are only updated from train-mode passes")
    for i in range(spec.num_layers):
        if not spec.batchnorm[i]:
            continue
        lc = cache.layers[i]
        mean_key, var_key = f"{prefix}{i}.bn_mean", f"{prefix}{i}.bn_var"
        dtype = params[mean_key].dtype
        params[mean_key] = (momentum * params[mean_key] + (1 - momentum) * lc.batch_mean).astype(dtype)
        params[var_key] = (momentum * params[var_key] + (1 - momentum) * lc.batch_var).astype(dtype)


@dataclass(frozen=True)
class FoldedMlp:
    """Eval-mode network with batch-norm folded into the preceding linear map.

    Mathematically equal to ``forward(mode="eval")`` but cheaper on large
    batches; used by the lookahead inner loop.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activations: tuple[str, ...]

    @classmethod
    def from_params(cls, spec: MlpSpec, params: dict[str, np.ndarray]) -> "FoldedMlp":
        ws, bs = [], []
        for i in range(spec.num_layers):
            w = params[f"{i}.weight"].astype(np.float64)
            b = params[f"{i}.bias"].astype(np.float64)
            if spec.batchnorm[i]:
                s = params[f"{i}.bn_scale"] / np.sqrt(params[f"{i}.bn_var"].astype(np.float64) + BN_EPS)
                w = w * s
                b = (b - params[f"{i}.bn_mean"]) * s + params[f"{i}.bn_shift"]
            ws.append(w.astype(np.float32))
            bs.append(b.astype(np.float32))
        return cls(tuple(ws), tuple(bs), spec.activations)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float32)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = h @ w
            h += b
            if act == "relu":
                np.maximum(h, 0, out=h)
            elif act == "tanh":
                np.tanh(h, out=h)
        return h


def num_params(spec: MlpSpec) -> int:
    return sum(int(np.prod(s)) for s in spec.param_shapes().values())


def cast_params(params: dict[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    return {k: v.astype(dtype) for k, v in params.items()}


def prefixed(params: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    """Sub-dictionary of ``params`` whose keys start with ``prefix``, prefix stripped."""
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def add_prefix(params: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {prefix + k: v for k, v in params.items()}


def global_norm(grad_dicts: Iterable[dict[str, np.ndarray]]) -> float:
    total = 0.0
    for gd in grad_dicts:
        for g in gd.values():
            total += float(np.sum(np.square(g, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_by_global_norm(grad_dicts: list[dict[str, np.ndarray]], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grad_dicts)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for gd in grad_dicts:
            for k in gd:
                gd[k] = (gd[k] * scale).astype(gd[k].dtype)
    return norm
