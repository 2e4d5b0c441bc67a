"""Small dense networks written directly against numpy.

Everything the learner needs lives here: a tanh MLP with a hand-written
backward pass, a diagonal Gaussian action head, an Adam optimizer and the
checkpoint format shared by the agent and the topology selector.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_MAGIC = b"CRMP"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when a NaN/inf shows up in a forward/backward pass or a gradient."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


@dataclass
class MlpParams:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        sizes = [int(s) for s in self.layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ShapeError(f"layer_sizes must hold >= 2 positive ints, got {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError("need one weight matrix and one bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ShapeError(f"layer {i}: weight shape {w.shape} != {(sizes[i + 1], sizes[i])}")
            if b.shape != (sizes[i + 1],):
                raise ShapeError(f"layer {i}: bias shape {b.shape} != {(sizes[i + 1],)}")
        self.layer_sizes = sizes

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in the fixed order W0, b0, W1, b1, ... (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.layer_sizes), [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_mlp(layer_sizes: Sequence[int], rng: np.random.Generator, zero_last: bool = False,
             last_scale: float = 1.0) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    ``last_scale`` shrinks the output layer (policy heads start near zero mean).
    """
    sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        if i == len(sizes) - 2:
            w = np.zeros_like(w) if zero_last else w * last_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, weights, biases)


def zeros_like_mlp(params: MlpParams) -> MlpParams:
    return MlpParams(list(params.layer_sizes), [np.zeros_like(w) for w in params.weights],
                     [np.zeros_like(b) for b in params.biases])


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != params.in_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with layer_sizes[0]={params.in_dim}")
    return x


def _forward_cache(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    # activations[0] is the input, activations[i] the output of layer i-1
    acts = [x]
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input vector or a (batch, in_dim) matrix."""
    x = _check_input(params, x)
    return _forward_cache(params, x)[-1]


def mlp_backward(params: MlpParams, x: np.ndarray, grad_output: np.ndarray,
                 return_input_grad: bool = False):
    """Backpropagate ``grad_output`` (dL/d output) to parameter gradients.

    Batched inputs sum their per-sample gradients. Returns an ``MlpParams``
    holding the gradients (same shapes as ``params``), optionally followed by
    the gradient with respect to the input.
    """
    x = _check_input(params, x)
    g = np.asarray(grad_output, dtype=float)
    expected = x.shape[:-1] + (params.out_dim,)
    if g.shape != expected:
        raise ShapeError(f"grad_output shape {g.shape} != {expected}")
    acts = _forward_cache(params, x)
    batched = x.ndim == 2
    gw: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    last = params.n_layers - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * (1.0 - acts[i + 1] ** 2)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient at layer {i}", layer=i)
        h_in = acts[i]
        if batched:
            gw[i] = g.T @ h_in
            gb[i] = g.sum(axis=0)
        else:
            gw[i] = np.outer(g, h_in)
            gb[i] = g.copy()
        g = g @ params.weights[i]
    grads = MlpParams(list(params.layer_sizes), gw, gb)
    if return_input_grad:
        return grads, g
    return grads


# ---------------------------------------------------------------------------
# Gaussian policy head


@dataclass
class GaussianPolicyOutput:
    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.log_std = np.clip(np.asarray(self.log_std, dtype=float), LOG_STD_MIN, LOG_STD_MAX)
        if self.mean.shape[-1] != self.log_std.shape[-1]:
            raise ShapeError(f"mean dim {self.mean.shape[-1]} != log_std dim {self.log_std.shape[-1]}")

    @property
    def action_dim(self) -> int:
        return int(self.mean.shape[-1])

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log density, summed over the last axis."""
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return float(np.sum(log_std + 0.5 * (_LOG_2PI + 1.0)))


def policy_sample(out: GaussianPolicyOutput, rng: np.random.Generator):
    """Draw ``a ~ N(mean, exp(log_std)^2)``; returns ``(action, log_prob)``."""
    noise = rng.standard_normal(out.mean.shape)
    action = out.mean + out.std * noise
    return action, gaussian_log_prob(out.mean, out.log_std, action)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


def _as_arrays(obj) -> list[np.ndarray]:
    if isinstance(obj, MlpParams):
        return obj.arrays()
    if isinstance(obj, np.ndarray):
        return [obj]
    return list(obj)


def optim_step(params, grads, state: OptimState):
    """One Adam update, applied in place. Returns ``(params, state)``.

    ``params`` and ``grads`` are an ``MlpParams`` or a list of arrays in the
    same order. A non-finite gradient leaves everything untouched and raises
    ``NonFiniteError``.
    """
    p_list = _as_arrays(params)
    g_list = _as_arrays(grads)
    if len(p_list) != len(g_list):
        raise ShapeError(f"{len(p_list)} parameter arrays but {len(g_list)} gradients")
    for i, (p, g) in enumerate(zip(p_list, g_list)):
        if p.shape != g.shape:
            raise ShapeError(f"array {i}: parameter {p.shape} vs gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in array {i}; update skipped", layer=i)
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in p_list]
        state.second_moment = [np.zeros_like(p) for p in p_list]
    elif any(m.shape != p.shape for m, p in zip(state.first_moment, p_list)):
        raise ShapeError("optimizer moments do not match parameter shapes")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(p_list, g_list, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps_stab)
    return params, state


# ---------------------------------------------------------------------------
# Checkpoints
#
# Binary layout (little endian):
#   b"CRMP" | u32 version | u32 header_len | header (utf-8 JSON) | float64 payload
# The header lists every network (name, layer_sizes) and every loose vector
# (name, length, e.g. log_std) in payload order.


def _flatten(nets: Mapping[str, MlpParams], vectors: Mapping[str, np.ndarray]):
    header = {"nets": [], "vectors": [], "meta": {}}
    chunks = []
    for name, net in nets.items():
        header["nets"].append({"name": name, "layer_sizes": list(net.layer_sizes)})
        chunks.extend(a.ravel() for a in net.arrays())
    for name, vec in vectors.items():
        vec = np.asarray(vec, dtype=float).ravel()
        header["vectors"].append({"name": name, "length": int(vec.size)})
        chunks.append(vec)
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    return header, flat


def _unflatten(header: dict, flat: np.ndarray):
    nets, vectors = {}, {}
    pos = 0
    for spec in header["nets"]:
        sizes = spec["layer_sizes"]
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            ws.append(flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in).copy())
            pos += fan_in * fan_out
            bs.append(flat[pos:pos + fan_out].copy())
            pos += fan_out
        nets[spec["name"]] = MlpParams(list(sizes), ws, bs)
    for spec in header["vectors"]:
        n = spec["length"]
        vectors[spec["name"]] = flat[pos:pos + n].copy()
        pos += n
    if pos != flat.size:
        raise ValueError(f"checkpoint payload has {flat.size} floats, header accounts for {pos}")
    return nets, vectors


def save_checkpoint(path, nets: Mapping[str, MlpParams], vectors: Mapping[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> Path:
    header, flat = _flatten(nets, vectors or {})
    header["meta"] = meta or {}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(flat.astype("<f8").tobytes())
    return path


def load_checkpoint(path):
    """Returns ``(nets, vectors, meta)``."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    flat = np.frombuffer(data[12 + hlen:], dtype="<f8").astype(float)
    nets, vectors = _unflatten(header, flat)
    return nets, vectors, header.get("meta", {})


def export_json(path, nets: Mapping[str, MlpParams], vectors: Mapping[str, np.ndarray] | None = None,
                meta: dict | None = None) -> Path:
    doc = {
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "nets": {
            name: {
                "layer_sizes": net.layer_sizes,
                "weights": [w.tolist() for w in net.weights],
                "biases": [b.tolist() for b in net.biases],
            }
            for name, net in nets.items()
        },
        "vectors": {name: np.asarray(v, dtype=float).tolist() for name, v in (vectors or {}).items()},
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1))
    return path


def import_json(path):
    doc = json.loads(Path(path).read_text())
    nets = {
        name: MlpParams(spec["layer_sizes"], [np.array(w, dtype=float) for w in spec["weights"]],
                        [np.array(b, dtype=float) for b in spec["biases"]])
        for name, spec in doc["nets"].items()
    }
    vectors = {name: np.array(v, dtype=float) for name, v in doc["vectors"].items()}
    return nets, vectors, doc.get("meta", {})
