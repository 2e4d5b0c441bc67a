"""Grasp taxonomy, the rule oracle for topology labels, the topology
selector network and the synthetic task-suite generator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import approx
from .tasks import (
    AFFORDANCE_ORDER, IDENTITY_QUAT, SHAPES, TOPOLOGIES, Affordance, ObjectState, TaskError, TaskSpec,
    in_workspace, quat_about, quat_to_matrix,
)

log = logging.getLogger(__name__)

FINGERS = ("thumb", "index", "middle", "ring", "little")


@dataclass(frozen=True)
class TopologySpec:
    label: str
    active_fingers: tuple[bool, bool, bool, bool, bool]
    palm_contact_required: bool
    min_contacts: int
    palm_orient_offset: tuple[float, float, float, float]

    @property
    def n_sources(self) -> int:
        # every active finger offers a tip and a middle-phalanx point, plus the palm pad
        return 2 * sum(self.active_fingers) + 1

    @property
    def palm_normal(self) -> np.ndarray:
        return quat_to_matrix(self.palm_orient_offset)[:, 0]


_PALM_DOWN = tuple(quat_about([0.0, 1.0, 0.0], math.pi / 2))
_SIDE = tuple(quat_about([1.0, 0.0, 0.0], math.pi / 2))
_IDENT = tuple(IDENTITY_QUAT)

_TOPOLOGY_TABLE = {
    "platform": TopologySpec("platform", (False, False, False, False, False), True, 1, _PALM_DOWN),
    "poPmAb25": TopologySpec("poPmAb25", (True, True, True, True, True), True, 4, _IDENT),
    "pPdAb2": TopologySpec("pPdAb2", (True, True, False, False, False), False, 2, _IDENT),
    "pPdAb23": TopologySpec("pPdAb23", (True, True, True, False, False), False, 3, _IDENT),
    "pPdAb25": TopologySpec("pPdAb25", (True, True, True, True, True), False, 3, _IDENT),
    "InSiAd2": TopologySpec("InSiAd2", (True, True, False, False, False), False, 2, _SIDE),
}


def topology_spec(label: str) -> TopologySpec:
    try:
        return _TOPOLOGY_TABLE[label]
    except KeyError:
        raise ValueError(f"unknown grasp topology {label!r}; expected one of {TOPOLOGIES}") from None


# ---------------------------------------------------------------------------
# Features and the rule oracle

FEATURE_DIM = 3 + len(SHAPES) + 1 + len(AFFORDANCE_ORDER)
POWER_SIZE_THRESHOLD = 0.06


@dataclass(frozen=True)
class FeatureVector:
    dims: tuple[float, float, float]
    shape: str
    mass: float
    affordance: Affordance

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"object dims must be positive, got {self.dims}")

    def to_array(self) -> np.ndarray:
        shape_hot = [1.0 if s == self.shape else 0.0 for s in SHAPES]
        aff_hot = [1.0 if a is self.affordance else 0.0 for a in AFFORDANCE_ORDER]
        return np.array([*self.dims, *shape_hot, self.mass, *aff_hot])

    @classmethod
    def from_object(cls, obj: ObjectState, affordance: Affordance) -> "FeatureVector":
        return cls(tuple(float(d) for d in obj.dims), obj.shape, float(obj.mass), affordance)


def label_oracle(features: FeatureVector, size_threshold: float = POWER_SIZE_THRESHOLD) -> str:
    aff = features.affordance
    if aff is Affordance.PRESS:
        return "platform"
    if aff in (Affordance.TWIST, Affordance.LEVER):
        return "InSiAd2"
    if aff is Affordance.PULL:
        return "pPdAb25"
    return "poPmAb25" if max(features.dims) >= size_threshold else "pPdAb23"


# ---------------------------------------------------------------------------
# Selector network: features -> 6 independent sigmoid scores


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _scale_features(x: np.ndarray) -> np.ndarray:
    # dims in meters and mass in kg are small next to the one-hot entries
    x = np.array(x, dtype=float, copy=True)
    x[..., :3] *= 10.0
    return x


def select_topology(features: FeatureVector | np.ndarray, net: approx.MlpParams | None) -> np.ndarray:
    """Per-topology probabilities in ``TOPOLOGIES`` order.

    Falls back to a one-hot of the rule oracle when no network is given.
    """
    if net is None:
        if not isinstance(features, FeatureVector):
            raise ValueError("the oracle fallback needs a FeatureVector")
        log.warning("no trained topology selector; falling back to the rule oracle")
        out = np.zeros(len(TOPOLOGIES))
        out[TOPOLOGIES.index(label_oracle(features))] = 1.0
        return out
    x = features.to_array() if isinstance(features, FeatureVector) else np.asarray(features, dtype=float)
    return _sigmoid(approx.mlp_forward(net, _scale_features(x)))


def selected_label(probs: np.ndarray) -> str:
    return TOPOLOGIES[int(np.argmax(probs))]


def sample_features(rng: np.random.Generator, n: int) -> list[FeatureVector]:
    out = []
    for _ in range(n):
        shape = SHAPES[rng.integers(len(SHAPES))]
        if shape == "box":
            dims = tuple(rng.uniform(0.03, 0.12, size=3))
        elif shape == "cylinder":
            r = rng.uniform(0.01, 0.04)
            dims = (2 * r, 2 * r, rng.uniform(0.04, 0.20))
        else:
            r = rng.uniform(0.02, 0.05)
            dims = (2 * r,) * 3
        aff = AFFORDANCE_ORDER[rng.integers(len(AFFORDANCE_ORDER))]
        out.append(FeatureVector(tuple(float(d) for d in dims), shape, float(rng.uniform(0.05, 0.8)), aff))
    return out


def oracle_dataset(rng: np.random.Generator, n: int):
    feats = sample_features(rng, n)
    x = np.stack([f.to_array() for f in feats])
    y = np.zeros((n, len(TOPOLOGIES)))
    for i, f in enumerate(feats):
        y[i, TOPOLOGIES.index(label_oracle(f))] = 1.0
    return x, y


def train_selector(x: np.ndarray, y: np.ndarray, seed: int = 0, epochs: int = 60, batch: int = 64,
                   lr: float = 3e-3, hidden: Sequence[int] = (32, 32)) -> approx.MlpParams:
    """Fit the selector with per-label binary cross-entropy."""
    rng = np.random.default_rng(seed)
    net = approx.init_mlp([x.shape[1], *hidden, y.shape[1]], rng)
    opt = approx.OptimState(lr=lr)
    xs = _scale_features(x)
    n = len(xs)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            logits = approx.mlp_forward(net, xs[idx])
            # d BCE / d logit = sigmoid(logit) - target
            grad = (_sigmoid(logits) - y[idx]) / len(idx)
            approx.optim_step(net, approx.mlp_backward(net, xs[idx], grad), opt)
    return net


def bce_loss(net: approx.MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(_sigmoid(approx.mlp_forward(net, _scale_features(x))), 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def oracle_agreement(net: approx.MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    probs = select_topology(x, net)
    return float(np.mean(np.argmax(probs, axis=-1) == np.argmax(y, axis=-1)))


# ---------------------------------------------------------------------------
# Synthetic task suites

@dataclass
class GeneratorRanges:
    box_dim: tuple[float, float] = (0.03, 0.12)
    cyl_radius: tuple[float, float] = (0.01, 0.04)
    cyl_height: tuple[float, float] = (0.06, 0.16)
    sphere_radius: tuple[float, float] = (0.02, 0.05)
    mass: tuple[float, float] = (0.05, 0.8)
    mu: tuple[float, float] = (0.3, 0.9)
    object_xy: tuple[float, float] = (-0.05, 0.05)
    size_threshold: float = POWER_SIZE_THRESHOLD
    standoff: float = 0.0
    extra: dict = field(default_factory=dict)


def grasp_pose_for(obj: ObjectState, topology: str, standoff: float = 0.0):
    """Grasp location on the object surface facing the approaching palm.

    The palm approaches along its normal, so the location is the first
    surface point met when walking from the palm side toward the object
    center.  Returns ``(location, palm_orient)``.
    """
    spec = topology_spec(topology)
    normal = spec.palm_normal
    # local support distance along -normal, in object frame
    rot = quat_to_matrix(obj.orient)
    d_local = rot.T @ (-normal)
    if obj.shape == "sphere":
        reach = obj.size[0]
    elif obj.shape == "cylinder":
        r, h = obj.size
        radial = math.hypot(d_local[0], d_local[1])
        # ray from center along d_local leaves through the side or a cap
        t_side = r / radial if radial > 1e-12 else math.inf
        t_cap = h / abs(d_local[2]) if abs(d_local[2]) > 1e-12 else math.inf
        reach = min(t_side, t_cap)
    else:
        with np.errstate(divide="ignore"):
            t = np.where(np.abs(d_local) > 1e-12, obj.size / np.abs(d_local), np.inf)
        reach = float(np.min(t))
    location = obj.position - normal * (reach + standoff)
    return location, np.array(spec.palm_orient_offset)


def _success_axis(aff: Affordance, topology: str) -> np.ndarray:
    if aff is Affordance.PRESS:
        return topology_spec(topology).palm_normal
    if aff in (Affordance.TWIST, Affordance.LEVER):
        return topology_spec(topology).palm_normal
    return np.array([0.0, 0.0, 1.0])


def make_task(name: str, obj: ObjectState, affordance: Affordance, topology: str | None = None,
              standoff: float = 0.0) -> TaskSpec:
    if topology is None:
        topology = label_oracle(FeatureVector.from_object(obj, affordance))
    loc, orient = grasp_pose_for(obj, topology, standoff)
    return TaskSpec(name=name, object=obj, affordance=affordance, topology=topology,
                    grasp_location=loc, grasp_orient=orient,
                    success_axis=_success_axis(affordance, topology))


def _random_object(rng: np.random.Generator, ranges: GeneratorRanges, shape: str) -> ObjectState:
    if shape == "box":
        size = rng.uniform(*ranges.box_dim, size=3) / 2
    elif shape == "cylinder":
        size = np.array([rng.uniform(*ranges.cyl_radius), rng.uniform(*ranges.cyl_height) / 2])
    else:
        size = np.array([rng.uniform(*ranges.sphere_radius)])
    pos = np.array([rng.uniform(*ranges.object_xy), rng.uniform(*ranges.object_xy), 0.0])
    return ObjectState(shape=shape, size=size, position=pos, mass=float(rng.uniform(*ranges.mass)),
                       mu=float(rng.uniform(*ranges.mu)))


def generate_tasks(seed: int, n: int, ranges: GeneratorRanges | None = None,
                   affordances: Sequence[Affordance] | None = None) -> list[TaskSpec]:
    """``n`` synthetic tasks; the first ``len(affordances)`` cover every affordance once."""
    affs = tuple(affordances) if affordances is not None else AFFORDANCE_ORDER
    if n < len(affs):
        raise ValueError(f"need n >= {len(affs)} to cover every affordance, got {n}")
    ranges = ranges or GeneratorRanges()
    rng = np.random.default_rng(seed)
    tasks = []
    for i in range(n):
        aff = affs[i] if i < len(affs) else affs[rng.integers(len(affs))]
        shape = SHAPES[rng.integers(len(SHAPES))]
        obj = _random_object(rng, ranges, shape)
        feats = FeatureVector.from_object(obj, aff)
        topology = label_oracle(feats, ranges.size_threshold)
        task = make_task(f"task{i:02d}_{aff.value.lower()}_{shape}", obj, aff, topology, ranges.standoff)
        if not in_workspace(task.grasp_location):
            raise TaskError(f"generated grasp location {task.grasp_location} left the workspace")
        tasks.append(task)
    return tasks
