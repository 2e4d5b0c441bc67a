"""Task descriptions and the JSON task-file format.

Lengths are meters, angles radians, masses kilograms.  Quaternions are
stored scalar-first ``(w, x, y, z)``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np


class Affordance(enum.Enum):
    LIFT = "Lift"
    PULL = "Pull"
    PRESS = "Press"
    TWIST = "Twist"
    LEVER = "Lever"
    WRAP_GRASP = "WrapGrasp"
    HANDLE_GRASP = "HandleGrasp"


# Report row order.
AFFORDANCE_ORDER = (
    Affordance.LIFT, Affordance.PULL, Affordance.PRESS, Affordance.TWIST,
    Affordance.LEVER, Affordance.WRAP_GRASP, Affordance.HANDLE_GRASP,
)
AFFORDANCE_LABEL = {
    Affordance.LIFT: "Lift", Affordance.PULL: "Pull", Affordance.PRESS: "Press",
    Affordance.TWIST: "Twist", Affordance.LEVER: "Lever", Affordance.WRAP_GRASP: "Wrap-Grasp",
    Affordance.HANDLE_GRASP: "Handle-Grasp",
}

TOPOLOGIES = ("platform", "poPmAb25", "pPdAb2", "pPdAb23", "pPdAb25", "InSiAd2")
SHAPES = ("box", "cylinder", "sphere")
WORKSPACE_HALF = 0.5


class TaskError(ValueError):
    pass


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise TaskError(f"degenerate quaternion {q}")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def quat_angle(q) -> float:
    """Rotation angle of a unit quaternion, in [0, pi]."""
    w = abs(float(quat_normalize(q)[0]))
    return 2.0 * float(np.arccos(min(1.0, w)))


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass
class ObjectState:
    shape: str
    size: np.ndarray  # box: half extents (3); cylinder: (radius, half height); sphere: (radius,)
    position: np.ndarray
    orient: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    mass: float = 0.1
    mu: float = 0.5

    def __post_init__(self):
        self.size = np.asarray(self.size, dtype=float).ravel()
        self.position = np.asarray(self.position, dtype=float).ravel()
        self.orient = quat_normalize(self.orient)
        expected = {"box": 3, "cylinder": 2, "sphere": 1}
        if self.shape not in expected:
            raise TaskError(f"unknown shape {self.shape!r}")
        if self.size.shape != (expected[self.shape],):
            raise TaskError(f"{self.shape} takes {expected[self.shape]} size parameters, got {self.size.shape}")
        if np.any(self.size <= 0):
            raise TaskError(f"size parameters must be positive, got {self.size}")
        if self.mu < 0:
            raise TaskError(f"mu must be >= 0, got {self.mu}")
        if self.mass <= 0:
            raise TaskError(f"mass must be positive, got {self.mass}")
        if self.position.shape != (3,) or not np.all(np.isfinite(self.position)):
            raise TaskError(f"bad object position {self.position}")

    @property
    def dims(self) -> np.ndarray:
        """Full extents along the object's local axes."""
        if self.shape == "box":
            return 2.0 * self.size
        if self.shape == "cylinder":
            return np.array([2 * self.size[0], 2 * self.size[0], 2 * self.size[1]])
        return np.full(3, 2.0 * self.size[0])

    def copy(self) -> "ObjectState":
        return replace(self, size=self.size.copy(), position=self.position.copy(), orient=self.orient.copy())

    def to_dict(self) -> dict:
        return {
            "shape": self.shape, "size": self.size.tolist(), "position": self.position.tolist(),
            "orient": self.orient.tolist(), "mass": self.mass, "mu": self.mu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectState":
        return cls(shape=d["shape"], size=d["size"], position=d["position"],
                   orient=d.get("orient", IDENTITY_QUAT), mass=float(d.get("mass", 0.1)),
                   mu=float(d.get("mu", 0.5)))


@dataclass
class TaskSpec:
    name: str
    object: ObjectState
    affordance: Affordance
    topology: str
    grasp_location: np.ndarray
    grasp_orient: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    success_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if isinstance(self.affordance, str):
            self.affordance = Affordance(self.affordance)
        if self.topology not in TOPOLOGIES:
            raise TaskError(f"{self.name}: topology {self.topology!r} is not in the taxonomy")
        self.grasp_location = np.asarray(self.grasp_location, dtype=float).ravel()
        self.grasp_orient = quat_normalize(self.grasp_orient)
        axis = np.asarray(self.success_axis, dtype=float).ravel()
        norm = np.linalg.norm(axis)
        if axis.shape != (3,) or norm < 1e-12:
            raise TaskError(f"{self.name}: success_axis must be a non-zero 3-vector")
        self.success_axis = axis / norm

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "object": self.object.to_dict(),
            "affordance": self.affordance.value,
            "topology": self.topology,
            "grasp_location": self.grasp_location.tolist(),
            "grasp_orient": self.grasp_orient.tolist(),
            "success_axis": self.success_axis.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        try:
            return cls(
                name=str(d.get("name", "task")),
                object=ObjectState.from_dict(d["object"]),
                affordance=Affordance(d["affordance"]),
                topology=d["topology"],
                grasp_location=d["grasp_location"],
                grasp_orient=d.get("grasp_orient", IDENTITY_QUAT),
                success_axis=d.get("success_axis", [0.0, 0.0, 1.0]),
            )
        except KeyError as exc:
            raise TaskError(f"task entry missing field {exc}") from None


def in_workspace(point, half: float = WORKSPACE_HALF) -> bool:
    return bool(np.all(np.abs(np.asarray(point, dtype=float)) <= half))


def save_tasks(path, tasks: Iterable[TaskSpec]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([t.to_dict() for t in tasks], indent=2) + "\n")
    return path


def load_tasks(path) -> list[TaskSpec]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("tasks", [])
    if not data:
        raise TaskError(f"{path}: no tasks")
    return [TaskSpec.from_dict(d) for d in data]
