"""The global observation vector shared by the environment and the reward machine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Field order and widths of the flattened observation.
FIELDS: tuple[tuple[str, int], ...] = (
    ("n_c", 1),
    ("o_dist", 1),
    ("o_object", 3),
    ("o_cone", 1),
    ("o_relative", 3),
    ("o_force", 3),
    ("o_torque", 3),
)
FIELD_NAMES = tuple(name for name, _ in FIELDS)
FIELD_WIDTH = dict(FIELDS)
OBS_DIM = sum(w for _, w in FIELDS)


def _slices():
    out, pos = {}, 0
    for name, width in FIELDS:
        out[name] = slice(pos, pos + width)
        pos += width
    return out


FIELD_SLICE = _slices()


@dataclass(frozen=True)
class GlobalObservation:
    n_c: int
    o_dist: float
    o_object: np.ndarray
    o_cone: bool
    o_relative: np.ndarray
    o_force: np.ndarray
    o_torque: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            [float(self.n_c), float(self.o_dist)],
            self.o_object,
            [1.0 if self.o_cone else 0.0],
            self.o_relative,
            self.o_force,
            self.o_torque,
        ])

    @classmethod
    def from_vector(cls, vec) -> "GlobalObservation":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (OBS_DIM,):
            raise ValueError(f"observation vector must have {OBS_DIM} entries, got {vec.shape}")
        s = FIELD_SLICE
        return cls(
            n_c=int(round(vec[s["n_c"]][0])),
            o_dist=float(vec[s["o_dist"]][0]),
            o_object=vec[s["o_object"]].copy(),
            o_cone=bool(vec[s["o_cone"]][0] > 0.5),
            o_relative=vec[s["o_relative"]].copy(),
            o_force=vec[s["o_force"]].copy(),
            o_torque=vec[s["o_torque"]].copy(),
        )

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))
