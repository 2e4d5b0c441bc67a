"""Coupled-joint hand model.

Each finger is a planar chain driven by one PIP angle; the MCP and DIP
angles follow it by fixed ratios.  The thumb is a two-link chain driven by
its TMCP angle with the IP joint coupled to it.  Chains live in the palm
plane of the hand frame: they start along ``+y`` (fingers) or ``-y``
(thumb) and flex toward the palm normal ``+x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tasks import quat_to_matrix

ALPHA_DIP = np.array([0.77, 0.75, 0.75, 0.57])  # index, middle, ring, little
ALPHA_MCP = 0.67
ALPHA_TMCP = 0.5
THETA_MAX = 1.6

N_POINTS = 11
TIP_SLOTS = range(0, 5)
MID_SLOTS = range(5, 10)
PALM_SLOT = 10


@dataclass
class HandGeometry:
    finger_links: tuple[float, float, float] = (0.045, 0.025, 0.020)
    thumb_links: tuple[float, float] = (0.040, 0.030)
    palm_length: float = 0.090
    palm_width: float = 0.080
    # hand-frame anchors (x, y, z); fingers sit on the +y edge, thumb on -y
    finger_anchor_y: float = 0.015
    finger_anchor_z: tuple[float, float, float, float] = (0.027, 0.009, -0.009, -0.027)
    thumb_anchor: tuple[float, float, float] = (0.0, -0.020, 0.0)

    def anchors(self) -> np.ndarray:
        """(5, 3) anchors in thumb, index, middle, ring, little order."""
        out = np.zeros((5, 3))
        out[0] = self.thumb_anchor
        out[1:, 1] = self.finger_anchor_y
        out[1:, 2] = self.finger_anchor_z
        return out


@dataclass
class HandState:
    palm_pos: np.ndarray
    palm_orient: np.ndarray
    theta_pip: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        self.palm_pos = np.asarray(self.palm_pos, dtype=float)
        self.palm_orient = np.asarray(self.palm_orient, dtype=float)
        self.theta_pip = np.clip(np.asarray(self.theta_pip, dtype=float), 0.0, THETA_MAX)

    def copy(self) -> "HandState":
        return HandState(self.palm_pos.copy(), self.palm_orient.copy(), self.theta_pip.copy())


def coupled_angles(theta_pip: np.ndarray):
    """Return ``(mcp, pip, dip)`` arrays for the five chains.

    Slot 0 is the thumb: ``mcp`` holds TMCP, ``pip`` holds IP and ``dip`` is 0.
    """
    theta = np.asarray(theta_pip, dtype=float)
    mcp = np.empty(5)
    pip = np.empty(5)
    dip = np.zeros(5)
    mcp[0] = theta[0]
    pip[0] = ALPHA_TMCP * theta[0]
    mcp[1:] = ALPHA_MCP * theta[1:]
    pip[1:] = theta[1:]
    dip[1:] = ALPHA_DIP * theta[1:]
    return mcp, pip, dip


def hand_frame_points(theta_pip: np.ndarray, geom: HandGeometry) -> np.ndarray:
    """Candidate contact points in the hand frame, shape (11, 3).

    Rows 0-4 are fingertips, 5-9 middle-phalanx midpoints (the distal link
    midpoint for the thumb), row 10 the palm pad at the hand origin.
    """
    mcp, pip, dip = coupled_angles(theta_pip)
    a1 = mcp
    a2 = mcp + pip
    a3 = a2 + dip
    base = np.array([-1.0, 1.0, 1.0, 1.0, 1.0])  # thumb starts along -y
    L = np.zeros((5, 3))
    L[0, :2] = geom.thumb_links
    L[1:] = geom.finger_links

    def seg(angle, length):
        # direction cos(a)*base*y + sin(a)*x
        return np.stack([length * np.sin(angle), length * np.cos(angle) * base, np.zeros(5)], axis=1)

    anchors = geom.anchors()
    knuckle = anchors + seg(a1, L[:, 0])
    mid = knuckle + seg(a2, 0.5 * L[:, 1])
    after_mid = knuckle + seg(a2, L[:, 1])
    tip = after_mid + seg(a3, L[:, 2])
    # thumb has no third link: its tip is the end of link 2
    tip[0] = after_mid[0]
    pts = np.zeros((N_POINTS, 3))
    pts[0:5] = tip
    pts[5:10] = mid
    return pts


def forward_kinematics(hand: HandState, geom: HandGeometry | None = None) -> np.ndarray:
    """World-frame candidate contact points, shape (11, 3)."""
    geom = geom or HandGeometry()
    rot = quat_to_matrix(hand.palm_orient)
    return hand.palm_pos + hand_frame_points(hand.theta_pip, geom) @ rot.T
