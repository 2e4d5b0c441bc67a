"""Quasi-static point contact model against analytic shapes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..tasks import ObjectState, quat_about, quat_multiply, quat_to_matrix

GRAVITY = 9.81
_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class ContactParams:
    contact_eps: float = 0.002
    k_contact: float = 500.0
    push_tol: float = 0.004
    push_gain: float = 0.5


@dataclass
class Contact:
    point: np.ndarray
    normal: np.ndarray  # outward surface normal, pointing into the hand
    f_normal: float
    f_tangent: np.ndarray
    depth: float = 0.0  # penetration, >= 0
    slot: int = -1  # index of the hand point that made the contact
    sliding: bool = False  # tangential demand exceeded mu * f_normal

    def force_on_object(self) -> np.ndarray:
        return -self.f_normal * self.normal + self.f_tangent


def _sdf(shape: str, size: np.ndarray, position: np.ndarray, rot: np.ndarray, points: np.ndarray):
    p = (points - position) @ rot  # world -> object frame
    n = len(p)
    if shape == "sphere":
        r = np.sqrt(np.einsum("ij,ij->i", p, p))
        d = r - size[0]
        ok = r > 1e-9
        grad = np.zeros((n, 3))
        grad[ok] = p[ok] / r[ok, None]
    elif shape == "cylinder":
        radius, half_h = size
        rho = np.hypot(p[:, 0], p[:, 1])
        qr = rho - radius
        qz = np.abs(p[:, 2]) - half_h
        outside = np.maximum(qr, 0.0) ** 2 + np.maximum(qz, 0.0) ** 2
        d = np.minimum(np.maximum(qr, qz), 0.0) + np.sqrt(outside)
        radial = np.zeros((n, 3))
        has_rho = rho > 1e-9
        radial[has_rho, :2] = p[has_rho, :2] / rho[has_rho, None]
        axial = np.zeros((n, 3))
        axial[:, 2] = np.sign(p[:, 2])
        out = (d > 0)[:, None]
        gr = np.where(out, np.maximum(qr, 0.0)[:, None], (qr >= qz)[:, None].astype(float))
        gz = np.where(out, np.maximum(qz, 0.0)[:, None], (qz > qr)[:, None].astype(float))
        grad = gr * radial + gz * axial
        norm = np.sqrt(np.einsum("ij,ij->i", grad, grad))
        ok = norm > 1e-9
        grad[ok] /= norm[ok, None]
    else:
        q = np.abs(p) - size
        qpos = np.maximum(q, 0.0)
        outside = np.sqrt(np.einsum("ij,ij->i", qpos, qpos))
        d = np.minimum(q.max(axis=1), 0.0) + outside
        sign = np.sign(p)
        grad = qpos * sign
        inside = d <= 0
        if np.any(inside):
            rows = np.nonzero(inside)[0]
            axis = np.argmax(q[rows], axis=1)
            grad[rows] = 0.0
            grad[rows, axis] = sign[rows, axis]
        norm = np.sqrt(np.einsum("ij,ij->i", grad, grad))
        ok = norm > 1e-9
        grad[ok] /= norm[ok, None]
    return d, grad @ rot.T, ok


def signed_distance(obj: ObjectState, points: np.ndarray):
    """Signed distance and outward unit gradient for each world point.

    Returns ``(d, grad, ok)``; ``ok`` is False where the gradient is
    degenerate (a point at the shape center or on a medial axis).
    """
    return _sdf(obj.shape, obj.size, obj.position, quat_to_matrix(obj.orient), np.atleast_2d(points))


def compute_contacts(points: np.ndarray, obj: ObjectState, params: ContactParams | None = None,
                     slots=None):
    """Contacts between hand points and the object.

    Returns ``(contacts, pushed_displacement)``.  Normal force is linear in
    penetration; each contact resists a share of the object's weight
    proportional to its normal force, through friction limited by
    ``mu * f_normal``.  Penetration deeper than
    ``push_tol`` shoves the object away from the hand.
    """
    params = params or ContactParams()
    points = np.atleast_2d(points)
    slots = np.arange(len(points)) if slots is None else np.asarray(slots)
    d, grad, ok = signed_distance(obj, points)
    hit = np.nonzero((d <= params.contact_eps) & ok)[0]
    push = np.zeros(3)
    contacts: list[Contact] = []
    if len(hit) == 0:
        return contacts, push
    # the weight is shared in proportion to how hard each contact presses
    depths = np.maximum(0.0, -d[hit])
    total = float(depths.sum())
    weight = obj.mass * GRAVITY * _UP
    for i, depth in zip(hit, depths):
        normal = grad[i]
        depth = float(depth)
        fn = params.k_contact * depth
        share = weight * (depth / total) if total > 0.0 else np.zeros(3)
        t = share - np.dot(share, normal) * normal
        cap = obj.mu * fn
        mag = float(np.linalg.norm(t))
        sliding = mag > cap
        if sliding:
            t = t * (cap / mag) if mag > 0 else t
        contacts.append(Contact(point=points[i].copy(), normal=normal.copy(), f_normal=fn, f_tangent=t,
                                depth=depth, slot=int(slots[i]), sliding=sliding))
        excess = depth - params.push_tol
        if excess > 0:
            push += -normal * excess * params.push_gain
    return contacts, push


def _quat_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _turned(q: np.ndarray, turn: np.ndarray) -> np.ndarray:
    angle = math.sqrt(float(turn @ turn))
    if angle < 1e-12:
        return q
    out = quat_multiply(quat_about(turn / angle, angle), q)
    return out / math.sqrt(float(out @ out))


def settle_object(points: np.ndarray, obj: ObjectState, max_iter: int = 12, rel_tol: float = 1e-3,
                  max_shift: float = 0.002, max_turn: float = 0.05, rotate: bool = True,
                  max_halvings: int = 6) -> np.ndarray:
    """Move the object rigidly until the normal contact wrench balances.

    Minimizes the contact energy sum(k/2 * depth^2) over object translation
    (and small rotations when ``rotate``) with Gauss-Newton steps on the
    active set, a steepest-descent fallback and a backtracking line search;
    stops once an iteration lowers the energy by less than ``rel_tol``.
    Steps are capped at ``max_shift`` meters and ``max_turn`` radians so the
    object cannot tunnel through a finger.  Mutates ``obj`` and returns the
    total displacement of its position.
    """
    points = np.atleast_2d(points)
    start = obj.position.copy()
    pos, quat = obj.position.copy(), obj.orient.copy()
    rot = _quat_matrix(quat)
    d, grad, ok = _sdf(obj.shape, obj.size, pos, rot, points)
    energy = float(np.sum(np.minimum(d, 0.0) ** 2))
    # rotation columns are scaled by the object size so both parts share units
    length = float(np.max(obj.size))
    for _ in range(max_iter):
        act = (d < 0.0) & ok
        if energy == 0.0 or not np.any(act):
            break
        n = grad[act]
        depth = -d[act]
        # translating by D and turning by w deepens contact i by n_i . D + (r_i x n_i) . w
        jac = np.hstack([n, np.cross(points[act] - pos, n) / length]) if rotate else n
        gn = -np.linalg.lstsq(jac, depth, rcond=1e-8)[0]
        sd = -(jac.T @ depth) / max(float(np.sum(jac * jac)), 1e-12)
        best = None
        for x in (gn, sd):
            shift = x[:3]
            turn = x[3:] / length if rotate else np.zeros(3)
            s_norm = math.sqrt(float(shift @ shift))
            t_norm = math.sqrt(float(turn @ turn))
            if s_norm > max_shift:
                shift = shift * (max_shift / s_norm)
            if t_norm > max_turn:
                turn = turn * (max_turn / t_norm)
            scale = 1.0
            for _ in range(max_halvings):
                q_try = _turned(quat, turn * scale)
                p_try = pos + shift * scale
                r_try = _quat_matrix(q_try)
                d_try, g_try, ok_try = _sdf(obj.shape, obj.size, p_try, r_try, points)
                e_try = float(np.sum(np.minimum(d_try, 0.0) ** 2))
                if e_try < energy:
                    if best is None or e_try < best[0]:
                        best = (e_try, p_try, q_try, r_try, d_try, g_try, ok_try)
                    break
                scale *= 0.5
            if best is not None and scale == 1.0:
                break  # a full Gauss-Newton step needs no fallback
        if best is None:
            break
        gain = energy - best[0]
        energy, pos, quat, rot, d, grad, ok = best
        if gain < rel_tol * (energy + gain):
            break
    obj.position, obj.orient = pos, quat
    return obj.position - start


def contact_wrench(contacts: list[Contact], obj: ObjectState):
    """Net force (contacts plus weight) and torque about the object's center of mass."""
    force = np.array([0.0, 0.0, -obj.mass * GRAVITY])
    torque = np.zeros(3)
    for c in contacts:
        f = c.force_on_object()
        force = force + f
        torque = torque + np.cross(c.point - obj.position, f)
    return force, torque


def friction_cone_check(contacts: list[Contact], mu: float) -> bool:
    """True iff there is at least one contact and every contact sticks inside its cone."""
    if not contacts:
        return False
    for c in contacts:
        if c.sliding or float(np.linalg.norm(c.f_tangent)) > mu * c.f_normal:
            return False
    return True
