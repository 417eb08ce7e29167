"""Planar rigid-body dynamics with penalty contact for the two task scenes.

Units are SI (m, s, kg, rad). Integration is semi-implicit Euler: velocities are
updated from forces first, then poses from the new velocities.

Block insertion
    A single gripped block driven by a velocity servo, contacting a chamfered
    slot (two walls and a floor) through spring-damper penalty forces at
    vertices. The sensed wrench is the net contact force and torque about the
    block centre.

Latch door
    A hinged door (1 DoF) with a spring-return handle (1 DoF) at its tip. The
    gripper body is servo-driven and coupled to the handle by a linear grasp
    spring and a torsional spring. The door is held by a latch until the handle
    is turned past ``LATCH_RELEASE``. The sensed wrench is the grasp coupling
    force and torque acting on the gripper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import TunnelingError, ValidationError
from . import geometry

BLOCK = "block-insertion"
DOOR = "latch-door"
KINDS = (BLOCK, DOOR)

DT = 0.01
CONTACT_K = 500.0  # N/m
CONTACT_D = 10.0  # N*s/m
TANGENT_D = 2.0  # N*s/m, viscous tangential damping
PENETRATION_CAP = 0.03  # m, ~3x the deepest steady contact
SERVO_GAIN = 20.0  # 1/s
MAX_LINEAR_SPEED = 0.25  # m/s at |action| = 1
MAX_ANGULAR_SPEED = 1.0  # rad/s at |action| = 1
# reach limits of the arm (x0, x1, y0, y1). Past a limit the outward command is dropped;
# the servo then stops the body within ~1.3 cm, so a held block stays inside the view.
WORKSPACE = (-0.23, 0.23, -0.10, 0.38)

# block-insertion scene
BLOCK_SIZE = 0.1
BLOCK_MASS = 1.0
BLOCK_INERTIA = 0.01  # block plus wrist
SLOT_TOP = 0.0
SLOT_DEPTH = 0.1
SLOT_HALF_WIDTH = 0.07
DEPTH_THRESHOLD = 0.8 * SLOT_DEPTH

# latch-door scene
HINGE = (-0.2, 0.0)
DOOR_LENGTH = 0.35
DOOR_THICKNESS = 0.03
DOOR_INERTIA = 0.08
DOOR_DAMPING = 0.3
DOOR_MAX = math.pi / 2
HANDLE_LENGTH = 0.08
HANDLE_INERTIA = 0.001
HANDLE_SPRING = 0.05
HANDLE_DAMPING = 0.01
HANDLE_LIMIT_K = 2.0
HANDLE_LIMIT_D = 0.05
HANDLE_MAX = math.pi / 2
LATCH_GAP = 0.005
LATCH_RELEASE = math.radians(40.0)
GRIPPER_SIZE = 0.04
GRIPPER_MASS = 2.0
GRIPPER_INERTIA = 0.01
GRASP_K = 200.0
GRASP_D = 5.0
GRASP_KT = 0.5
GRASP_DT = 0.005
LATCH_THRESHOLD = math.radians(45.0)
OPEN_THRESHOLD = math.radians(30.0)

STATIC_GEOMETRY: dict[str, tuple[np.ndarray, ...]] = {
    "slot-v1": (
        np.array([[-0.30, -0.10], [-0.07, -0.10], [-0.07, -0.02], [-0.09, 0.00], [-0.30, 0.00]]),
        np.array([[0.07, -0.10], [0.30, -0.10], [0.30, 0.00], [0.09, 0.00], [0.07, -0.02]]),
        np.array([[-0.30, -0.15], [0.30, -0.15], [0.30, -0.10], [-0.30, -0.10]]),
    ),
    "door-v1": (
        np.array([[-0.30, -0.06], [-0.22, -0.06], [-0.22, 0.02], [-0.30, 0.02]]),
        np.array([[0.17, -0.06], [0.22, -0.06], [0.22, 0.00], [0.17, 0.00]]),
    ),
}
GEOMETRY_FOR_KIND = {BLOCK: "slot-v1", DOOR: "door-v1"}
_STATIC_BOUNDS = {
    gid: [(p[:, 0].min(), p[:, 0].max(), p[:, 1].min(), p[:, 1].max()) for p in polys]
    for gid, polys in STATIC_GEOMETRY.items()
}


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EnvState:
    """Full simulator state.

    ``poses``/``vels`` hold one (x, y, angle) row per body. Body 0 is always the
    gripper frame (the gripped block in the insertion scene). In the door scene
    rows 1 and 2 are the door (hinge position, door angle) and the handle (door
    tip, absolute handle angle).
    """

    kind: str
    poses: np.ndarray
    vels: np.ndarray
    attach: np.ndarray
    step: int = 0
    geometry_id: str = field(default="")

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown env kind {self.kind!r}")
        object.__setattr__(self, "poses", _frozen(self.poses))
        object.__setattr__(self, "vels", _frozen(self.vels))
        object.__setattr__(self, "attach", _frozen(self.attach))
        if not self.geometry_id:
            object.__setattr__(self, "geometry_id", GEOMETRY_FOR_KIND[self.kind])
        if self.step < 0:
            raise ValidationError("step counter must be non-negative")

    @property
    def gripper_pose(self) -> np.ndarray:
        return self.poses[0]

    @property
    def gripper_vel(self) -> np.ndarray:
        return self.vels[0]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.poses).all() and np.isfinite(self.vels).all()
                    and np.isfinite(self.attach).all())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.poses.ravel(), self.vels.ravel(), self.attach, [self.step]])

    @classmethod
    def from_vector(cls, kind: str, vec: np.ndarray) -> EnvState:
        nb = n_bodies(kind)
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (state_dim(kind),):
            raise ValidationError(f"state vector for {kind} must have length {state_dim(kind)}")
        poses = vec[: 3 * nb].reshape(nb, 3)
        vels = vec[3 * nb : 6 * nb].reshape(nb, 3)
        return cls(kind, poses, vels, vec[6 * nb : 6 * nb + 2], int(vec[-1]))

    def same_as(self, other: EnvState) -> bool:
        return self.kind == other.kind and self.to_vector().tobytes() == other.to_vector().tobytes()


def n_bodies(kind: str) -> int:
    return 1 if kind == BLOCK else 3


def state_dim(kind: str) -> int:
    return 6 * n_bodies(kind) + 3


def clamp_action(action) -> np.ndarray:
    """Validate and clamp a planar velocity command (vx, vy, omega) to [-1, 1]."""
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ValidationError(f"action must have 3 components, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValidationError("action contains non-finite values")
    return np.clip(a, -1.0, 1.0)


# ------------------------------------------------------------------ scenes


def door_tip(door_angle: float) -> tuple[float, float]:
    return (HINGE[0] + DOOR_LENGTH * math.cos(door_angle),
            HINGE[1] + DOOR_LENGTH * math.sin(door_angle))


def block_state(x: float, y: float, angle: float, vel=(0.0, 0.0, 0.0), step: int = 0) -> EnvState:
    return EnvState(BLOCK, [[x, y, angle]], [list(vel)], [x, y], step)


def door_state(door_angle: float, handle_angle: float, gripper=None, step: int = 0) -> EnvState:
    """Door scene at rest with the gripper on the grasp point unless given."""
    tx, ty = door_tip(door_angle)
    absolute = door_angle + handle_angle
    if gripper is None:
        gripper = (tx, ty, absolute)
    poses = [list(gripper), [HINGE[0], HINGE[1], door_angle], [tx, ty, absolute]]
    return EnvState(DOOR, poses, np.zeros((3, 3)), [tx, ty], step)


def initial_state(kind: str, rng: np.random.Generator) -> EnvState:
    if kind == BLOCK:
        x = 0.15 + rng.uniform(-0.03, 0.03)
        y = 0.20 + rng.uniform(-0.02, 0.02)
        return block_state(x, y, rng.uniform(-0.1, 0.1))
    if kind == DOOR:
        tx, ty = door_tip(0.0)
        return door_state(0.0, 0.0, gripper=(tx, ty, rng.uniform(-0.02, 0.02)))
    raise ValidationError(f"unknown env kind {kind!r}")


def goal_state(kind: str, eps: float = 1e-3) -> EnvState:
    """Analytic state just past the success thresholds."""
    if kind == BLOCK:
        bottom = SLOT_TOP - DEPTH_THRESHOLD - eps
        return block_state(0.0, bottom + BLOCK_SIZE / 2, 0.0)
    return door_state(OPEN_THRESHOLD + eps, LATCH_THRESHOLD + eps)


def insertion_depth(state: EnvState) -> float:
    x, y, a = state.poses[0]
    corners = geometry.box(x, y, a, BLOCK_SIZE, BLOCK_SIZE)
    return SLOT_TOP - float(corners[:, 1].min())


def door_angles(state: EnvState) -> tuple[float, float]:
    """(door angle, handle angle relative to the door)."""
    door = float(state.poses[1, 2])
    return door, float(state.poses[2, 2]) - door


def success(state: EnvState) -> bool:
    if not state.is_finite():
        raise ValidationError("state contains non-finite values")
    if state.kind == BLOCK:
        x = state.poses[0, 0]
        return abs(x) < SLOT_HALF_WIDTH and insertion_depth(state) >= DEPTH_THRESHOLD
    door, handle = door_angles(state)
    return handle >= LATCH_THRESHOLD and door >= OPEN_THRESHOLD


# ------------------------------------------------------------------ dynamics


def _penalty(depth: float, rate: float) -> float:
    if depth > PENETRATION_CAP:
        raise TunnelingError(f"penetration {depth:.4f} m exceeds cap; reduce dt")
    return max(0.0, CONTACT_K * depth + CONTACT_D * rate)


def normal_force(depth: float, rate: float) -> float:
    """Spring-damper normal force magnitude, never negative."""
    return _penalty(depth, rate)


def block_contacts(state: EnvState) -> tuple[np.ndarray, float]:
    """Net contact force and torque (about the block centre) on the block."""
    x, y, a = (float(v) for v in state.poses[0])
    vx, vy, w = (float(v) for v in state.vels[0])
    corners = geometry.box(x, y, a, BLOCK_SIZE, BLOCK_SIZE)
    cx0, cx1 = corners[:, 0].min(), corners[:, 0].max()
    cy0, cy1 = corners[:, 1].min(), corners[:, 1].max()
    fx = fy = tau = 0.0
    polys = STATIC_GEOMETRY[state.geometry_id]
    for poly, (px0, px1, py0, py1) in zip(polys, _STATIC_BOUNDS[state.geometry_id]):
        if cx1 <= px0 or cx0 >= px1 or cy1 <= py0 or cy0 >= py1:
            continue
        # block vertices inside the static polygon
        for px, py in corners:
            hit = geometry.penetration(np.array([px, py]), poly)
            if hit is None:
                continue
            depth, n = hit
            rx, ry = px - x, py - y
            pvx, pvy = vx - w * ry, vy + w * rx
            vn = pvx * n[0] + pvy * n[1]
            f = _penalty(depth, -vn)
            ftx = -TANGENT_D * (pvx - vn * n[0])
            fty = -TANGENT_D * (pvy - vn * n[1])
            ax, ay = f * n[0] + ftx, f * n[1] + fty
            fx += ax
            fy += ay
            tau += rx * ay - ry * ax
        # static vertices inside the block
        for px, py in poly:
            hit = geometry.penetration(np.array([px, py]), corners)
            if hit is None:
                continue
            depth, n = hit  # n: outward normal of the block face nearest the vertex
            rx, ry = px - x, py - y
            pvx, pvy = vx - w * ry, vy + w * rx
            vn = pvx * n[0] + pvy * n[1]
            f = _penalty(depth, vn)
            ftx = -TANGENT_D * (pvx - vn * n[0])
            fty = -TANGENT_D * (pvy - vn * n[1])
            ax, ay = -f * n[0] + ftx, -f * n[1] + fty
            fx += ax
            fy += ay
            tau += rx * ay - ry * ax
    return np.array([fx, fy]), tau


def _validate(state: EnvState, action, dt: float) -> np.ndarray:
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and dt > 0):
        raise ValidationError(f"dt must be a positive finite number, got {dt!r}")
    if not state.is_finite():
        raise ValidationError("state contains non-finite values")
    return clamp_action(action)


def reach_limited(x: float, y: float, ux: float, uy: float) -> tuple[float, float]:
    """Drop the commanded velocity components that would push the gripper past its reach."""
    x0, x1, y0, y1 = WORKSPACE
    if (x >= x1 and ux > 0) or (x <= x0 and ux < 0):
        ux = 0.0
    if (y >= y1 and uy > 0) or (y <= y0 and uy < 0):
        uy = 0.0
    return ux, uy


def step_env(state: EnvState, action, dt: float = DT) -> tuple[EnvState, np.ndarray]:
    """Advance one step. Returns the next state and the sensed (fx, fy, torque)."""
    act = _validate(state, action, dt)
    if state.kind == BLOCK:
        return _step_block(state, act, dt)
    return _step_door(state, act, dt)


def _step_block(state: EnvState, act: np.ndarray, dt: float) -> tuple[EnvState, np.ndarray]:
    x, y, a = (float(v) for v in state.poses[0])
    vx, vy, w = (float(v) for v in state.vels[0])
    (cfx, cfy), ctau = block_contacts(state)
    ux, uy = reach_limited(x, y, MAX_LINEAR_SPEED * act[0], MAX_LINEAR_SPEED * act[1])
    fx = BLOCK_MASS * SERVO_GAIN * (ux - vx) + cfx
    fy = BLOCK_MASS * SERVO_GAIN * (uy - vy) + cfy
    tau = BLOCK_INERTIA * SERVO_GAIN * (MAX_ANGULAR_SPEED * act[2] - w) + ctau
    vx += dt * fx / BLOCK_MASS
    vy += dt * fy / BLOCK_MASS
    w += dt * tau / BLOCK_INERTIA
    x += dt * vx
    y += dt * vy
    a += dt * w
    nxt = EnvState(BLOCK, [[x, y, a]], [[vx, vy, w]], [x, y], state.step + 1, state.geometry_id)
    return nxt, np.array([cfx, cfy, ctau])


def _step_door(state: EnvState, act: np.ndarray, dt: float) -> tuple[EnvState, np.ndarray]:
    gx, gy, ga = (float(v) for v in state.poses[0])
    gvx, gvy, gw = (float(v) for v in state.vels[0])
    phi, dphi = float(state.poses[1, 2]), float(state.vels[1, 2])
    psi = float(state.poses[2, 2]) - phi
    dpsi = float(state.vels[2, 2]) - dphi

    c, s = math.cos(phi), math.sin(phi)
    tx, ty = HINGE[0] + DOOR_LENGTH * c, HINGE[1] + DOOR_LENGTH * s
    tvx, tvy = -DOOR_LENGTH * s * dphi, DOOR_LENGTH * c * dphi

    # grasp coupling, acting on the gripper (reaction on the door/handle)
    gfx = -GRASP_K * (gx - tx) - GRASP_D * (gvx - tvx)
    gfy = -GRASP_K * (gy - ty) - GRASP_D * (gvy - tvy)
    gtau = -GRASP_KT * (ga - (phi + psi)) - GRASP_DT * (gw - (dphi + dpsi))

    # door: reaction moment about the hinge, damping, latch / frame / limit stops
    rx, ry = tx - HINGE[0], ty - HINGE[1]
    door_tau = rx * (-gfy) - ry * (-gfx) - DOOR_DAMPING * dphi
    if psi < LATCH_RELEASE and phi > LATCH_GAP:
        door_tau -= DOOR_LENGTH * _penalty(DOOR_LENGTH * (phi - LATCH_GAP), DOOR_LENGTH * dphi)
    if phi < 0.0:
        door_tau += DOOR_LENGTH * _penalty(-DOOR_LENGTH * phi, -DOOR_LENGTH * dphi)
    if phi > DOOR_MAX:
        door_tau -= DOOR_LENGTH * _penalty(DOOR_LENGTH * (phi - DOOR_MAX), DOOR_LENGTH * dphi)

    # handle: torsional reaction, return spring, joint limits
    handle_tau = -gtau - HANDLE_SPRING * psi - HANDLE_DAMPING * dpsi
    if psi < 0.0:
        handle_tau += max(0.0, HANDLE_LIMIT_K * -psi - HANDLE_LIMIT_D * dpsi)
    if psi > HANDLE_MAX:
        handle_tau -= max(0.0, HANDLE_LIMIT_K * (psi - HANDLE_MAX) + HANDLE_LIMIT_D * dpsi)

    ux, uy = reach_limited(gx, gy, MAX_LINEAR_SPEED * act[0], MAX_LINEAR_SPEED * act[1])
    fx = GRIPPER_MASS * SERVO_GAIN * (ux - gvx) + gfx
    fy = GRIPPER_MASS * SERVO_GAIN * (uy - gvy) + gfy
    tau = GRIPPER_INERTIA * SERVO_GAIN * (MAX_ANGULAR_SPEED * act[2] - gw) + gtau

    gvx += dt * fx / GRIPPER_MASS
    gvy += dt * fy / GRIPPER_MASS
    gw += dt * tau / GRIPPER_INERTIA
    dphi += dt * door_tau / DOOR_INERTIA
    dpsi += dt * handle_tau / HANDLE_INERTIA
    gx += dt * gvx
    gy += dt * gvy
    ga += dt * gw
    phi += dt * dphi
    psi += dt * dpsi

    tx, ty = door_tip(phi)
    c, s = math.cos(phi), math.sin(phi)
    tvx, tvy = -DOOR_LENGTH * s * dphi, DOOR_LENGTH * c * dphi
    poses = [[gx, gy, ga], [HINGE[0], HINGE[1], phi], [tx, ty, phi + psi]]
    vels = [[gvx, gvy, gw], [0.0, 0.0, dphi], [tvx, tvy, dphi + dpsi]]
    nxt = EnvState(DOOR, poses, vels, [tx, ty], state.step + 1, state.geometry_id)
    return nxt, np.array([gfx, gfy, gtau])


def kinetic_energy(state: EnvState) -> float:
    if state.kind == BLOCK:
        vx, vy, w = state.vels[0]
        return 0.5 * BLOCK_MASS * (vx * vx + vy * vy) + 0.5 * BLOCK_INERTIA * w * w
    gvx, gvy, gw = state.vels[0]
    dphi = state.vels[1, 2]
    dabs = state.vels[2, 2]
    return (0.5 * GRIPPER_MASS * (gvx * gvx + gvy * gvy) + 0.5 * GRIPPER_INERTIA * gw * gw
            + 0.5 * DOOR_INERTIA * dphi * dphi + 0.5 * HANDLE_INERTIA * (dabs - dphi) ** 2)


def body_polygons(state: EnvState) -> list[tuple[np.ndarray, float, float]]:
    """(polygon, intensity, depth) for every drawable body, static geometry first."""
    out = [(poly, 0.4, 0.3) for poly in STATIC_GEOMETRY[state.geometry_id]]
    if state.kind == BLOCK:
        x, y, a = state.poses[0]
        out.append((geometry.box(x, y, a, BLOCK_SIZE, BLOCK_SIZE), 1.0, 0.7))
        return out
    phi = state.poses[1, 2]
    tx, ty, habs = state.poses[2]
    out.append((geometry.segment_box(HINGE[0], HINGE[1], phi, DOOR_LENGTH, DOOR_THICKNESS), 0.6, 0.5))
    out.append((geometry.segment_box(tx, ty, habs - math.pi / 2, HANDLE_LENGTH, 0.02), 0.8, 0.7))
    gx, gy, ga = state.poses[0]
    out.append((geometry.box(gx, gy, ga, GRIPPER_SIZE, GRIPPER_SIZE), 1.0, 0.9))
    return out
