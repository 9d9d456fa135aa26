"""Square peg / toleranced slot with penalty contact.

The socket is a square bore of half-width ``hole_half_width`` cut into the
plane ``z = socket_center[2]``, with a 45 degree chamfer of depth
``chamfer_depth`` at the mouth.  The peg tip is the body origin; contact is
evaluated on the peg cross-section in the socket frame, so orientation does
not enter the contact force.

With ``delta`` the depth of the tip below the surface and ``pen_a`` the
lateral overlap of the peg with the wall along axis ``a``:

* lateral force  ``k * min(pen_a, max(0, delta - pen_a))`` towards the bore axis
* normal force   ``k * min(delta, max(0, max_a pen_a - delta))`` upwards
* floor force    ``k * max(0, delta - hole_depth)`` upwards

Each piece is a min/max of linear functions, so the spring part is
continuous and Lipschitz with constant below :data:`LIPSCHITZ_FACTOR` times
``contact_stiffness``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..geometry import Pose, Wrench

LIPSCHITZ_FACTOR = 5.0
# penetration over which contact damping ramps in
_DAMPING_RAMP = 1e-4


@dataclass(frozen=True)
class SceneConfig:
    socket_center: tuple = (0.5, 0.0, 0.0)
    socket_offset_range: tuple = (-0.05, 0.05)
    hole_half_width: float = 0.0055
    chamfer_depth: float = 0.001
    peg_half_width: float = 0.005
    hole_depth: float = 0.02
    contact_stiffness: float = 1e5
    contact_damping: float = 100.0
    insertion_depth_success: float = 0.008
    start_height: float = 0.30
    start_yaw_deg: float = 15.0
    rng_seed: int = 0
    # measurement noise and episode termination
    force_noise: float = 0.3
    torque_noise: float = 0.03
    jam_force: float = 5.0
    jam_window: float = 1.0
    jam_progress: float = 5e-4
    max_time: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "socket_center", tuple(float(c) for c in self.socket_center))
        object.__setattr__(self, "socket_offset_range", tuple(float(c) for c in self.socket_offset_range))
        if not self.clearance > 0.0:
            raise ValueError("hole_half_width must exceed peg_half_width")
        if self.contact_stiffness <= 0.0 or self.contact_damping < 0.0:
            raise ValueError("contact stiffness must be positive, damping nonnegative")

    @property
    def clearance(self) -> float:
        return self.hole_half_width - self.peg_half_width

    @property
    def lipschitz_constant(self) -> float:
        return LIPSCHITZ_FACTOR * self.contact_stiffness

    def with_socket(self, center) -> "SceneConfig":
        return replace(self, socket_center=tuple(center))

    def sample_socket(self, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.socket_offset_range
        c = np.array(self.socket_center)
        c[1] += rng.uniform(lo, hi)
        return c

    def depth(self, p) -> float:
        """Depth of the peg tip below the socket surface (negative above it)."""
        return self.socket_center[2] - float(p[2])


def contact_force(scene: SceneConfig, px, py, pz, vx=0.0, vy=0.0, vz=0.0):
    """Scalar contact force ``(fx, fy, fz)`` on the peg tip."""
    cx, cy, cz = scene.socket_center
    delta = cz - pz
    if delta <= 0.0:
        return 0.0, 0.0, 0.0
    k = scene.contact_stiffness
    w = scene.hole_half_width + max(0.0, scene.chamfer_depth - delta)
    r = scene.peg_half_width
    ex, ey = px - cx, py - cy
    pen_x = max(0.0, abs(ex) + r - w)
    pen_y = max(0.0, abs(ey) + r - w)
    sx = min(pen_x, max(0.0, delta - pen_x))
    sy = min(pen_y, max(0.0, delta - pen_y))
    sz = min(delta, max(0.0, max(pen_x, pen_y) - delta)) + max(0.0, delta - scene.hole_depth)
    fx = -math.copysign(k * sx, ex) if sx > 0.0 else 0.0
    fy = -math.copysign(k * sy, ey) if sy > 0.0 else 0.0
    fz = k * sz
    c = scene.contact_damping
    if c > 0.0:
        # damping only resists motion into the wall and never pulls the peg back
        if fx != 0.0 and fx * vx < 0.0:
            fx -= c * vx * min(1.0, sx / _DAMPING_RAMP)
            fx = max(fx, 0.0) if ex < 0.0 else min(fx, 0.0)
        if fy != 0.0 and fy * vy < 0.0:
            fy -= c * vy * min(1.0, sy / _DAMPING_RAMP)
            fy = max(fy, 0.0) if ey < 0.0 else min(fy, 0.0)
        if fz > 0.0 and vz < 0.0:
            fz -= c * vz * min(1.0, sz / _DAMPING_RAMP)
    return fx, fy, fz


def contact_wrench(peg_pose: Pose, scene: SceneConfig, velocity=None) -> Wrench:
    """Penalty contact wrench on the peg; pure force, no moment about the tip."""
    v = (0.0, 0.0, 0.0) if velocity is None else tuple(float(x) for x in velocity[:3])
    f = contact_force(scene, float(peg_pose.p[0]), float(peg_pose.p[1]), float(peg_pose.p[2]), *v)
    return Wrench(f, (0.0, 0.0, 0.0))
