"""SO(3)/SE(3) primitives and frame bookkeeping.

Conventions:
    - ``R_AB`` rotates vectors expressed in {B} into {A}.
    - ``T_AB = (R_AB, t_AB)`` maps a point from {B} to {A}: ``p_A = R_AB p_B + t_AB``.
    - Quaternions are scalar-first ``(w, x, y, z)`` unless a function says otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

ROTATION_TOL = 1e-9
_SMALL_ANGLE = 1e-8


class FrameTag(str, enum.Enum):
    """Coordinate frames: camera, vision (first camera), inertial (body), world."""

    C = "C"
    V = "V"
    I = "I"  # noqa: E741
    W = "W"


@dataclass(frozen=True)
class FrameId:
    """A frame tag with an optional timestamp for time-varying frames.

    {V} coincides with {C} at t=0 and {W} with {I} at t=0; these are recorded
    conventions only and are never checked.
    """

    tag: FrameTag
    timestamp_ns: int | None = None

    def __str__(self):
        if self.timestamp_ns is None:
            return f"{{{self.tag.value}}}"
        return f"{{{self.tag.value}}}@{self.timestamp_ns}"


def as_vec3(v, name="vector") -> np.ndarray:
    """Return ``v`` as a finite float64 array of shape (3,)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,):
        raise InvalidInputError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite components: {arr}")
    return arr


def is_rotation(R, tol=ROTATION_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def as_rotation(R, name="rotation", tol=ROTATION_TOL) -> np.ndarray:
    """Validate and return a 3x3 rotation matrix as float64."""
    arr = np.asarray(R, dtype=np.float64)
    if not is_rotation(arr, tol):
        raise InvalidInputError(f"{name} is not a valid rotation matrix")
    return arr


def wedge(v) -> np.ndarray:
    """Skew-symmetric matrix ``[v]^`` such that ``wedge(v) @ w == cross(v, w)``."""
    x, y, z = as_vec3(v)
    return np.array(
        [
            [0.0, -z, y],
            [z, 0.0, -x],
            [-y, x, 0.0],
        ]
    )


def exp_so3(v) -> np.ndarray:
    """Exponential map so(3) -> SO(3) via Rodrigues' formula.

    Below an angle of 1e-8 rad the second-order Taylor expansion
    ``I + W + W^2/2`` is used instead.
    """
    v = as_vec3(v, "rotation vector")
    W = wedge(v)
    theta = float(np.linalg.norm(v))
    if theta < _SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def quat_to_rot(q) -> np.ndarray:
    """Rotation matrix of a scalar-first quaternion.

    The quaternion need not be exactly unit: the homogeneous form divides by
    its squared norm, so the result is orthonormal for any nonzero input.
    """
    w, x, y, z = np.asarray(q, dtype=np.float64)
    n = w * w + x * x + y * y + z * z
    if not np.isfinite(n) or n == 0.0:
        raise InvalidInputError(f"degenerate quaternion {q}")
    s = 2.0 / n
    return np.array(
        [
            [1.0 - s * (y * y + z * z), s * (x * y - z * w), s * (x * z + y * w)],
            [s * (x * y + z * w), 1.0 - s * (x * x + z * z), s * (y * z - x * w)],
            [s * (x * z - y * w), s * (y * z + x * w), 1.0 - s * (x * x + y * y)],
        ]
    )


def rot_to_quat(R) -> np.ndarray:
    """Scalar-first unit quaternion with ``w >= 0`` (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class RigidTransform:
    """Rigid transform ``T_AB`` mapping points from {B} into {A}."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = as_rotation(self.rotation).copy()
        t = as_vec3(self.translation, "translation").copy()
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, M) -> RigidTransform:
        """Build from a 4x4 homogeneous or 3x4 ``[R|t]`` matrix."""
        M = np.asarray(M, dtype=np.float64)
        if M.shape not in ((4, 4), (3, 4)):
            raise InvalidInputError(f"expected 3x4 or 4x4 matrix, got {M.shape}")
        return cls(M[:3, :3].copy(), M[:3, 3].copy())

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``T_AB.compose(T_BC) == T_AC``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def apply(self, p) -> np.ndarray:
        """Transform a point (shape (3,)) or a stack of points (shape (n, 3))."""
        p = np.asarray(p, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation @ as_vec3(p, "point") + self.translation
        return p @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def to_world(p, calib: RigidTransform) -> np.ndarray:
    """Map a vision-frame point into the world frame with the camera-IMU transform.

    Applies rotation then translation: ``p_W = R_IC p_V + t_IC``. Accepts a single
    point or an (n, 3) stack.
    """
    return calib.apply(p)
