"""Rotary position encodings.

Two angle sources feed the same pairwise rotation:

* ``rope_angles``: absolute token index times each pair's frequency.
* ``redre_angles``: elapsed time (in units of ``tau`` seconds) times each
  pair's frequency.  Rotating every token by its offset from a common
  reference makes query/key inner products depend only on the time
  difference between the two transactions.

``build_rotation_matrix`` materialises the full block-diagonal matrix and
exists as a slow oracle for ``rotate_pairs``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels


class PositionMode(str, enum.Enum):
    NONE = "none"
    SINUSOIDAL = "sinusoidal"
    ROPE = "rope"
    REDRE = "redre"

    @classmethod
    def parse(cls, value) -> PositionMode:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown position mode {value!r}; expected one of {[m.value for m in cls]}"
            ) from None

    @property
    def rotary(self) -> bool:
        return self in (PositionMode.ROPE, PositionMode.REDRE)


@dataclass(frozen=True)
class FrequencySchedule:
    head_dim: int
    base: float
    omegas: np.ndarray

    def __len__(self):
        return len(self.omegas)


def frequency_schedule(head_dim: int, base: float = 10000.0) -> FrequencySchedule:
    """Geometric per-pair frequencies ``base ** (-2k / head_dim)``, k = 0 .. head_dim/2 - 1."""
    if head_dim < 2 or head_dim % 2:
        raise ValueError(f"head_dim must be even and >= 2, got {head_dim}")
    if not base > 1:
        raise ValueError(f"base must exceed 1, got {base}")
    k = np.arange(head_dim // 2, dtype=np.float64)
    omegas = base ** (-2.0 * k / head_dim)
    omegas.setflags(write=False)
    return FrequencySchedule(head_dim, float(base), omegas)


def rope_angles(position, sched: FrequencySchedule) -> np.ndarray:
    """Angles for integer position(s); a trailing pair axis is appended.

    Negative positions are accepted so relative offsets can be expressed.
    """
    position = np.asarray(position, dtype=np.float64)
    return position[..., None] * sched.omegas


def redre_angles(delta_t, sched: FrequencySchedule, tau: float) -> np.ndarray:
    """Angles for time offsets in seconds: ``(delta_t / tau) * omega``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    delta_t = np.asarray(delta_t, dtype=np.float64)
    if not np.all(np.isfinite(delta_t)):
        raise ValueError("delta_t must be finite")
    return (delta_t / tau)[..., None] * sched.omegas


def rotate_pairs(v, angles) -> np.ndarray:
    """Rotate each pair ``(v[2i], v[2i+1])`` by ``angles[i]``.

    ``v`` may carry leading axes; ``angles`` must broadcast against
    ``v.shape[:-1] + (v.shape[-1] // 2,)``.
    """
    v = np.asarray(v, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    if v.shape[-1] != 2 * angles.shape[-1]:
        raise ValueError(
            f"vector length {v.shape[-1]} does not match 2 x {angles.shape[-1]} angles"
        )
    pshape = v.shape[:-1] + (angles.shape[-1],)
    angles = np.broadcast_to(angles, pshape)
    flat = np.ascontiguousarray(v).reshape(-1, v.shape[-1])
    cos = np.ascontiguousarray(np.cos(angles)).reshape(-1, pshape[-1])
    sin = np.ascontiguousarray(np.sin(angles)).reshape(-1, pshape[-1])
    return _kernels.rotate(flat, cos, sin).reshape(v.shape)


def build_rotation_matrix(angles) -> np.ndarray:
    """Block-diagonal matrix with a 2x2 rotation block per angle."""
    angles = np.asarray(angles, dtype=np.float64).ravel()
    if angles.size == 0:
        raise ValueError("angles must be nonempty")
    n = 2 * angles.size
    R = np.zeros((n, n))
    for i, theta in enumerate(angles):
        c, s = math.cos(theta), math.sin(theta)
        R[2 * i, 2 * i] = c
        R[2 * i, 2 * i + 1] = -s
        R[2 * i + 1, 2 * i] = s
        R[2 * i + 1, 2 * i + 1] = c
    return R


def sinusoidal_table(length: int, dim: int, base: float = 10000.0) -> np.ndarray:
    """Additive sin/cos position table of shape ``(length, dim)``."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: dim // 2])
    return table


def sequence_angles(mode: PositionMode, sched: FrequencySchedule, timestamps=None,
                    length: int | None = None, tau: float = 3600.0) -> np.ndarray | None:
    """Per-token rotation angles for a (batch of) sequence(s).

    ROPE uses the token index; REDRE uses ``t_i - t_0`` with ``t_0`` the first
    timestamp of each sequence.  Returns None for non-rotary modes.
    """
    mode = PositionMode.parse(mode)
    if mode is PositionMode.ROPE:
        if length is None:
            length = np.asarray(timestamps).shape[-1]
        return rope_angles(np.arange(length), sched)
    if mode is PositionMode.REDRE:
        if timestamps is None:
            raise ValueError("REDRE mode requires timestamps")
        t = np.asarray(timestamps, dtype=np.float64)
        return redre_angles(t - t[..., :1], sched, tau)
    return None
