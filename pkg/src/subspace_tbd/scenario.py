"""Room geometry, microphone placement, activity schedules and ground truth.

Kinematic states are plain float arrays whose last axis is
``(px, py, vx, vy)``.  A multi-target state is an ``(N, 4)`` array with one
row per target slot, a trajectory is ``(T, N, 4)`` and an activity schedule
is a ``(T, N)`` array of 0/1 flags.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationFailedError


@dataclass(frozen=True)
class RoomConfig:
    width: float = 3.0
    height: float = 3.0
    speed_of_sound: float = 343.0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("room dimensions must be positive")
        if not self.speed_of_sound > 0:
            raise ValueError("speed of sound must be positive")

    @property
    def perimeter(self) -> float:
        return 2.0 * (self.width + self.height)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.width / 2.0, self.height / 2.0])

    def contains(self, positions) -> np.ndarray:
        """Inside-or-on-boundary test over the last axis of ``positions``."""
        p = np.asarray(positions, dtype=float)
        return ((p[..., 0] >= 0.0) & (p[..., 0] <= self.width)
                & (p[..., 1] >= 0.0) & (p[..., 1] <= self.height))

    def distance_outside(self, positions) -> np.ndarray:
        """Euclidean distance to the room rectangle (zero inside)."""
        p = np.asarray(positions, dtype=float)
        dx = np.maximum(np.maximum(-p[..., 0], p[..., 0] - self.width), 0.0)
        dy = np.maximum(np.maximum(-p[..., 1], p[..., 1] - self.height), 0.0)
        return np.hypot(dx, dy)


@dataclass(frozen=True)
class MicArray:
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError("mic positions must be an (M, 2) array with M >= 1")
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        if np.any(d[np.triu_indices(len(pos), 1)] == 0.0):
            raise ValueError("mic positions must be pairwise distinct")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.positions)


def build_perimeter_array(room: RoomConfig, m: int) -> MicArray:
    """Place ``m`` mics at equal arc length along the room boundary.

    The walk starts at corner (0, 0) and runs counter-clockwise.
    """
    if m < 1:
        raise ValueError("need at least one microphone")
    w, h = room.width, room.height
    pts = []
    for k in range(m):
        s = k * room.perimeter / m
        if s < w:
            pts.append((s, 0.0))
        elif s < w + h:
            pts.append((w, s - w))
        elif s < 2 * w + h:
            pts.append((w - (s - w - h), h))
        else:
            pts.append((0.0, h - (s - 2 * w - h)))
    return MicArray(np.array(pts))


@dataclass(frozen=True)
class MotionModel:
    """Nearly-constant-velocity model with white acceleration noise of std ``q``."""

    dt: float = 0.128
    q: float = 0.09

    @property
    def A(self) -> np.ndarray:
        a = np.eye(4)
        a[0, 2] = a[1, 3] = self.dt
        return a

    @property
    def B(self) -> np.ndarray:
        return np.vstack([0.5 * self.dt ** 2 * np.eye(2), self.dt * np.eye(2)])


def ncv_propagate(state, model: MotionModel, noise=None) -> np.ndarray:
    """Advance ``state`` (shape ``(..., 4)``) by one step.

    ``noise`` is a standard normal draw of shape ``(..., 2)``; it is scaled
    by ``model.q`` before entering through ``B``.  ``None`` means noiseless.
    """
    x = np.asarray(state, dtype=float)
    dt = model.dt
    out = np.empty(np.broadcast_shapes(x.shape), dtype=float)
    out[..., 0] = x[..., 0] + dt * x[..., 2]
    out[..., 1] = x[..., 1] + dt * x[..., 3]
    out[..., 2] = x[..., 2]
    out[..., 3] = x[..., 3]
    if noise is not None:
        u = model.q * np.asarray(noise, dtype=float)
        out[..., 0:2] += 0.5 * dt * dt * u
        out[..., 2:4] += dt * u
    return out


@dataclass(frozen=True)
class BirthModel:
    room: RoomConfig = field(default_factory=RoomConfig)
    velocity_std: float = 0.5

    def __post_init__(self):
        if self.velocity_std < 0:
            raise ValueError("velocity_std must be non-negative")

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.room.width / 2.0, self.room.height / 2.0, 0.0, 0.0])


def sample_birth(birth: BirthModel, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw birth states: uniform position in the room, Gaussian velocity.

    Returns shape ``(4,)`` when ``size`` is None, else ``(*size, 4)``.
    """
    shape = () if size is None else tuple(np.atleast_1d(size))
    extent = np.array([birth.room.width, birth.room.height])
    pos = rng.uniform(size=shape + (2,)) * extent
    vel = rng.normal(0.0, birth.velocity_std, size=shape + (2,))
    return np.concatenate([pos, vel], axis=-1)


def activity_from_intervals(n_frames: int, intervals) -> np.ndarray:
    """Build a ``(T, N)`` schedule from per-slot lists of ``[start, stop)`` frames."""
    act = np.zeros((n_frames, len(intervals)), dtype=np.uint8)
    for n, segs in enumerate(intervals):
        for start, stop in segs:
            if not 0 <= start <= stop <= n_frames:
                raise ValueError(f"interval [{start}, {stop}) outside 0..{n_frames}")
            act[start:stop, n] = 1
    return act


def two_target_activity(n_frames: int = 200, second_onset: int = 100) -> np.ndarray:
    """One target from frame 0, a second one from ``second_onset`` on."""
    return activity_from_intervals(
        n_frames, [[(0, n_frames)], [(second_onset, n_frames)]])


def active_segments(column) -> list[tuple[int, int]]:
    """Maximal runs of ones in a 0/1 vector, as ``[start, stop)`` pairs."""
    a = np.concatenate([[0], np.asarray(column, dtype=np.int8), [0]])
    edges = np.flatnonzero(np.diff(a))
    return [(int(s), int(e)) for s, e in zip(edges[0::2], edges[1::2])]


def _sample_segment(length, room, motion, birth, rng, max_attempts, batch=256):
    attempts = 0
    while attempts < max_attempts:
        b = min(batch, max_attempts - attempts)
        traj = np.empty((b, length, 4))
        traj[:, 0] = sample_birth(birth, rng, b)
        noise = rng.standard_normal((b, length - 1, 2))
        for k in range(1, length):
            traj[:, k] = ncv_propagate(traj[:, k - 1], motion, noise[:, k - 1])
        ok = room.contains(traj[..., :2]).all(axis=1)
        if ok.any():
            return traj[int(np.argmax(ok))]
        attempts += b
    raise GenerationFailedError(
        f"no in-room trajectory of length {length} after {max_attempts} attempts")


def generate_truth(room: RoomConfig, activity, motion: MotionModel, birth: BirthModel,
                   rng: np.random.Generator, max_attempts: int = 10_000) -> np.ndarray:
    """Sample a ``(T, N, 4)`` ground-truth trajectory consistent with ``activity``.

    Each run of valid frames of a slot starts from a birth draw and follows
    the NCV model; the whole run is redrawn until it stays in the room.
    Slots and runs are independent, so rejecting them one at a time samples
    the same distribution as rejecting the full multi-target trajectory.
    Invalid frames hold the slot's last state (zeros before its first birth).
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    act = np.asarray(activity)
    n_frames, n_slots = act.shape
    truth = np.zeros((n_frames, n_slots, 4))
    for n in range(n_slots):
        last = np.zeros(4)
        cursor = 0
        for start, stop in active_segments(act[:, n]):
            truth[cursor:start, n] = last
            truth[start:stop, n] = _sample_segment(
                stop - start, room, motion, birth, rng, max_attempts)
            last = truth[stop - 1, n]
            cursor = stop
        truth[cursor:, n] = last
    return truth
