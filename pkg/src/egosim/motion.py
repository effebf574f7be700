"""Human-motion sequences: part-wise layout, synthetic generators, toy hand FK.

A motion frame is a flat 159-vector of axis-angle triplets laid out as
body+feet (66) | head (3) | hands (90, left 45 then right 45). The synthetic
generators produce temporally smooth sequences whose frame 0 is always the
rest pose, so sequences of different styles share an identical first frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import DimensionError, PreconditionError
from .rng import substream

BODY_DIM = 66
HEAD_DIM = 3
HAND_DIM = 45  # per hand
HANDS_DIM = 2 * HAND_DIM
FLAT_DIM = BODY_DIM + HEAD_DIM + HANDS_DIM  # 159

HAND_JOINTS = 16  # root + 15 chain joints, unit bone lengths
DEFAULT_FPS = 8.0
MAX_FRAME_DELTA = 0.2  # rad/frame smoothness bound at DEFAULT_FPS

STYLES = ("idle", "walk", "crouch", "wave")


@dataclass(frozen=True)
class MotionFrame:
    """One frame of human motion parameters, split by part group."""

    body_feet: np.ndarray
    head: np.ndarray
    hands: np.ndarray

    def __post_init__(self):
        bf = np.asarray(self.body_feet, dtype=np.float64).reshape(-1)
        hd = np.asarray(self.head, dtype=np.float64).reshape(-1)
        ha = np.asarray(self.hands, dtype=np.float64).reshape(-1)
        if bf.shape != (BODY_DIM,) or hd.shape != (HEAD_DIM,) or ha.shape != (HANDS_DIM,):
            raise DimensionError(
                f"group sizes must be {BODY_DIM}/{HEAD_DIM}/{HANDS_DIM}, "
                f"got {bf.size}/{hd.size}/{ha.size}"
            )
        if not (np.all(np.isfinite(bf)) and np.all(np.isfinite(hd)) and np.all(np.isfinite(ha))):
            raise PreconditionError("motion parameters must be finite")
        object.__setattr__(self, "body_feet", bf)
        object.__setattr__(self, "head", hd)
        object.__setattr__(self, "hands", ha)

    @property
    def left_hand(self) -> np.ndarray:
        return self.hands[:HAND_DIM]

    @property
    def right_hand(self) -> np.ndarray:
        return self.hands[HAND_DIM:]


def split_parts(flat: np.ndarray) -> MotionFrame:
    """Slice a flat 159-vector into its part groups (lossless)."""
    flat = np.asarray(flat, dtype=np.float64).reshape(-1)
    if flat.shape != (FLAT_DIM,):
        raise DimensionError(f"expected a {FLAT_DIM}-vector, got length {flat.size}")
    return MotionFrame(
        body_feet=flat[:BODY_DIM],
        head=flat[BODY_DIM : BODY_DIM + HEAD_DIM],
        hands=flat[BODY_DIM + HEAD_DIM :],
    )


def concat_parts(frame: MotionFrame) -> np.ndarray:
    """Inverse of split_parts."""
    return np.concatenate([frame.body_feet, frame.head, frame.hands])


@dataclass(frozen=True)
class MotionSequence:
    """A motion clip stored as a (k, 159) parameter array."""

    params: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != FLAT_DIM or p.shape[0] < 1:
            raise DimensionError(f"expected (k>=1, {FLAT_DIM}) params, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise PreconditionError("motion parameters must be finite")
        object.__setattr__(self, "params", p)

    def __len__(self) -> int:
        return self.params.shape[0]

    def frame(self, i: int) -> MotionFrame:
        return split_parts(self.params[i])

    @property
    def frames(self) -> list[MotionFrame]:
        return [self.frame(i) for i in range(len(self))]

    def heads(self) -> np.ndarray:
        """(k, 3) head axis-angle track."""
        return self.params[:, BODY_DIM : BODY_DIM + HEAD_DIM]

    def body(self) -> np.ndarray:
        return self.params[:, :BODY_DIM]

    def hands(self) -> np.ndarray:
        return self.params[:, BODY_DIM + HEAD_DIM :]

    def max_frame_delta(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.params, axis=0))))


def synth_motion(seed: int, k: int, style: str, fps: float = DEFAULT_FPS) -> MotionSequence:
    """Deterministic synthetic motion of the given style.

    Frame 0 is always the rest pose (all parameters zero) and adjacent-frame
    parameter deltas stay below MAX_FRAME_DELTA at the default frame rate.
    Styles:
        idle   -- frozen rest pose
        walk   -- sinusoidal leg/arm sway plus gentle head yaw
        crouch -- monotone downward head-pitch ramp with knee bend
        wave   -- right-hand articulation, head still
    """
    if k < 1:
        raise PreconditionError(f"frame count must be >= 1, got {k}")
    if style not in STYLES:
        raise PreconditionError(f"unknown style {style!r}; expected one of {STYLES}")
    rng = substream(seed, "motion", style)
    params = np.zeros((k, FLAT_DIM))
    n = np.arange(k, dtype=np.float64)

    if style == "idle":
        pass
    elif style == "walk":
        channels = rng.choice(BODY_DIM, size=6, replace=False)
        for ch in channels:
            amp = rng.uniform(0.10, 0.30)
            freq = rng.uniform(0.30, 0.60)
            params[:, ch] = amp * np.sin(2.0 * np.pi * freq * n / fps)
        yaw_amp = rng.uniform(0.06, 0.12)
        params[:, BODY_DIM + 1] = yaw_amp * np.sin(2.0 * np.pi * 0.30 * n / fps)
    elif style == "crouch":
        start = k // 4
        ramp_len = max(1, k // 2)
        rate = min(0.16, 0.55 / ramp_len)
        ramp = np.clip(n - start, 0.0, ramp_len)
        params[:, BODY_DIM + 0] = -rate * ramp  # head pitch, strictly monotone on the ramp
        knees = rng.choice(BODY_DIM, size=2, replace=False)
        for ch in knees:
            params[:, ch] = 0.5 * rate * ramp
    elif style == "wave":
        right0 = BODY_DIM + HEAD_DIM + HAND_DIM
        # oscillate the wrist triplet's z and two downstream chain joints
        for ch, lo, hi in ((right0 + 2, 0.30, 0.50), (right0 + 5, 0.15, 0.35), (right0 + 8, 0.15, 0.35)):
            amp = rng.uniform(lo, hi)
            freq = rng.uniform(0.30, 0.45)
            params[:, ch] = amp * np.sin(2.0 * np.pi * freq * n / fps)

    return MotionSequence(params=params, fps=fps)


def crouch_ramp_range(k: int) -> tuple[int, int]:
    """[start, stop) frame interval of the crouch head-pitch ramp."""
    start = k // 4
    return start, min(k, start + max(1, k // 2) + 1)


@dataclass(frozen=True)
class HandJointSet:
    """Left/right hand joints, root first."""

    left: np.ndarray
    right: np.ndarray
    root_index: int = 0

    def __post_init__(self):
        l = np.asarray(self.left, dtype=np.float64)
        r = np.asarray(self.right, dtype=np.float64)
        if l.ndim != 2 or l.shape[1] != 3 or l.shape[0] < 2 or l.shape != r.shape:
            raise DimensionError(f"hand joints must be matching (J>=2, 3), got {l.shape}/{r.shape}")
        if not (np.all(np.isfinite(l)) and np.all(np.isfinite(r))):
            raise PreconditionError("hand joints must be finite")
        object.__setattr__(self, "left", l)
        object.__setattr__(self, "right", r)


def _hand_chain(params45: np.ndarray, bone: np.ndarray) -> np.ndarray:
    """Pose a 16-joint chain: triplet i rotates the segment after joint i-1."""
    triplets = params45.reshape(HAND_JOINTS - 1, 3)
    joints = np.zeros((HAND_JOINTS, 3))
    r_cum = np.eye(3)
    p = np.zeros(3)
    for i, t in enumerate(triplets):
        r_cum = r_cum @ geom.axis_angle_to_rotation(t)
        p = p + r_cum @ bone
        joints[i + 1] = p
    return joints


def forward_hand_joints(frame: MotionFrame) -> HandJointSet:
    """Toy forward kinematics for both hands.

    Each hand is a chain of 16 joints with unit bone lengths; the rest pose
    extends the right hand along +x and the left along -x, so zero parameters
    give mirror-symmetric hands about the x = 0 plane. Only the hand group of
    the frame is read.
    """
    left = _hand_chain(frame.left_hand, np.array([-1.0, 0.0, 0.0]))
    right = _hand_chain(frame.right_hand, np.array([1.0, 0.0, 0.0]))
    return HandJointSet(left=left, right=right)
