"""Synthetic ego-exo world generator and the reprojection-error filter.

A world is an enclosing textured sphere shell plus a few interior spheres,
all represented as dense surface point sets, so every rendered ego pixel has
an exactly known 3-D scene point. The actor is a toy kinematic body hanging
below the ego camera plus two head-locked hands that are visible in the ego
view. The ego camera is the head: rotation-only extrinsics, camera center
pinned at the origin. A fixed exocentric camera observes the actor's joints;
its 2-D keypoints (plus seeded Gaussian pixel noise) drive the reprojection
filter.

Rendering is z-buffer point splatting (kernels.splat_points) at the synthetic
camera resolution; the winning point's world coordinates form the per-pixel
point map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geom
from .config import DatapipeConfig, GeometryConfig
from .errors import DimensionError, ParseError, PreconditionError
from .kernels import splat_points
from .motion import MotionFrame, MotionSequence, forward_hand_joints, synth_motion
from .rng import substream
from .tensorio import read_tensor, write_tensor

ROOM_RADIUS = 4.0
BODY_JOINTS = 22
BODY_BONE = 0.075
BODY_ANCHOR = np.array([0.0, 0.12, 0.0])  # first segment hangs below the head
HAND_SCALE = 0.012
HAND_BLOB_RADIUS = 0.010
HAND_BLOB_POINTS = 32
HAND_OFFSET_LEFT = np.array([-0.16, 0.16, 0.45])  # head-locked, camera frame
HAND_OFFSET_RIGHT = np.array([0.16, 0.16, 0.45])
HAND_BASE_ID = 1000

# fixed exocentric observer (world frame): to the side, slightly above,
# looking at the actor's torso
EXO_CENTER = np.array([2.4, 0.3, -2.6])
EXO_TARGET = np.array([0.0, 0.8, 0.0])
EXO_UP = np.array([0.0, 1.0, 0.0])


def fibonacci_sphere(n: int) -> np.ndarray:
    """n roughly evenly spaced unit vectors."""
    i = np.arange(n, dtype=np.float64)
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    theta = 2.0 * np.pi * i / phi
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=-1)


def _texture(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Smooth procedural surface color in [0, 1] for each 3-D point."""
    freqs = rng.uniform(0.6, 2.2, size=(3, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    base = rng.uniform(0.35, 0.65, size=3)
    colors = np.empty((points.shape[0], 3))
    for c in range(3):
        colors[:, c] = base[c] + 0.28 * np.sin(points @ freqs[c] + phases[c])
    return np.clip(colors, 0.0, 1.0)


@dataclass
class SyntheticWorld:
    """Static textured scene, fixed cameras, seeded geometry."""

    points: np.ndarray  # (M, 3) world coordinates
    colors: np.ndarray  # (M, 3)
    ids: np.ndarray  # (M,) primitive id, 0 = enclosing shell
    ego_intr: geom.Intrinsics
    exo_pose: geom.CameraPose
    exo_intr: geom.Intrinsics
    world_seed: int


def _look_at(center: np.ndarray, target: np.ndarray, up: np.ndarray) -> geom.CameraPose:
    z = target - center
    z = z / np.linalg.norm(z)
    x = np.cross(up, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return geom.CameraPose(r=r, t=-r @ center)


def build_world(world_seed: int, pipe: DatapipeConfig, geo: GeometryConfig) -> SyntheticWorld:
    """Deterministic scene for a seed: shell + 2..4 interior spheres."""
    rng = substream(world_seed, "world")
    shell_dirs = fibonacci_sphere(pipe.shell_points)
    points = [shell_dirs * ROOM_RADIUS]
    colors = [_texture(points[0], rng)]
    ids = [np.zeros(pipe.shell_points, dtype=np.int64)]
    n_prims = int(rng.integers(2, 5))
    prim_dirs = fibonacci_sphere(pipe.prim_points)
    for p in range(n_prims):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        center = direction * rng.uniform(1.8, 2.8)
        radius = rng.uniform(0.35, 0.7)
        pts = center + prim_dirs * radius
        points.append(pts)
        colors.append(_texture(pts, rng))
        ids.append(np.full(pipe.prim_points, p + 1, dtype=np.int64))
    ego_intr = geom.Intrinsics(geo.fx, geo.fy, geo.cx, geo.cy, geo.width, geo.height)
    return SyntheticWorld(
        points=np.concatenate(points),
        colors=np.concatenate(colors).astype(np.float32),
        ids=np.concatenate(ids),
        ego_intr=ego_intr,
        exo_pose=_look_at(EXO_CENTER, EXO_TARGET, EXO_UP),
        exo_intr=ego_intr,
        world_seed=world_seed,
    )


# ---------------------------------------------------------------------------
# Actor kinematics (world frame; the ego camera center is the head at origin)
# ---------------------------------------------------------------------------


def body_joints(frame: MotionFrame) -> np.ndarray:
    """(22, 3) toy body chain hanging below the head, driven by body params."""
    triplets = frame.body_feet.reshape(BODY_JOINTS, 3)
    joints = np.zeros((BODY_JOINTS, 3))
    r_cum = np.eye(3)
    p = BODY_ANCHOR.copy()
    bone = np.array([0.0, BODY_BONE, 0.0])
    for i, t in enumerate(triplets):
        r_cum = r_cum @ geom.axis_angle_to_rotation(t)
        p = p + r_cum @ bone
        joints[i] = p
    return joints


def hand_world_joints(frame: MotionFrame) -> tuple[np.ndarray, np.ndarray]:
    """World-frame left/right hand joints (16, 3) each.

    Hands are head-locked: posed by the toy hand FK, scaled, placed at fixed
    offsets in the head (camera) frame, then rotated into the world by the
    inverse head rotation.
    """
    hands = forward_hand_joints(frame)
    r_head = geom.axis_angle_to_rotation(frame.head)
    left_cam = HAND_OFFSET_LEFT + HAND_SCALE * hands.left
    right_cam = HAND_OFFSET_RIGHT + HAND_SCALE * hands.right
    return left_cam @ r_head, right_cam @ r_head  # (R^T x^T)^T = x R


def world_joints(frame: MotionFrame) -> np.ndarray:
    """(54, 3) oracle joints: body chain then left hand then right hand."""
    left, right = hand_world_joints(frame)
    return np.concatenate([body_joints(frame), left, right])


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_HAND_COLOR_L = np.array([0.85, 0.62, 0.48], dtype=np.float32)
_HAND_COLOR_R = np.array([0.80, 0.55, 0.42], dtype=np.float32)


def _hand_splat_geometry(frame: MotionFrame) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense point blobs around every hand joint (world frame)."""
    left, right = hand_world_joints(frame)
    blob = fibonacci_sphere(HAND_BLOB_POINTS) * HAND_BLOB_RADIUS
    pts, cols, ids = [], [], []
    for hand_idx, (joints, color) in enumerate(((left, _HAND_COLOR_L), (right, _HAND_COLOR_R))):
        for j, joint in enumerate(joints):
            pts.append(joint + blob)
            shade = color * (0.8 + 0.2 * (j / (joints.shape[0] - 1)))
            cols.append(np.broadcast_to(shade, (HAND_BLOB_POINTS, 3)).copy())
            ids.append(np.full(HAND_BLOB_POINTS, HAND_BASE_ID + hand_idx * 100 + j, dtype=np.int64))
    return np.concatenate(pts), np.concatenate(cols).astype(np.float32), np.concatenate(ids)


def render_ego(world: SyntheticWorld, motion: MotionSequence
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render the ego view of a motion clip.

    Returns (video, pointmaps, id_maps): video is (k, H, W, 3) float32 in
    [0, 1]; pointmaps holds each pixel's world-frame 3-D point; id_maps the
    winning primitive id (hands >= HAND_BASE_ID, -1 where empty -- the shell
    guarantees this does not occur at default densities).
    """
    intr = world.ego_intr
    k = len(motion)
    video = np.zeros((k, intr.height, intr.width, 3), dtype=np.float32)
    pmaps = np.zeros((k, intr.height, intr.width, 3), dtype=np.float32)
    idmaps = np.full((k, intr.height, intr.width), -1, dtype=np.int64)
    for n in range(k):
        frame = motion.frame(n)
        pose = geom.head_to_pose(frame.head)
        hand_pts, hand_cols, hand_ids = _hand_splat_geometry(frame)
        all_world = np.concatenate([world.points, hand_pts])
        all_cols = np.concatenate([world.colors, hand_cols])
        all_ids = np.concatenate([world.ids, hand_ids])
        cam = all_world @ pose.r.T  # t = 0 for head poses
        depth, winner = splat_points(
            cam, intr.fx, intr.fy, intr.cx, intr.cy, intr.height, intr.width
        )
        hit = winner >= 0
        w = winner[hit]
        video[n][hit] = all_cols[w]
        pmaps[n][hit] = all_world[w].astype(np.float32)
        idmaps[n][hit] = all_ids[w]
    return video, pmaps, idmaps


# ---------------------------------------------------------------------------
# Sample records
# ---------------------------------------------------------------------------


@dataclass
class SampleRecord:
    """One synthetic ego-exo training pair."""

    id: int
    video: np.ndarray  # (k, H, W, 3) float32
    motion: MotionSequence
    pointmaps: np.ndarray  # (k, H, W, 3) float32
    keypoints: np.ndarray  # (k, J, 2) float32, exo pixels with injected noise
    noise_px: float
    style: str
    world_seed: int
    reproj_error: float | None = None
    kept: bool | None = None


def _exo_keypoints_clean(motion: MotionSequence, exo_pose: geom.CameraPose,
                         exo_intr: geom.Intrinsics) -> np.ndarray:
    k = len(motion)
    out = np.zeros((k, 54, 2), dtype=np.float32)
    for n in range(k):
        joints = world_joints(motion.frame(n))
        uv, vis = geom.project_joints(exo_pose.world_to_cam(joints), exo_intr)
        if not np.all(vis):
            raise PreconditionError("exo camera placement left joints behind the camera")
        out[n] = uv.astype(np.float32)
    return out


def generate_sample(seed: int, style: str, k: int,
                    pipe: DatapipeConfig | None = None,
                    geo: GeometryConfig | None = None,
                    sample_id: int = 0,
                    noise_px: float | None = None,
                    world_seed: int | None = None) -> SampleRecord:
    """Deterministic synthetic sample for (seed, style, k).

    noise_px overrides the seed-derived keypoint noise magnitude (used for
    planting outliers); world_seed overrides the scene seed so several samples
    can share one world (and therefore one first frame, since every style's
    frame 0 is the rest pose).
    """
    pipe = pipe or DatapipeConfig()
    geo = geo or GeometryConfig()
    if world_seed is None:
        world_seed = seed
    world = build_world(world_seed, pipe, geo)
    motion = synth_motion(seed, k, style)
    video, pmaps, _ = render_ego(world, motion)
    clean = _exo_keypoints_clean(motion, world.exo_pose, world.exo_intr)
    rng = substream(seed, "kp-noise")
    if noise_px is None:
        noise_px = float(rng.uniform(pipe.noise_px_min, pipe.noise_px_max))
    unit = rng.standard_normal(clean.shape)
    keypoints = (clean.astype(np.float64) + noise_px * unit).astype(np.float32)
    return SampleRecord(
        id=sample_id,
        video=video,
        motion=motion,
        pointmaps=pmaps,
        keypoints=keypoints,
        noise_px=noise_px,
        style=style,
        world_seed=world_seed,
    )


def compute_reproj_error(record: SampleRecord, geo: GeometryConfig | None = None) -> float:
    """Mean pixel distance between motion-projected joints and stored keypoints.

    The motion-derived 3-D joints are re-projected through the fixed exo
    camera; the error is the mean over frames and joints of the Euclidean
    pixel distance. Differences are taken at float32 precision, matching the
    keypoint storage, so a noise-free record scores exactly zero.
    """
    geo = geo or GeometryConfig()
    exo_intr = geom.Intrinsics(geo.fx, geo.fy, geo.cx, geo.cy, geo.width, geo.height)
    exo_pose = _look_at(EXO_CENTER, EXO_TARGET, EXO_UP)
    k = len(record.motion)
    kp = np.asarray(record.keypoints)
    if kp.ndim != 3 or kp.shape[0] != k or kp.shape[2] != 2:
        raise DimensionError(
            f"keypoints must be (k={k}, J, 2) with one entry per frame, got {kp.shape}"
        )
    total = 0.0
    for n in range(k):
        joints = world_joints(record.motion.frame(n))
        if joints.shape[0] != kp.shape[1]:
            raise DimensionError(
                f"frame {n}: {kp.shape[1]} keypoints vs {joints.shape[0]} joints"
            )
        uv, _ = geom.project_joints(exo_pose.world_to_cam(joints), exo_intr)
        diff = uv.astype(np.float32) - kp[n]
        total += float(np.mean(np.linalg.norm(diff.astype(np.float64), axis=-1)))
    return total / k


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

MANIFEST_COLUMNS = (
    "id", "video", "motion", "points", "keypoints",
    "k", "height", "width", "reproj_error", "kept",
)
_QUANTILES = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0)


@dataclass
class ManifestRow:
    id: int
    video: str
    motion: str
    points: str
    keypoints: str
    k: int
    height: int
    width: int
    reproj_error: float
    kept: bool


@dataclass
class Manifest:
    rows: list[ManifestRow] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def recompute_stats(self) -> None:
        errors = np.array([r.reproj_error for r in self.rows], dtype=np.float64)
        self.stats = {
            "count": len(self.rows),
            "kept": int(sum(1 for r in self.rows if r.kept)),
            "quantiles": {
                f"q{int(q * 100):02d}": (float(np.quantile(errors, q)) if len(errors) else 0.0)
                for q in _QUANTILES
            },
        }


def round_error(e: float) -> float:
    """Errors are carried at 9 significant digits, matching the file format."""
    return float(f"{e:.9g}")


def write_manifest(manifest: Manifest, path) -> None:
    manifest.rows.sort(key=lambda r: r.id)
    manifest.recompute_stats()
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for r in manifest.rows:
        lines.append(
            "\t".join(
                [
                    str(r.id), r.video, r.motion, r.points, r.keypoints,
                    str(r.k), str(r.height), str(r.width),
                    f"{r.reproj_error:.9g}", "1" if r.kept else "0",
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> Manifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{path}: empty manifest")
    if tuple(lines[0].split("\t")) != MANIFEST_COLUMNS:
        raise ParseError(f"{path}: line 1: bad header")
    rows = []
    if len(lines) < 2:
        raise ParseError(f"{path}: no records after header")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise ParseError(
                f"{path}: line {lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(parts)}"
            )
        try:
            rows.append(
                ManifestRow(
                    id=int(parts[0]), video=parts[1], motion=parts[2],
                    points=parts[3], keypoints=parts[4],
                    k=int(parts[5]), height=int(parts[6]), width=int(parts[7]),
                    reproj_error=float(parts[8]), kept=parts[9] == "1",
                )
            )
        except ValueError as e:
            raise ParseError(f"{path}: line {lineno}: {e}") from e
    if not rows:
        raise ParseError(f"{path}: no records after header")
    ids = [r.id for r in rows]
    if ids != sorted(ids):
        raise ParseError(f"{path}: rows are not in ascending id order")
    manifest = Manifest(rows=rows)
    manifest.recompute_stats()
    return manifest


def filter_top_fraction(manifest: Manifest, fraction: float = 0.1) -> Manifest:
    """Mark the ceil(fraction * N) largest-error rows as dropped.

    Ties are broken by id: among equal errors the higher id is removed first,
    so lower ids are kept. fraction == 0 keeps everything; removing the whole
    corpus is refused.
    """
    n = len(manifest.rows)
    if n == 0:
        raise PreconditionError("cannot filter an empty manifest")
    if not (0.0 <= fraction <= 1.0):
        raise PreconditionError(f"fraction must be in [0, 1], got {fraction}")
    m = math.ceil(fraction * n)
    if m >= n:
        raise PreconditionError(
            f"filter would remove {m} of {n} samples, emptying the corpus"
        )
    order = sorted(manifest.rows, key=lambda r: (-r.reproj_error, -r.id))
    removed = {r.id for r in order[:m]}
    rows = [
        ManifestRow(**{**r.__dict__, "kept": r.id not in removed})
        for r in manifest.rows
    ]
    out = Manifest(rows=rows)
    out.recompute_stats()
    return out


# ---------------------------------------------------------------------------
# Corpus IO
# ---------------------------------------------------------------------------


def sample_paths(sample_id: int) -> dict[str, str]:
    stem = f"{sample_id:05d}"
    return {
        "video": f"{stem}_video.egt",
        "motion": f"{stem}_motion.egt",
        "points": f"{stem}_points.egt",
        "keypoints": f"{stem}_keypoints.egt",
    }


def save_sample(record: SampleRecord, out_dir: Path) -> ManifestRow:
    paths = sample_paths(record.id)
    out_dir = Path(out_dir)
    write_tensor(out_dir / paths["video"], record.video)
    write_tensor(out_dir / paths["motion"], record.motion.params.astype(np.float32))
    write_tensor(out_dir / paths["points"], record.pointmaps)
    write_tensor(out_dir / paths["keypoints"], record.keypoints)
    k, h, w, _ = record.video.shape
    if record.reproj_error is None:
        raise PreconditionError("compute the reprojection error before saving")
    return ManifestRow(
        id=record.id,
        video=paths["video"], motion=paths["motion"],
        points=paths["points"], keypoints=paths["keypoints"],
        k=k, height=h, width=w,
        reproj_error=round_error(record.reproj_error),
        kept=record.kept if record.kept is not None else True,
    )


def load_sample(manifest_dir, row: ManifestRow) -> SampleRecord:
    base = Path(manifest_dir)
    video = read_tensor(base / row.video)
    params = read_tensor(base / row.motion).astype(np.float64)
    return SampleRecord(
        id=row.id,
        video=video,
        motion=MotionSequence(params=params),
        pointmaps=read_tensor(base / row.points),
        keypoints=read_tensor(base / row.keypoints),
        noise_px=float("nan"),
        style="",
        world_seed=-1,
        reproj_error=row.reproj_error,
        kept=row.kept,
    )


def write_corpus(out_dir, num: int, k: int, master_seed: int, styles: tuple[str, ...],
                 pipe: DatapipeConfig | None = None,
                 geo: GeometryConfig | None = None,
                 shared_world: bool = False) -> Manifest:
    """Generate, score and persist a corpus; returns the written manifest.

    Sample i gets style styles[i % len(styles)] and a seed derived from the
    master seed's "corpus" substream; generation is order-independent per id.
    """
    if num < 1:
        raise PreconditionError(f"corpus size must be >= 1, got {num}")
    if not styles:
        raise PreconditionError("need at least one style")
    pipe = pipe or DatapipeConfig()
    geo = geo or GeometryConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = substream(master_seed, "corpus").integers(0, 2**62, size=num)
    shared = int(seeds[0]) if shared_world else None
    rows = []
    for i in range(num):
        record = generate_sample(
            int(seeds[i]), styles[i % len(styles)], k,
            pipe=pipe, geo=geo, sample_id=i,
            world_seed=shared,
        )
        record.reproj_error = round_error(compute_reproj_error(record, geo))
        record.kept = True
        rows.append(save_sample(record, out_dir))
    manifest = Manifest(rows=rows)
    manifest.recompute_stats()
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest
