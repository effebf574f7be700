"""Coarse-to-fine training, LoRA adapters, metrics and evaluation.

Stage 1 (pretrain) trains only the LoRA adapters, the caption embedding and
the timestep skip gate on coarse text/video-style samples whose motion and
camera latents are zeroed; all base denoiser and encoder weights stay
bit-frozen. Stage 2 (finetune) freezes the LoRA and everything but the last N
transformer blocks plus the output head, and unfreezes the motion/camera/
point-map encoders and the skip gate, training on motion-video pairs with
full conditioning.

Freeze contracts are enforced by hashing the frozen parameter set before and
after each stage.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffusion, nn
from .codec import PatchCodec
from .config import RunConfig, TrainerConfig, config_from_dict, config_to_dict
from .datapipe import SampleRecord
from .diffusion import CAPTION_IDS, NULL_CAPTION, WorldModel, eval_loss, training_loss
from .errors import DimensionError, PreconditionError
from .motion import STYLES, HandJointSet, forward_hand_joints
from .rng import substream
from .tensorio import read_checkpoint, write_checkpoint

# ---------------------------------------------------------------------------
# LoRA
# ---------------------------------------------------------------------------


@dataclass
class LoraAdapter:
    """Low-rank delta W + (alpha/r) B A; B starts at zero so W' = W at init."""

    a: nn.Tensor
    b: nn.Tensor
    rank: int
    alpha: float

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self, x: nn.Tensor) -> nn.Tensor:
        low = nn.matmul(x, nn.transpose2d(self.a))
        return nn.scale(nn.matmul(low, nn.transpose2d(self.b)), self.scaling)

    def named_params(self, prefix: str):
        yield f"{prefix}.lora_a", self.a
        yield f"{prefix}.lora_b", self.b


def _lora_for(linear: nn.Linear, rank: int, alpha: float, rng: np.random.Generator) -> LoraAdapter:
    out_f, in_f = linear.weight.data.shape
    dtype = linear.weight.data.dtype
    a = rng.normal(0.0, 1.0 / np.sqrt(in_f), size=(rank, in_f)).astype(dtype)
    b = np.zeros((out_f, rank), dtype=dtype)
    return LoraAdapter(
        a=nn.Tensor(a, requires_grad=True),
        b=nn.Tensor(b, requires_grad=True),
        rank=rank,
        alpha=alpha,
    )


def lora_targets(den: diffusion.Denoiser) -> list[nn.Linear]:
    """All attention/projection matrices of the denoiser."""
    mats = [den.embed]
    for block in den.blocks:
        mats.extend([block.wq, block.wk, block.wv, block.wo, block.fc1, block.fc2])
    mats.append(den.out)
    return mats


def attach_lora(den: diffusion.Denoiser, rank: int, alpha: float, rng: np.random.Generator) -> None:
    for linear in lora_targets(den):
        linear.lora = _lora_for(linear, rank, alpha, rng)


def has_lora(den: diffusion.Denoiser) -> bool:
    return den.embed.lora is not None


# ---------------------------------------------------------------------------
# Parameter grouping & freeze contracts
# ---------------------------------------------------------------------------

_BLOCK_RE = re.compile(r"den\.blocks\.(\d+)\.")


def param_group(name: str) -> str:
    if ".lora_" in name:
        return "lora"
    if name.startswith("den.caption"):
        return "caption"
    if name.startswith("den.gate"):
        return "gate"
    if name.startswith("enc."):
        return "encoders"
    return "base"


def _in_finetune_region(name: str, depth: int, last_n: int) -> bool:
    if name.startswith("den.final_ln") or name.startswith("den.out."):
        return True
    m = _BLOCK_RE.match(name)
    return m is not None and int(m.group(1)) >= depth - last_n


def stage_partition(model: WorldModel, stage: str, last_n_blocks: int
                    ) -> tuple[list[tuple[str, nn.Tensor]], list[tuple[str, nn.Tensor]]]:
    """(trainable, frozen) parameter lists for a training stage."""
    if stage not in ("pretrain", "finetune"):
        raise PreconditionError(f"unknown stage {stage!r}")
    depth = model.denoiser.spec.depth
    if last_n_blocks > depth:
        raise PreconditionError(
            f"last_n_blocks {last_n_blocks} exceeds model depth {depth}"
        )
    trainable, frozen = [], []
    for name, p in model.named_params():
        group = param_group(name)
        if stage == "pretrain":
            train = group in ("lora", "caption", "gate")
        else:
            train = group in ("encoders", "gate") or (
                group == "base" and _in_finetune_region(name, depth, last_n_blocks)
            )
        (trainable if train else frozen).append((name, p))
    return trainable, frozen


def hash_params(params: list[tuple[str, nn.Tensor]]) -> str:
    digest = hashlib.sha256()
    for name, p in sorted(params, key=lambda item: item[0]):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Sample preparation
# ---------------------------------------------------------------------------


def caption_for_index(sample_id: int, styles: tuple[str, ...]) -> int:
    """Caption id for corpus sample i (generation cycles styles by id)."""
    return CAPTION_IDS[styles[sample_id % len(styles)]]


def prepare_sample(model: WorldModel, record: SampleRecord, coarse: bool = False,
                   caption_id: int | None = None) -> dict:
    """Precompute everything fixed about a sample for the training loop."""
    cc = model.cfg.codec
    k = record.video.shape[0]
    if k != cc.k:
        raise DimensionError(f"sample has {k} frames, model expects {cc.k}")
    if caption_id is None:
        if coarse:
            caption_id = CAPTION_IDS.get(record.style, NULL_CAPTION)
        else:
            caption_id = NULL_CAPTION
    embedded, norm = model.enc_point.embed_maps(record.pointmaps)
    return {
        "id": record.id,
        "frame_latent": model.frame_codec.encode_image(record.video[0], cc.k),
        "video_latent": model.video_codec.encode_video(record.video),
        "motion_params": record.motion.params.astype(np.float32),
        "rays": model.camera_rays(record.motion).astype(np.float32),
        "pointmap_embedded": embedded,
        "pointmap_norm": norm,
        "caption_id": caption_id,
        "coarse": coarse,
    }


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    stage: str
    step0_loss: float
    final_loss: float
    log: list[dict] = field(default_factory=list)
    frozen_hash_before: str = ""
    frozen_hash_after: str = ""

    @property
    def frozen_intact(self) -> bool:
        return self.frozen_hash_before == self.frozen_hash_after


def _run_stage(model: WorldModel, samples: list[dict], cfg: TrainerConfig,
               stage: str, seed: int, p_drop: float) -> TrainResult:
    trainable, frozen = stage_partition(model, stage, cfg.last_n_blocks)
    for _, p in frozen:
        p.requires_grad = False
    for _, p in trainable:
        p.requires_grad = True
    hash_before = hash_params(frozen)

    rng = substream(seed, "train", stage)
    opt = nn.Adam(trainable, lr=cfg.lr)
    full = diffusion.PreparedBatch(model, samples)
    if stage == "pretrain":
        # base + encoder stacks are frozen and coarse samples zero out the
        # motion/camera latents anyway; cache the frozen point latents
        full.freeze_conditioning(model, point=True, motion_camera=False)
    step0 = eval_loss(model, full, seed=seed, t_points=cfg.eval_t_points)
    log = []
    n = len(samples)
    for step in range(1, cfg.steps + 1):
        if cfg.batch >= n:
            batch = full
        else:
            idx = rng.choice(n, size=cfg.batch, replace=False)
            batch = diffusion.PreparedBatch(model, [samples[i] for i in idx])
            if stage == "pretrain":
                batch.z0_point_cached = full.z0_point_cached[idx]
        opt.zero_grad()
        loss = training_loss(model, batch, rng, p_drop=p_drop)
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps:
            log.append(
                {"step": step, "stage": stage, "loss": float(loss.data),
                 "lr": cfg.lr, "seed": seed}
            )
    final = eval_loss(model, full, seed=seed, t_points=cfg.eval_t_points)
    return TrainResult(
        stage=stage,
        step0_loss=step0,
        final_loss=final,
        log=log,
        frozen_hash_before=hash_before,
        frozen_hash_after=hash_params(frozen),
    )


def train_stage1(model: WorldModel, coarse_samples: list[dict], cfg: TrainerConfig,
                 seed: int, p_drop: float | None = None) -> TrainResult:
    """LoRA pretraining on coarse text/video-style samples.

    Attaches LoRA to every attention/projection matrix if not yet present.
    Motion and camera latents are zeroed for coarse samples inside the loss;
    the caption token carries the only semantic condition.
    """
    if not coarse_samples:
        raise PreconditionError("stage 1 needs a non-empty corpus")
    if not has_lora(model.denoiser):
        attach_lora(model.denoiser, cfg.lora_rank, cfg.lora_alpha, substream(seed, "lora"))
    if p_drop is None:
        p_drop = model.cfg.diffusion.p_drop
    return _run_stage(model, coarse_samples, cfg, "pretrain", seed, p_drop)


def train_stage2(model: WorldModel, pair_samples: list[dict], cfg: TrainerConfig,
                 seed: int, p_drop: float | None = None) -> TrainResult:
    """Last-N-block finetuning on motion-video pairs with frozen LoRA."""
    if not pair_samples:
        raise PreconditionError("stage 2 needs a non-empty corpus")
    if not has_lora(model.denoiser):
        raise PreconditionError("stage 2 requires a stage-1 checkpoint (no LoRA attached)")
    if p_drop is None:
        p_drop = model.cfg.diffusion.p_drop
    return _run_stage(model, pair_samples, cfg, "finetune", seed, p_drop)


def write_train_log(rows: list[dict], path) -> None:
    lines = ["step\tstage\tloss\tlr\tseed"]
    for r in rows:
        lines.append(f"{r['step']}\t{r['stage']}\t{r['loss']:.9g}\t{r['lr']:.9g}\t{r['seed']}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: WorldModel, path, stage: str = "init",
                    extra_meta: dict | None = None) -> None:
    meta = {
        "config": config_to_dict(model.cfg),
        "channel_offsets": model.layout.to_dict(),
        "stage": stage,
    }
    if has_lora(model.denoiser):
        lora = model.denoiser.embed.lora
        meta["lora"] = {"rank": lora.rank, "alpha": lora.alpha}
    if extra_meta:
        meta.update(extra_meta)
    write_checkpoint(path, model.state_dict(), meta)


def load_checkpoint(path) -> tuple[WorldModel, dict]:
    tensors, meta = read_checkpoint(path)
    cfg = config_from_dict(meta["config"])
    model = WorldModel(cfg)
    if "lora" in meta:
        attach_lora(
            model.denoiser, int(meta["lora"]["rank"]), float(meta["lora"]["alpha"]),
            substream(0, "lora-placeholder"),
        )
    model.load_state(tensors)
    return model, meta


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

PSNR_CAP = 99.0
_PSNR_MSE_FLOOR = 1e-10


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for signals in [0, 1], capped at 99."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _window_means(x: np.ndarray, win: int) -> np.ndarray:
    """Mean over all win x win windows (valid mode) of a (B, H, W) stack."""
    cs = np.cumsum(np.cumsum(x, axis=1), axis=2)
    cs = np.pad(cs, ((0, 0), (1, 0), (1, 0)))
    total = (
        cs[:, win:, win:]
        - cs[:, :-win, win:]
        - cs[:, win:, :-win]
        + cs[:, :-win, :-win]
    )
    return total / (win * win)


def ssim(pred: np.ndarray, gt: np.ndarray, window: int = 8,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity with a uniform window, dynamic range 1.

    Accepts (H, W), (H, W, C) or (k, H, W, C) arrays; the score is the mean
    over all windows, channels and frames.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        p = pred[None]
        g = gt[None]
    elif pred.ndim == 3:
        p = np.moveaxis(pred, -1, 0)
        g = np.moveaxis(gt, -1, 0)
    elif pred.ndim == 4:
        k, h, w, c = pred.shape
        p = np.moveaxis(pred, -1, 1).reshape(k * c, h, w)
        g = np.moveaxis(gt, -1, 1).reshape(k * c, h, w)
    else:
        raise DimensionError(f"unsupported ssim input rank {pred.ndim}")
    if p.shape[1] < window or p.shape[2] < window:
        raise DimensionError(f"images smaller than the {window}x{window} ssim window")
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    mu_p = _window_means(p, window)
    mu_g = _window_means(g, window)
    var_p = _window_means(p * p, window) - mu_p**2
    var_g = _window_means(g * g, window) - mu_g**2
    cov = _window_means(p * g, window) - mu_p * mu_g
    num = (2.0 * mu_p * mu_g + c1) * (2.0 * cov + c2)
    den = (mu_p**2 + mu_g**2 + c1) * (var_p + var_g + c2)
    return float(np.mean(num / den))


def mpjpe(pred: HandJointSet, gt: HandJointSet) -> float:
    """Root-relative mean per-joint position error over both hands."""
    if pred.left.shape != gt.left.shape or pred.right.shape != gt.right.shape:
        raise DimensionError("hand topologies differ")
    total = []
    for p, g, root in (
        (pred.left, gt.left, gt.root_index),
        (pred.right, gt.right, gt.root_index),
    ):
        rel = (p - p[pred.root_index]) - (g - g[root])
        total.append(np.linalg.norm(rel, axis=-1))
    return float(np.mean(np.concatenate(total)))


def mrrpe(pred: HandJointSet, gt: HandJointSet) -> float:
    """Error of the left-root to right-root vector against ground truth."""
    pv = pred.left[pred.root_index] - pred.right[pred.root_index]
    gv = gt.left[gt.root_index] - gt.right[gt.root_index]
    return float(np.linalg.norm(pv - gv))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    psnr: float = 0.0
    ssim: float = 0.0
    mpjpe: float = 0.0
    mrrpe: float = 0.0


def _standin_pose_estimator(video: np.ndarray, record: SampleRecord) -> list[HandJointSet]:
    """Desk-scale stand-in for a video-based 3-D hand pose estimator.

    Real pixel-space pose estimation is out of reach here; the stand-in reads
    the conditioning motion, so against ground truth it scores zero error.
    """
    return [forward_hand_joints(record.motion.frame(i)) for i in range(len(record.motion))]


def evaluate(model: WorldModel, records: list[SampleRecord], steps: int | None = None,
             cfg_scale: float | None = None, seed: int = 0,
             video_fn=None, pose_estimator=None) -> EvalReport:
    """Sample every record and score PSNR/SSIM/MPJPE/MRRPE against ground truth."""
    if not records:
        raise PreconditionError("evaluation corpus is empty")
    if steps is None:
        steps = model.cfg.diffusion.steps
    if cfg_scale is None:
        cfg_scale = model.cfg.diffusion.cfg
    if pose_estimator is None:
        pose_estimator = _standin_pose_estimator
    report = EvalReport()
    for record in records:
        if video_fn is not None:
            video = video_fn(model, record)
        else:
            sample_seed = int(substream(seed, "eval", str(record.id)).integers(0, 2**62))
            video = diffusion.sample(
                model, record.video[0], record.motion,
                steps=steps, cfg=cfg_scale, seed=sample_seed,
            )
        p = psnr(video, record.video)
        s = ssim(video, record.video)
        pred_hands = pose_estimator(video, record)
        gt_hands = [forward_hand_joints(record.motion.frame(i)) for i in range(len(record.motion))]
        mj = float(np.mean([mpjpe(a, b) for a, b in zip(pred_hands, gt_hands)]))
        mr = float(np.mean([mrrpe(a, b) for a, b in zip(pred_hands, gt_hands)]))
        report.rows.append(
            {"id": record.id, "psnr": p, "ssim": s, "mpjpe": mj, "mrrpe": mr}
        )
    report.psnr = float(np.mean([r["psnr"] for r in report.rows]))
    report.ssim = float(np.mean([r["ssim"] for r in report.rows]))
    report.mpjpe = float(np.mean([r["mpjpe"] for r in report.rows]))
    report.mrrpe = float(np.mean([r["mrrpe"] for r in report.rows]))
    return report


def write_report(report: EvalReport, path) -> None:
    lines = ["id\tpsnr\tssim\tmpjpe\tmrrpe"]
    for r in report.rows:
        lines.append(
            f"{r['id']}\t{r['psnr']:.9g}\t{r['ssim']:.9g}\t{r['mpjpe']:.9g}\t{r['mrrpe']:.9g}"
        )
    lines.append(
        f"mean\t{report.psnr:.9g}\t{report.ssim:.9g}\t{report.mpjpe:.9g}\t{report.mrrpe:.9g}"
    )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
