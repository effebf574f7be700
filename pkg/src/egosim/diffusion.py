"""Noise schedule, forward noising, the toy transformer denoiser and sampling.

The trigonometric schedule sigma(t) = cos(pi t / 2), beta(t) = sin(pi t / 2)
satisfies sigma^2 + beta^2 = 1 with exact clean/pure-noise endpoints. Noise is
applied only to the video and point channels; frame, motion and camera blocks
enter the denoiser as clean conditions.

The denoiser is a patch-token transformer with an additive timestep embedding
on every token, an optional caption token, and a t-gated per-channel skip from
the noised input to the output head. The output projection and the skip gate
are zero-initialized, so the model predicts exactly zero noise at start.
Sampling is a deterministic DDIM-style ancestral update for epsilon
prediction with classifier-free guidance (unconditional branch = motion and
camera conditions zeroed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec as codec_mod
from . import geom, nn
from .codec import (
    CameraEncoder,
    ChannelLayout,
    MotionEncoder,
    PatchCodec,
    PointmapEncoder,
)
from .config import RunConfig
from .errors import DimensionError, PreconditionError
from .motion import MotionSequence, STYLES
from .rng import substream

_SIGMA_FLOOR = 1e-8  # below this signal coefficient x0 is unidentifiable


@dataclass(frozen=True)
class NoiseSchedule:
    """sigma(t), beta(t) pair with sigma^2 + beta^2 = 1 and exact endpoints."""

    def sigma(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.where(t <= 0.0, 1.0, np.where(t >= 1.0, 0.0, np.cos(0.5 * np.pi * t)))
        return float(out) if out.ndim == 0 else out

    def beta(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.where(t <= 0.0, 0.0, np.where(t >= 1.0, 1.0, np.sin(0.5 * np.pi * t)))
        return float(out) if out.ndim == 0 else out


def make_schedule() -> NoiseSchedule:
    return NoiseSchedule()


@dataclass
class DiffusionState:
    """Noised joint latent (video then point channels) at time t."""

    z_t: np.ndarray
    t: float
    eps: np.ndarray | None = None  # training-time Gaussian draw


def forward_noise(z0: np.ndarray, t: float, eps: np.ndarray,
                  schedule: NoiseSchedule | None = None) -> np.ndarray:
    """z_t = sigma(t) z0 + beta(t) eps on the joint video+point latent."""
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if z0.shape != eps.shape:
        raise DimensionError(f"z0 {z0.shape} and eps {eps.shape} must match")
    if not (0.0 <= t <= 1.0):
        raise PreconditionError(f"t must lie in [0, 1], got {t}")
    sched = schedule or make_schedule()
    s = sched.sigma(t)
    b = sched.beta(t)
    if s == 1.0 and b == 0.0:
        return z0.copy()
    if s == 0.0 and b == 1.0:
        return eps.copy()
    return (s * z0 + b * eps).astype(z0.dtype, copy=False)


@dataclass(frozen=True)
class DenoiserSpec:
    """Architecture of the toy diffusion transformer."""

    depth: int = 6
    width: int = 128
    heads: int = 4
    patch: tuple[int, int, int] = (1, 4, 4)
    mlp_ratio: int = 4
    caption_vocab: int = len(STYLES) + 1  # style labels + null

    def __post_init__(self):
        if self.depth < 2:
            raise PreconditionError("denoiser depth must be >= 2")
        if self.width % self.heads:
            raise PreconditionError("width must divide evenly into heads")


@dataclass
class Conditions:
    """Clean conditioning blocks fed beside the noised latent."""

    frame: nn.Tensor  # (B, k, c_frame, h, w)
    motion: nn.Tensor  # (B, k, 3, h, w)
    camera: nn.Tensor  # (B, k, c_video, h, w)
    caption_ids: np.ndarray  # (B,)


class _Block:
    def __init__(self, width: int, heads: int, mlp_ratio: int,
                 rng: np.random.Generator, dtype):
        self.heads = heads
        self.ln1 = nn.LayerNorm(width, dtype)
        self.wq = nn.Linear(width, width, rng, dtype)
        self.wk = nn.Linear(width, width, rng, dtype)
        self.wv = nn.Linear(width, width, rng, dtype)
        self.wo = nn.Linear(width, width, rng, dtype)
        self.ln2 = nn.LayerNorm(width, dtype)
        self.fc1 = nn.Linear(width, width * mlp_ratio, rng, dtype)
        self.fc2 = nn.Linear(width * mlp_ratio, width, rng, dtype)

    def __call__(self, x: nn.Tensor) -> nn.Tensor:
        b, t, w = x.data.shape
        heads = self.heads
        dh = w // heads
        hidden = self.ln1(x)

        def split(v):
            return nn.transpose(nn.reshape(v, (b, t, heads, dh)), (0, 2, 1, 3))

        q, k, v = split(self.wq(hidden)), split(self.wk(hidden)), split(self.wv(hidden))
        scores = nn.scale(nn.matmul(q, nn.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        mix = nn.matmul(nn.softmax(scores, axis=-1), v)
        mix = nn.reshape(nn.transpose(mix, (0, 2, 1, 3)), (b, t, w))
        x = nn.add(x, self.wo(mix))
        m = self.fc2(nn.silu(self.fc1(self.ln2(x))))
        return nn.add(x, m)

    def named_params(self, prefix: str):
        yield from self.ln1.named_params(f"{prefix}.ln1")
        for name in ("wq", "wk", "wv", "wo", "fc1", "fc2"):
            yield from getattr(self, name).named_params(f"{prefix}.{name}")
        yield from self.ln2.named_params(f"{prefix}.ln2")


class Denoiser:
    """Patch-token transformer predicting the injected noise.

    Input channels follow the fixed conditioning layout; output covers the
    noised (video + point) channels only. A per-channel skip from z_t, gated
    by the timestep embedding, lets the network express identity-like noise
    estimates that a narrow token bottleneck could not carry.
    """

    def __init__(self, layout: ChannelLayout, spec: DenoiserSpec, k: int, h: int, w: int,
                 rng: np.random.Generator, dtype=np.float32):
        pk, ph, pw = spec.patch
        if k % pk or h % ph or w % pw:
            raise DimensionError(f"grid ({k},{h},{w}) not divisible by patch {spec.patch}")
        self.layout = layout
        self.spec = spec
        self.k, self.h, self.w = k, h, w
        self.grid = (k // pk, h // ph, w // pw)
        self.n_tokens = int(np.prod(self.grid))
        self.token_in = layout.total * pk * ph * pw
        self.token_out = layout.c_noised * pk * ph * pw
        self.dtype = dtype

        width = spec.width
        self.embed = nn.Linear(self.token_in, width, rng, dtype)
        self.pos = nn.Tensor(
            rng.normal(0.0, 0.02, size=(self.n_tokens, width)).astype(dtype),
            requires_grad=True,
        )
        self.n_freqs = max(4, width // 8)
        self.t_freqs = np.exp(np.linspace(0.0, np.log(1000.0), self.n_freqs))
        self.t_mlp1 = nn.Linear(2 * self.n_freqs, width, rng, dtype)
        self.t_mlp2 = nn.Linear(width, width, rng, dtype)
        self.caption = nn.Embedding(spec.caption_vocab, width, rng, dtype)
        self.blocks = [
            _Block(width, spec.heads, spec.mlp_ratio, rng, dtype) for _ in range(spec.depth)
        ]
        self.final_ln = nn.LayerNorm(width, dtype)
        self.out = nn.Linear(width, self.token_out, rng, dtype, zero_init=True)
        self.gate = nn.Linear(width, layout.c_noised, rng, dtype, zero_init=True)

    def _t_features(self, t: np.ndarray) -> np.ndarray:
        ang = np.asarray(t, dtype=np.float64)[:, None] * self.t_freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(self.dtype)

    def _patchify(self, x: nn.Tensor) -> nn.Tensor:
        b = x.data.shape[0]
        c = x.data.shape[2]
        pk, ph, pw = self.spec.patch
        gk, gh, gw = self.grid
        x = nn.reshape(x, (b, gk, pk, c, gh, ph, gw, pw))
        x = nn.transpose(x, (0, 1, 4, 6, 3, 2, 5, 7))
        return nn.reshape(x, (b, self.n_tokens, c * pk * ph * pw))

    def _unpatchify(self, tok: nn.Tensor, c: int) -> nn.Tensor:
        b = tok.data.shape[0]
        pk, ph, pw = self.spec.patch
        gk, gh, gw = self.grid
        x = nn.reshape(tok, (b, gk, gh, gw, c, pk, ph, pw))
        x = nn.transpose(x, (0, 1, 5, 4, 2, 6, 3, 7))
        return nn.reshape(x, (b, gk * pk, c, gh * ph, gw * pw))

    def forward(self, z_t: nn.Tensor, t: np.ndarray, cond: Conditions) -> nn.Tensor:
        """Predict the noise on the (video + point) channels.

        z_t: (B, k, c_video + c_point, h, w); t: (B,) in [0, 1].
        """
        lay = self.layout
        b = z_t.data.shape[0]
        z_video = nn.narrow(z_t, 2, 0, lay.c_video)
        z_point = nn.narrow(z_t, 2, lay.c_video, lay.c_point)
        x = nn.concat(
            [cond.frame, cond.motion, nn.add(z_video, cond.camera), z_point], axis=2
        )
        tokens = self.embed(self._patchify(x))

        t_emb = self.t_mlp2(nn.silu(self.t_mlp1(nn.Tensor(self._t_features(t)))))
        tokens = nn.add(nn.add(tokens, self.pos), nn.reshape(t_emb, (b, 1, -1)))
        cap = nn.reshape(self.caption(np.asarray(cond.caption_ids)), (b, 1, -1))
        hidden = nn.concat([tokens, cap], axis=1)
        for block in self.blocks:
            hidden = block(hidden)
        hidden = self.final_ln(nn.narrow(hidden, 1, 0, self.n_tokens))
        core = self._unpatchify(self.out(hidden), lay.c_noised)

        gains = nn.reshape(self.gate(t_emb), (b, 1, lay.c_noised, 1, 1))
        return nn.add(core, nn.mul(gains, z_t))

    def named_params(self, prefix: str = "den"):
        yield from self.embed.named_params(f"{prefix}.embed")
        yield f"{prefix}.pos", self.pos
        yield from self.t_mlp1.named_params(f"{prefix}.t_mlp1")
        yield from self.t_mlp2.named_params(f"{prefix}.t_mlp2")
        yield from self.caption.named_params(f"{prefix}.caption")
        for i, block in enumerate(self.blocks):
            yield from block.named_params(f"{prefix}.blocks.{i}")
        yield from self.final_ln.named_params(f"{prefix}.final_ln")
        yield from self.out.named_params(f"{prefix}.out")
        yield from self.gate.named_params(f"{prefix}.gate")


def denoise_step(model: "WorldModel", z_t: np.ndarray, t: float | np.ndarray,
                 cond: Conditions) -> np.ndarray:
    """One epsilon prediction on plain arrays."""
    z = np.asarray(z_t, dtype=np.float32)
    squeeze = z.ndim == 4
    if squeeze:
        z = z[None]
    tv = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = model.denoiser.forward(nn.Tensor(z), tv, cond).data
    return out[0] if squeeze else out


NULL_CAPTION = 0
CAPTION_IDS = {style: i + 1 for i, style in enumerate(STYLES)}


class WorldModel:
    """Bundle of codecs, conditioning encoders, denoiser and schedule."""

    def __init__(self, cfg: RunConfig, dtype=np.float32):
        cc = cfg.codec
        if cc.h * cc.patch != cfg.geometry.height or cc.w * cc.patch != cfg.geometry.width:
            raise PreconditionError(
                "latent grid x patch must equal the image size: "
                f"({cc.h}x{cc.patch}, {cc.w}x{cc.patch}) vs "
                f"({cfg.geometry.height}, {cfg.geometry.width})"
            )
        self.cfg = cfg
        self.dtype = dtype
        self.layout = ChannelLayout(c_frame=cc.c_frame, c_video=cc.c_video, c_point=cc.c_point)
        self.frame_codec = PatchCodec(cc.patch, cc.c_frame, key="frame")
        self.video_codec = PatchCodec(cc.patch, cc.c_video, key="video")
        rng = substream(cfg.seed, "init")
        self.enc_body = MotionEncoder("body_feet", cc.h, cc.w, cc.enc_hidden, rng, dtype)
        self.enc_hands = MotionEncoder("hands", cc.h, cc.w, cc.enc_hidden, rng, dtype)
        self.enc_head = MotionEncoder("head", cc.h, cc.w, cc.enc_hidden, rng, dtype)
        self.enc_camera = CameraEncoder(cc.c_video, cc.enc_hidden, rng, dtype)
        self.enc_point = PointmapEncoder(cc.patch, cc.c_point, cc.adapter_hidden, rng, dtype)
        spec = DenoiserSpec(
            depth=cfg.diffusion.depth,
            width=cfg.diffusion.width,
            heads=cfg.diffusion.heads,
            patch=(cfg.diffusion.patch_k, cfg.diffusion.patch_h, cfg.diffusion.patch_w),
            mlp_ratio=cfg.diffusion.mlp_ratio,
        )
        self.denoiser = Denoiser(self.layout, spec, cc.k, cc.h, cc.w, rng, dtype)
        self.schedule = make_schedule()

    # -- parameters ---------------------------------------------------------

    def named_params(self):
        yield from self.enc_body.named_params("enc.body")
        yield from self.enc_hands.named_params("enc.hands")
        yield from self.enc_head.named_params("enc.head")
        yield from self.enc_camera.named_params("enc.camera")
        yield from self.enc_point.named_params("enc.point")
        yield from self.denoiser.named_params("den")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise PreconditionError(
                f"checkpoint mismatch: missing {missing[:3]}..., extra {extra[:3]}..."
                if len(missing) + len(extra) > 6
                else f"checkpoint mismatch: missing {missing}, extra {extra}"
            )
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise PreconditionError(
                    f"checkpoint tensor {name} has shape {arr.shape}, expected {p.data.shape}"
                )
            p.data = arr.copy()

    # -- conditioning -------------------------------------------------------

    def latent_intrinsics(self) -> geom.Intrinsics:
        g = self.cfg.geometry
        base = geom.Intrinsics(g.fx, g.fy, g.cx, g.cy, g.width, g.height)
        return base.scaled(self.cfg.codec.w, self.cfg.codec.h)

    def motion_latent(self, params_batch: np.ndarray) -> nn.Tensor:
        """(B, k, 159) motion parameters -> (B, k, 3, h, w) part-aware latent."""
        from .motion import BODY_DIM, HEAD_DIM

        p = nn.Tensor(np.asarray(params_batch, dtype=self.dtype))
        body = nn.narrow(p, 2, 0, BODY_DIM)
        head = nn.narrow(p, 2, BODY_DIM, HEAD_DIM)
        hands = nn.narrow(p, 2, BODY_DIM + HEAD_DIM, 2 * 45)
        blocks = [
            self.enc_body.forward(body),
            self.enc_hands.forward(hands),
            self.enc_head.forward(head),
        ]
        return nn.concat(blocks, axis=2)

    def camera_rays(self, motion_seq: MotionSequence) -> np.ndarray:
        """(k, h, w, 6) rotation-only Plücker rays on the latent grid."""
        return geom.plucker_sequence(motion_seq.heads(), self.latent_intrinsics())

    def camera_latent(self, rays_batch: np.ndarray) -> nn.Tensor:
        return self.enc_camera.forward(nn.Tensor(np.asarray(rays_batch, dtype=self.dtype)))


class PreparedBatch:
    """Stacked arrays for a fixed set of prepared samples.

    Building this once per corpus avoids restacking identical conditioning
    tensors on every training step. When the point adapter (or the motion and
    camera encoders) are frozen, their outputs can additionally be cached via
    freeze_conditioning().
    """

    def __init__(self, model: WorldModel, samples: list[dict]):
        dt = model.dtype
        self.samples = samples
        self.size = len(samples)
        self.frame = np.stack([s["frame_latent"] for s in samples]).astype(dt)
        self.z0_video = np.stack([s["video_latent"] for s in samples]).astype(dt)
        self.params = np.stack([s["motion_params"] for s in samples]).astype(dt)
        self.rays = np.stack([s["rays"] for s in samples]).astype(dt)
        self.embedded = np.stack([s["pointmap_embedded"] for s in samples]).astype(dt)
        self.caption_ids = np.array([s.get("caption_id", NULL_CAPTION) for s in samples])
        self.coarse = np.array([bool(s.get("coarse", False)) for s in samples])
        self.z0_point_cached: np.ndarray | None = None
        self.cond_cached: tuple[np.ndarray, np.ndarray] | None = None

    def freeze_conditioning(self, model: WorldModel, point: bool = True,
                            motion_camera: bool = True) -> None:
        """Precompute outputs of frozen conditioning stacks (stage 1)."""
        if point:
            self.z0_point_cached = model.enc_point.forward(nn.Tensor(self.embedded)).data
        if motion_camera:
            self.cond_cached = (
                model.motion_latent(self.params).data,
                model.camera_latent(self.rays).data,
            )


def _as_prepared(model: WorldModel, batch) -> PreparedBatch:
    if isinstance(batch, PreparedBatch):
        return batch
    if isinstance(batch, dict):
        batch = [batch]
    return PreparedBatch(model, batch)


def training_loss(model: WorldModel, batch, rng: np.random.Generator,
                  p_drop: float | None = None) -> nn.Tensor:
    """Diffusion training objective on a (prepared) batch of samples.

    Every sample provides the clean video latent, conditioning inputs and a
    caption id (see trainer.prepare_sample). Noise is drawn per sample with
    t ~ U(0,1); with probability p_drop the motion and camera conditions are
    zeroed (classifier-free guidance training). Samples flagged coarse have
    their motion/camera latents zeroed unconditionally.
    """
    pb = _as_prepared(model, batch)
    if p_drop is None:
        p_drop = model.cfg.diffusion.p_drop
    cc = model.cfg.codec
    lay = model.layout
    b = pb.size
    k, h, w = cc.k, cc.h, cc.w

    t = rng.uniform(size=b)
    eps = rng.standard_normal((b, k, lay.c_noised, h, w), dtype=np.float32).astype(
        model.dtype, copy=False
    )
    drop = rng.random(b) < p_drop

    keep = np.where(drop | pb.coarse, 0.0, 1.0).astype(model.dtype).reshape(b, 1, 1, 1, 1)
    if pb.cond_cached is not None:
        motion = nn.Tensor(pb.cond_cached[0] * keep)
        camera = nn.Tensor(pb.cond_cached[1] * keep)
    elif not np.any(keep):
        shape = (b, k, lay.c_motion, h, w)
        motion = nn.Tensor(np.zeros(shape, dtype=model.dtype))
        camera = nn.Tensor(np.zeros((b, k, lay.c_video, h, w), dtype=model.dtype))
    else:
        mask = nn.Tensor(keep)
        motion = nn.mul(model.motion_latent(pb.params), mask)
        camera = nn.mul(model.camera_latent(pb.rays), mask)

    if pb.z0_point_cached is not None:
        z0_point = nn.Tensor(pb.z0_point_cached)
    else:
        z0_point = model.enc_point.forward(nn.Tensor(pb.embedded))
    z0 = nn.concat([nn.Tensor(pb.z0_video), z0_point], axis=2)

    sched = model.schedule
    sig = sched.sigma(t).astype(model.dtype).reshape(b, 1, 1, 1, 1)
    bet = sched.beta(t).astype(model.dtype).reshape(b, 1, 1, 1, 1)
    z_t = nn.add(nn.mul(z0, nn.Tensor(sig)), nn.Tensor(bet * eps))

    cond = Conditions(
        frame=nn.Tensor(pb.frame), motion=motion, camera=camera, caption_ids=pb.caption_ids
    )
    eps_hat = model.denoiser.forward(z_t, t, cond)
    err = nn.sub(nn.Tensor(eps), eps_hat)
    return nn.tmean(nn.mul(err, err))


def _caption_for(style: str | None) -> int:
    if style is None:
        return NULL_CAPTION
    return CAPTION_IDS[style]


def _inference_conditions(model: WorldModel, first_frame: np.ndarray,
                          motion_seq: MotionSequence,
                          caption: int = NULL_CAPTION) -> tuple[Conditions, Conditions]:
    """Conditional and unconditional (motion/camera zeroed) branches."""
    cc = model.cfg.codec
    k = cc.k
    if len(motion_seq) != k:
        raise DimensionError(f"motion sequence has {len(motion_seq)} frames, model expects {k}")
    frame = model.frame_codec.encode_image(first_frame, k)[None].astype(model.dtype)
    motion = model.motion_latent(motion_seq.params[None]).data
    camera = model.camera_latent(model.camera_rays(motion_seq)[None]).data
    ids = np.array([caption])
    cond = Conditions(
        frame=nn.Tensor(frame),
        motion=nn.Tensor(motion),
        camera=nn.Tensor(camera),
        caption_ids=ids,
    )
    uncond = Conditions(
        frame=nn.Tensor(frame),
        motion=nn.Tensor(np.zeros_like(motion)),
        camera=nn.Tensor(np.zeros_like(camera)),
        caption_ids=ids,
    )
    return cond, uncond


def sample(model: WorldModel, first_frame: np.ndarray, motion_seq: MotionSequence,
           steps: int = 50, cfg: float = 7.5, seed: int = 0,
           return_pointmaps: bool = False, caption: int = NULL_CAPTION):
    """Generate a video from a first frame and a motion sequence.

    Point maps are not accepted: inference uses only the first frame and the
    human motion sequence. The reverse process is the deterministic DDIM-style
    update for epsilon prediction on a uniform grid t_i = 1 - i/steps, with
    classifier-free guidance eps = eps_u + cfg * (eps_c - eps_u). cfg == 1
    short-circuits to the conditional branch exactly; cfg == 0 follows the
    unconditional trajectory.

    Returns the decoded (k, H, W, 3) video clipped to [0, 1]; with
    return_pointmaps=True also returns diagnostic point maps in normalized
    units (see PointmapEncoder.decode_diagnostic).
    """
    if steps < 1:
        raise PreconditionError(f"steps must be >= 1, got {steps}")
    cc = model.cfg.codec
    lay = model.layout
    cond, uncond = _inference_conditions(model, first_frame, motion_seq, caption)

    rng = substream(seed, "sample")
    z = rng.standard_normal((1, cc.k, lay.c_noised, cc.h, cc.w)).astype(model.dtype)
    sched = model.schedule
    grid = 1.0 - np.arange(steps + 1, dtype=np.float64) / steps

    for i in range(steps):
        t_now, t_next = grid[i], grid[i + 1]
        tv = np.array([t_now])
        if cfg == 1.0:
            eps = model.denoiser.forward(nn.Tensor(z), tv, cond).data
        elif cfg == 0.0:
            eps = model.denoiser.forward(nn.Tensor(z), tv, uncond).data
        else:
            eps_c = model.denoiser.forward(nn.Tensor(z), tv, cond).data
            eps_u = model.denoiser.forward(nn.Tensor(z), tv, uncond).data
            eps = eps_u + cfg * (eps_c - eps_u)
        s_now = sched.sigma(t_now)
        s_next, b_next = sched.sigma(t_next), sched.beta(t_next)
        if s_now < _SIGMA_FLOOR:
            x0 = np.zeros_like(z)
        else:
            x0 = (z - sched.beta(t_now) * eps) / s_now
        z = (s_next * x0 + b_next * eps).astype(model.dtype)

    video_latent = z[0, :, : lay.c_video]
    video = np.clip(model.video_codec.decode_video(video_latent), 0.0, 1.0)
    if not return_pointmaps:
        return video
    point_latent = z[0, :, lay.c_video :]
    pointmaps = model.enc_point.decode_diagnostic(point_latent)
    return video, pointmaps


def eval_loss(model: WorldModel, batch, seed: int = 0,
              t_points: int = 8, zero_motion: bool = False,
              zero_camera: bool = False) -> float:
    """Deterministic denoising loss on a fixed t-grid with fixed noise draws.

    Used for comparable before/after training measurements and for the
    motion-conditioning ablation (zero_motion zeroes the part-aware motion
    latent at evaluation time, mirroring joint-train ablations).
    """
    pb = _as_prepared(model, batch)
    cc = model.cfg.codec
    lay = model.layout
    b = pb.size
    rng = substream(seed, "eval-loss")
    t_grid = (np.arange(t_points, dtype=np.float64) + 0.5) / t_points
    eps_draws = rng.standard_normal((t_points, b, cc.k, lay.c_noised, cc.h, cc.w)).astype(
        model.dtype
    )

    frame = nn.Tensor(pb.frame)
    motion = model.motion_latent(pb.params).data
    camera = model.camera_latent(pb.rays).data
    keep = np.where(pb.coarse, 0.0, 1.0).astype(model.dtype).reshape(b, 1, 1, 1, 1)
    motion = motion * keep
    camera = camera * keep
    if zero_motion:
        motion = np.zeros_like(motion)
    if zero_camera:
        camera = np.zeros_like(camera)
    z0_point = model.enc_point.forward(nn.Tensor(pb.embedded)).data
    z0 = np.concatenate([pb.z0_video, z0_point], axis=2)
    cond = Conditions(
        frame=frame,
        motion=nn.Tensor(motion),
        camera=nn.Tensor(camera),
        caption_ids=pb.caption_ids,
    )

    sched = model.schedule
    total = 0.0
    for j, t in enumerate(t_grid):
        eps = eps_draws[j]
        z_t = (sched.sigma(t) * z0 + sched.beta(t) * eps).astype(model.dtype)
        tv = np.full(b, t)
        eps_hat = model.denoiser.forward(nn.Tensor(z_t), tv, cond).data
        total += float(np.mean((eps - eps_hat) ** 2))
    return total / t_points
