"""Latent producers and the channel-layout registry.

The learned VAEs of a full-scale system are replaced by a deterministic,
exactly invertible patch embedding (non-overlapping p x p patches mapped
through a fixed orthogonal matrix). Motion parameters reach the spatial grid
through a per-group linear lift followed by an eight-layer 3-D conv stack;
camera ray maps and point maps get their own stacks. Final layers of every
conditioning stack are zero-initialized so all conditioning pathways are
exact no-ops at initialization.

Channel concatenation order is fixed: frame | motion | video(+camera) | point.
``ChannelLayout`` is the single source of truth for offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionError, PreconditionError
from .motion import BODY_DIM, HANDS_DIM, HEAD_DIM
from .rng import substream

ROLES = ("frame", "motion", "video", "point", "camera")
C_MOTION = 3  # one channel per part group
GROUP_DIMS = {"body_feet": BODY_DIM, "hands": HANDS_DIM, "head": HEAD_DIM}
GROUP_ORDER = ("body_feet", "hands", "head")  # fixed motion-latent channel order

_PATCH_CODEC_SEED = 0x51C0DE


@dataclass(frozen=True)
class LatentBlock:
    """A role-tagged (k, c, h, w) latent tensor."""

    role: str
    data: np.ndarray

    def __post_init__(self):
        if self.role not in ROLES:
            raise PreconditionError(f"unknown latent role {self.role!r}")
        d = np.asarray(self.data)
        if d.ndim != 4:
            raise DimensionError(f"latent must be (k, c, h, w), got shape {d.shape}")
        object.__setattr__(self, "data", d)

    @property
    def k(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class ChannelLayout:
    """Channel offsets of the concatenated conditioning tensor."""

    c_frame: int
    c_video: int
    c_point: int
    c_motion: int = C_MOTION

    @property
    def total(self) -> int:
        return self.c_frame + self.c_motion + self.c_video + self.c_point

    @property
    def c_noised(self) -> int:
        return self.c_video + self.c_point

    def slices(self) -> dict[str, slice]:
        o1 = self.c_frame
        o2 = o1 + self.c_motion
        o3 = o2 + self.c_video
        return {
            "frame": slice(0, o1),
            "motion": slice(o1, o2),
            "video": slice(o2, o3),
            "point": slice(o3, o3 + self.c_point),
        }

    def to_dict(self) -> dict:
        return {k: [s.start, s.stop] for k, s in self.slices().items()}


class PatchCodec:
    """Invertible patch embedding standing in for a learned VAE.

    Images are cut into non-overlapping p x p patches; each patch's
    (dy, dx, rgb) values are mapped through a fixed semi-orthogonal matrix.
    With channels == 3 p^2 (the default) the map is orthogonal and decoding
    is exact; narrower widths project and decode is best-effort.
    """

    def __init__(self, patch: int, channels: int, key: str = "video"):
        pdim = 3 * patch * patch
        if channels > pdim:
            raise PreconditionError(f"channels {channels} exceeds patch dimension {pdim}")
        rng = substream(_PATCH_CODEC_SEED, "patch-codec", key)
        m = rng.normal(size=(pdim, pdim))
        q, r = np.linalg.qr(m)
        q = q * np.sign(np.diag(r))
        self.patch = patch
        self.channels = channels
        self.embed = q[:, :channels].T  # (channels, pdim), orthonormal rows

    def _check_dims(self, height: int, width: int):
        p = self.patch
        if height % p or width % p:
            raise DimensionError(f"image dims ({height}, {width}) not divisible by patch {p}")

    def encode_video(self, video: np.ndarray) -> np.ndarray:
        """(k, H, W, 3) in [0, 1] -> (k, c, H/p, W/p) float32."""
        video = np.asarray(video, dtype=np.float64)
        if video.ndim != 4 or video.shape[-1] != 3:
            raise DimensionError(f"expected (k, H, W, 3) video, got {video.shape}")
        k, height, width, _ = video.shape
        self._check_dims(height, width)
        p = self.patch
        h, w = height // p, width // p
        x = video.reshape(k, h, p, w, p, 3).transpose(0, 1, 3, 2, 4, 5).reshape(k, h, w, -1)
        lat = x @ self.embed.T
        return np.ascontiguousarray(lat.transpose(0, 3, 1, 2)).astype(np.float32)

    def decode_video(self, latent: np.ndarray) -> np.ndarray:
        """(k, c, h, w) -> (k, H, W, 3) float32; exact inverse when orthogonal."""
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim != 4 or latent.shape[1] != self.channels:
            raise DimensionError(
                f"expected (k, {self.channels}, h, w) latent, got {latent.shape}"
            )
        k, _, h, w = latent.shape
        p = self.patch
        x = latent.transpose(0, 2, 3, 1) @ self.embed
        frames = x.reshape(k, h, w, p, p, 3).transpose(0, 1, 3, 2, 4, 5)
        return np.ascontiguousarray(frames.reshape(k, h * p, w * p, 3)).astype(np.float32)

    def encode_image(self, image: np.ndarray, k: int) -> np.ndarray:
        """Encode one (H, W, 3) image and tile it across k time steps."""
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[-1] != 3:
            raise DimensionError(f"expected (H, W, 3) image, got {image.shape}")
        lat = self.encode_video(image[None])
        return np.repeat(lat, k, axis=0)

    def decode_image(self, latent: np.ndarray) -> np.ndarray:
        """Decode a frame latent's first time step back to (H, W, 3)."""
        return self.decode_video(np.asarray(latent)[:1])[0]


def encode_frame(image: np.ndarray, codec: PatchCodec, k: int) -> LatentBlock:
    """First-frame latent, tiled across all k time steps."""
    return LatentBlock(role="frame", data=codec.encode_image(image, k))


def decode_video(latent: LatentBlock | np.ndarray, codec: PatchCodec) -> np.ndarray:
    data = latent.data if isinstance(latent, LatentBlock) else latent
    return codec.decode_video(data)


class _ConvStack:
    """SiLU-separated same-size 3-D conv stack; the last layer is zero-init."""

    def __init__(self, widths: list[int], kernels: list[tuple[int, int, int]],
                 rng: np.random.Generator, dtype=np.float32):
        self.layers = []
        n = len(widths) - 1
        for i in range(n):
            self.layers.append(
                nn.Conv3dLayer(widths[i], widths[i + 1], kernels[i], rng, dtype,
                               zero_init=(i == n - 1))
            )

    def __call__(self, x: nn.Tensor) -> nn.Tensor:
        for layer in self.layers[:-1]:
            x = nn.silu(layer(x))
        return self.layers[-1](x)

    def named_params(self, prefix: str):
        for i, layer in enumerate(self.layers):
            yield from layer.named_params(f"{prefix}.conv{i}")


def _to_conv_layout(x: nn.Tensor) -> nn.Tensor:
    # (B, k, c, h, w) -> (B, c, k, h, w)
    return nn.transpose(x, (0, 2, 1, 3, 4))


def _from_conv_layout(x: nn.Tensor) -> nn.Tensor:
    return nn.transpose(x, (0, 2, 1, 3, 4))


def _alternating_kernels(n: int) -> list[tuple[int, int, int]]:
    """Full spatio-temporal taps on even layers, spatial-only on odd ones."""
    return [(3, 3, 3) if i % 2 == 0 else (1, 3, 3) for i in range(n)]


class MotionEncoder:
    """Per-group motion encoder: linear lift to the grid + 8-layer conv stack."""

    LAYERS = 8

    def __init__(self, group_id: str, h: int, w: int, hidden: int,
                 rng: np.random.Generator, dtype=np.float32):
        if group_id not in GROUP_DIMS:
            raise PreconditionError(f"unknown motion group {group_id!r}")
        self.group_id = group_id
        self.d_group = GROUP_DIMS[group_id]
        self.h, self.w = h, w
        self.lift = nn.Linear(self.d_group, h * w, rng, dtype)
        widths = [1] + [hidden] * (self.LAYERS - 1) + [1]
        kernels = _alternating_kernels(self.LAYERS)
        self.stack = _ConvStack(widths, kernels, rng, dtype)

    def forward(self, params: nn.Tensor) -> nn.Tensor:
        """(B, k, d_group) -> (B, k, 1, h, w)."""
        b, k, d = params.data.shape
        if d != self.d_group:
            raise DimensionError(
                f"group {self.group_id!r} expects {self.d_group} dims, got {d}"
            )
        x = self.lift(params)
        x = nn.reshape(x, (b, k, 1, self.h, self.w))
        x = _to_conv_layout(x)
        x = self.stack(x)
        return _from_conv_layout(x)

    def encode(self, params: np.ndarray) -> np.ndarray:
        arr = np.asarray(params, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None]
        return self.forward(nn.Tensor(arr)).data[0 if np.asarray(params).ndim == 2 else slice(None)]

    def named_params(self, prefix: str):
        yield from self.lift.named_params(f"{prefix}.lift")
        yield from self.stack.named_params(f"{prefix}")


class CameraEncoder:
    """Eight-layer conv stack over per-pixel Plücker ray maps.

    Output channel count equals the video latent width so the camera latents
    can be added directly onto the noised video channels.
    """

    LAYERS = 8

    def __init__(self, c_video: int, hidden: int, rng: np.random.Generator,
                 dtype=np.float32):
        widths = [6] + [hidden] * (self.LAYERS - 1) + [c_video]
        kernels = _alternating_kernels(self.LAYERS - 1) + [(1, 1, 1)]
        self.stack = _ConvStack(widths, kernels, rng, dtype)
        self.c_video = c_video

    def forward(self, rays: nn.Tensor) -> nn.Tensor:
        """(B, k, h, w, 6) -> (B, k, c_video, h, w)."""
        if rays.data.ndim != 5 or rays.data.shape[-1] != 6:
            raise DimensionError(f"expected (B, k, h, w, 6) rays, got {rays.data.shape}")
        x = nn.transpose(rays, (0, 4, 1, 2, 3))
        x = self.stack(x)
        return _from_conv_layout(x)

    def encode(self, rays: np.ndarray) -> np.ndarray:
        arr = np.asarray(rays, dtype=np.float32)
        squeeze = arr.ndim == 4
        if squeeze:
            arr = arr[None]
        out = self.forward(nn.Tensor(arr)).data
        return out[0] if squeeze else out

    def named_params(self, prefix: str):
        yield from self.stack.named_params(prefix)


def normalize_pointmaps(pmaps: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Normalize a (k, H, W, 3) point-map sequence to zero mean, unit max-extent.

    Returns (normalized, mean, scale); scale is the largest per-axis extent
    (1.0 for degenerate sequences). Recorded so diagnostics can invert it.
    """
    pmaps = np.asarray(pmaps, dtype=np.float64)
    if not np.all(np.isfinite(pmaps)):
        raise PreconditionError("point maps must be finite")
    mu = pmaps.reshape(-1, 3).mean(axis=0)
    extent = pmaps.reshape(-1, 3).max(axis=0) - pmaps.reshape(-1, 3).min(axis=0)
    scale = float(np.max(extent))
    if scale <= 0.0:
        scale = 1.0
    return (pmaps - mu) / scale, mu, scale


class PointmapEncoder:
    """Fixed patch embedding of normalized point maps + 5-layer conv adapter."""

    ADAPTER_LAYERS = 5

    def __init__(self, patch: int, c_point: int, hidden: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.codec = PatchCodec(patch, 3 * patch * patch, key="point")
        c_in = self.codec.channels
        widths = [c_in] + [hidden] * (self.ADAPTER_LAYERS - 1) + [c_point]
        # pointwise projections at the wide ends, mixing kernels between
        kernels = [(1, 1, 1), (3, 3, 3), (1, 3, 3), (3, 3, 3), (1, 1, 1)]
        self.adapter = _ConvStack(widths, kernels, rng, dtype)
        self.c_point = c_point

    def embed_maps(self, pmaps: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, float]]:
        """Fixed (non-learned) part: normalize + patch-embed one sequence."""
        normed, mu, scale = normalize_pointmaps(pmaps)
        # reuse the video patch pipeline; point maps are 3-channel images
        lat = self.codec.encode_video(normed)
        return lat, (mu, scale)

    def forward(self, embedded: nn.Tensor) -> nn.Tensor:
        """(B, k, 3p^2, h, w) patch-embedded maps -> (B, k, c_point, h, w)."""
        x = _to_conv_layout(embedded)
        x = self.adapter(x)
        return _from_conv_layout(x)

    def encode(self, pmaps: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, float]]:
        lat, norm = self.embed_maps(pmaps)
        out = self.forward(nn.Tensor(lat[None].astype(np.float32)))
        return out.data[0], norm

    def decode_diagnostic(self, point_latent: np.ndarray,
                          norm: tuple[np.ndarray, float] | None = None) -> np.ndarray:
        """Approximate point maps from the first 3p^2 point-latent channels.

        The adapter is not invertible; this inverts only the fixed patch
        embedding, for diagnostics.
        """
        c_in = self.codec.channels
        sliced = np.asarray(point_latent)[:, :c_in]
        maps = self.codec.decode_video(sliced).astype(np.float64)
        if norm is not None:
            mu, scale = norm
            maps = maps * scale + mu
        return maps

    def named_params(self, prefix: str):
        yield from self.adapter.named_params(prefix)


def encode_motion_group(group: np.ndarray, group_id: str, encoder: MotionEncoder) -> np.ndarray:
    """(k, d_group) parameters -> (k, 1, h, w) latent for one part group."""
    group = np.asarray(group, dtype=np.float32)
    if group.ndim != 2:
        raise DimensionError(f"expected (k, d) group parameters, got {group.shape}")
    if encoder.group_id != group_id:
        raise PreconditionError(f"encoder is for {encoder.group_id!r}, not {group_id!r}")
    if group.shape[1] != GROUP_DIMS[group_id]:
        raise DimensionError(
            f"group {group_id!r} expects {GROUP_DIMS[group_id]} dims, got {group.shape[1]}"
        )
    return encoder.forward(nn.Tensor(group[None])).data[0]


def assemble_motion_latent(body_feet: np.ndarray, hands: np.ndarray,
                           head: np.ndarray) -> LatentBlock:
    """Concatenate per-group latents in the fixed order body_feet | hands | head."""
    parts = [np.asarray(p) for p in (body_feet, hands, head)]
    shape = parts[0].shape
    for p in parts:
        if p.shape != shape or p.ndim != 4 or p.shape[1] != 1:
            raise DimensionError(
                f"group latents must share a (k, 1, h, w) shape, got {[x.shape for x in parts]}"
            )
    return LatentBlock(role="motion", data=np.concatenate(parts, axis=1))


def concat_conditions(frame: np.ndarray, motion: np.ndarray,
                      video_noised_plus_camera: np.ndarray, point_noised: np.ndarray,
                      layout: ChannelLayout) -> np.ndarray:
    """Channel-wise concatenation in the fixed order frame|motion|video|point."""
    blocks = {
        "frame": np.asarray(frame),
        "motion": np.asarray(motion),
        "video": np.asarray(video_noised_plus_camera),
        "point": np.asarray(point_noised),
    }
    widths = {
        "frame": layout.c_frame,
        "motion": layout.c_motion,
        "video": layout.c_video,
        "point": layout.c_point,
    }
    ref = blocks["frame"].shape
    for name, arr in blocks.items():
        if arr.ndim != 4:
            raise DimensionError(f"{name} block must be (k, c, h, w), got {arr.shape}")
        if arr.shape[1] != widths[name]:
            raise DimensionError(
                f"{name} block has {arr.shape[1]} channels, layout expects {widths[name]}"
            )
        if arr.shape[0] != ref[0] or arr.shape[2:] != ref[2:]:
            raise DimensionError("all blocks must share k, h, w")
    return np.concatenate([blocks["frame"], blocks["motion"], blocks["video"],
                           blocks["point"]], axis=1)


def split_conditions(x: np.ndarray, layout: ChannelLayout) -> dict[str, np.ndarray]:
    """Recover the original blocks from a concatenated tensor (bit-exact)."""
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != layout.total:
        raise DimensionError(f"expected (k, {layout.total}, h, w), got {x.shape}")
    return {name: x[:, s] for name, s in layout.slices().items()}
