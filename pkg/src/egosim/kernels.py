"""Hot numeric kernels: z-buffer point splatting and conv3d im2col/col2im.

Each kernel has two interchangeable implementations:

* a numba ``@njit`` loop (default when numba imports cleanly), and
* a vectorized numpy fallback.

Selection is dynamic via the ``EGOSIM_NUMBA`` environment variable
("0"/"false"/"off" forces the numpy path). The splat and im2col gathers are
bit-identical across backends; col2im is a scatter-add whose float summation
order matches between backends as well (both accumulate in kernel-offset
order).

Splat winner selection is deterministic: smallest depth wins a pixel, ties go
to the smallest point index.

``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

ENV_FLAG = "EGOSIM_NUMBA"

try:
    import numba

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    _HAS_NUMBA = False

_NUMBA_SPLAT = None


def has_numba() -> bool:
    return _HAS_NUMBA


def numba_enabled() -> bool:
    """True when the njit path is available and not disabled by EGOSIM_NUMBA."""
    flag = os.environ.get(ENV_FLAG, "1").strip().lower()
    return _HAS_NUMBA and flag not in ("0", "false", "off", "no")


def backend() -> str:
    return "numba" if numba_enabled() else "numpy"


def _splat_numpy(
    xyz: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    height: int,
    width: int,
    z_near: float,
) -> tuple[np.ndarray, np.ndarray]:
    z = xyz[:, 2]
    valid = z > z_near
    safe_z = np.where(valid, z, 1.0)
    u = fx * xyz[:, 0] / safe_z + cx
    v = fy * xyz[:, 1] / safe_z + cy
    ix = np.floor(u).astype(np.int64)
    iy = np.floor(v).astype(np.int64)
    valid &= (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)

    depth = np.full((height, width), np.inf)
    winner = np.full((height, width), -1, dtype=np.int64)
    idx = np.nonzero(valid)[0]
    if idx.size == 0:
        return depth, winner
    pix = iy[idx] * width + ix[idx]
    # sort by (pixel, depth, point index); the first row per pixel is the winner
    order = np.lexsort((idx, z[idx], pix))
    pix_sorted = pix[order]
    uniq_pix, first = np.unique(pix_sorted, return_index=True)
    win = idx[order][first]
    depth.reshape(-1)[uniq_pix] = z[win]
    winner.reshape(-1)[uniq_pix] = win
    return depth, winner


def _build_numba_splat():
    @numba.njit(cache=False)
    def _splat(xyz, fx, fy, cx, cy, height, width, z_near):  # pragma: no cover - jitted
        depth = np.full((height, width), np.inf)
        winner = np.full((height, width), -1, dtype=np.int64)
        for i in range(xyz.shape[0]):
            z = xyz[i, 2]
            if z <= z_near:
                continue
            u = fx * xyz[i, 0] / z + cx
            v = fy * xyz[i, 1] / z + cy
            ix = int(np.floor(u))
            iy = int(np.floor(v))
            if 0 <= ix < width and 0 <= iy < height:
                if z < depth[iy, ix]:
                    depth[iy, ix] = z
                    winner[iy, ix] = i
        return depth, winner

    return _splat


def _splat_numba(xyz, fx, fy, cx, cy, height, width, z_near):
    global _NUMBA_SPLAT
    if _NUMBA_SPLAT is None:
        _NUMBA_SPLAT = _build_numba_splat()
    return _NUMBA_SPLAT(xyz, fx, fy, cx, cy, height, width, z_near)


def splat_points(
    xyz_cam: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    height: int,
    width: int,
    z_near: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Splat camera-frame points into a z-buffer.

    Returns (depth, winner): depth is (H, W) float64 with inf where empty,
    winner is (H, W) int64 holding the index of the closest point through
    each pixel (-1 where no point lands).
    """
    xyz = np.ascontiguousarray(xyz_cam, dtype=np.float64)
    if xyz.ndim != 2 or xyz.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got {xyz.shape}")
    impl = _splat_numba if numba_enabled() else _splat_numpy
    return impl(xyz, float(fx), float(fy), float(cx), float(cy), int(height), int(width), float(z_near))


# ---------------------------------------------------------------------------
# conv3d im2col / col2im gathers
#
# cols layout: row r = ((b*D + d)*H + h)*W + w, column q = (((c*kd + a)*kh
# + bh)*kw + cw). The numpy and numba paths produce identical bytes; col2im
# accumulates in kernel-offset order on both paths.
# ---------------------------------------------------------------------------

_NUMBA_IM2COL = None
_NUMBA_COL2IM = None


def _im2col_numpy(xp: np.ndarray, kd: int, kh: int, kw: int,
                  d: int, h: int, w: int) -> np.ndarray:
    b, c = xp.shape[:2]
    sb, sc, sd, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, d, h, w, kd, kh, kw),
        strides=(sb, sc, sd, sh, sw, sd, sh, sw),
        writeable=False,
    )
    return view.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(b * d * h * w, c * kd * kh * kw)


def _col2im_numpy(gcols: np.ndarray, out_shape: tuple, kd: int, kh: int, kw: int,
                  d: int, h: int, w: int) -> np.ndarray:
    b, c = out_shape[:2]
    gxp = np.zeros(out_shape, dtype=gcols.dtype)
    g = gcols.reshape(b, d, h, w, c, kd, kh, kw)
    for a in range(kd):
        for bh in range(kh):
            for cw in range(kw):
                gxp[:, :, a : a + d, bh : bh + h, cw : cw + w] += g[
                    :, :, :, :, :, a, bh, cw
                ].transpose(0, 4, 1, 2, 3)
    return gxp


def _build_numba_im2col():
    @numba.njit(cache=False)
    def _im2col(xp, cols, kd, kh, kw, d, h, w):  # pragma: no cover - jitted
        b_n, c_n = xp.shape[0], xp.shape[1]
        for b in range(b_n):
            for z in range(d):
                for y in range(h):
                    for x in range(w):
                        r = ((b * d + z) * h + y) * w + x
                        q = 0
                        for c in range(c_n):
                            for a in range(kd):
                                for bh in range(kh):
                                    for cw in range(kw):
                                        cols[r, q] = xp[b, c, z + a, y + bh, x + cw]
                                        q += 1

    return _im2col


def _build_numba_col2im():
    @numba.njit(cache=False)
    def _col2im(gcols, gxp, kd, kh, kw, d, h, w):  # pragma: no cover - jitted
        b_n, c_n = gxp.shape[0], gxp.shape[1]
        for b in range(b_n):
            for c in range(c_n):
                for a in range(kd):
                    for bh in range(kh):
                        for cw in range(kw):
                            q = ((c * kd + a) * kh + bh) * kw + cw
                            for z in range(d):
                                for y in range(h):
                                    r0 = ((b * d + z) * h + y) * w
                                    for x in range(w):
                                        gxp[b, c, z + a, y + bh, x + cw] += gcols[r0 + x, q]

    return _col2im


def im2col3d(xp: np.ndarray, kd: int, kh: int, kw: int,
             d: int, h: int, w: int) -> np.ndarray:
    """Gather conv3d patches from a padded (B, C, D+, H+, W+) array."""
    if numba_enabled():
        global _NUMBA_IM2COL
        if _NUMBA_IM2COL is None:
            _NUMBA_IM2COL = _build_numba_im2col()
        b, c = xp.shape[:2]
        cols = np.empty((b * d * h * w, c * kd * kh * kw), dtype=xp.dtype)
        _NUMBA_IM2COL(np.ascontiguousarray(xp), cols, kd, kh, kw, d, h, w)
        return cols
    return np.ascontiguousarray(_im2col_numpy(xp, kd, kh, kw, d, h, w))


def col2im3d(gcols: np.ndarray, out_shape: tuple, kd: int, kh: int, kw: int,
             d: int, h: int, w: int) -> np.ndarray:
    """Scatter-add conv3d patch gradients back onto the padded input shape."""
    if numba_enabled():
        global _NUMBA_COL2IM
        if _NUMBA_COL2IM is None:
            _NUMBA_COL2IM = _build_numba_col2im()
        gxp = np.zeros(out_shape, dtype=gcols.dtype)
        _NUMBA_COL2IM(np.ascontiguousarray(gcols), gxp, kd, kh, kw, d, h, w)
        return gxp
    return _col2im_numpy(np.ascontiguousarray(gcols), out_shape, kd, kh, kw, d, h, w)
