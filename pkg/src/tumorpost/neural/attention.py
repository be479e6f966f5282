"""Spatial attention gating and sub-pixel (pixel shuffle) rearrangement.

The gate computes alpha = sigmoid(psi . relu(Wx*x + Wg*g + b)) with 1x1
mixing kernels and multiplies the encoder features elementwise; the gating
signal g is bilinearly resampled to x's spatial size first.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AttentionGateParams:
    w_x: np.ndarray = field(repr=False)   # (c_x, c_mid)
    w_g: np.ndarray = field(repr=False)   # (c_g, c_mid)
    b: np.ndarray = field(repr=False)     # (c_mid,)
    psi: np.ndarray = field(repr=False)   # (c_mid,)

    @classmethod
    def init(cls, c_x, c_g, c_mid, gen):
        return cls(
            w_x=gen.normal(0, np.sqrt(2.0 / c_x), size=(c_x, c_mid)),
            w_g=gen.normal(0, np.sqrt(2.0 / c_g), size=(c_g, c_mid)),
            b=np.zeros(c_mid),
            psi=gen.normal(0, np.sqrt(1.0 / c_mid), size=(c_mid,)),
        )


def _bilinear_weights(n_out, n_in):
    """Sample positions/weights for center-aligned bilinear resampling."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    lo0 = np.clip(lo, 0, n_in - 1)
    lo1 = np.clip(lo + 1, 0, n_in - 1)
    return lo0, lo1, frac


def bilinear_resample2d(g, out_hw):
    """(H, W, C) -> (out_h, out_w, C) center-aligned bilinear."""
    h_out, w_out = out_hw
    h_in, w_in = g.shape[:2]
    ry0, ry1, fy = _bilinear_weights(h_out, h_in)
    rx0, rx1, fx = _bilinear_weights(w_out, w_in)
    top = g[ry0][:, rx0] * (1 - fx)[None, :, None] + g[ry0][:, rx1] * fx[None, :, None]
    bot = g[ry1][:, rx0] * (1 - fx)[None, :, None] + g[ry1][:, rx1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def _bilinear_backward(dg_out, in_hw):
    h_in, w_in = in_hw
    h_out, w_out = dg_out.shape[:2]
    ry0, ry1, fy = _bilinear_weights(h_out, h_in)
    rx0, rx1, fx = _bilinear_weights(w_out, w_in)
    dg_in = np.zeros((h_in, w_in) + dg_out.shape[2:])
    for i in range(h_out):
        row = dg_out[i]
        wy0, wy1 = 1 - fy[i], fy[i]
        contrib_x0 = row * (1 - fx)[:, None]
        contrib_x1 = row * fx[:, None]
        np.add.at(dg_in[ry0[i]], rx0, wy0 * contrib_x0)
        np.add.at(dg_in[ry0[i]], rx1, wy0 * contrib_x1)
        np.add.at(dg_in[ry1[i]], rx0, wy1 * contrib_x0)
        np.add.at(dg_in[ry1[i]], rx1, wy1 * contrib_x1)
    return dg_in


def attention_gate(x, g, params: AttentionGateParams, with_grad=False):
    """x: (H, W, c_x) encoder features, g: (Hg, Wg, c_g) gating signal.

    Returns (gated, alpha) or, with_grad, (gated, alpha, backward) where
    backward(dout) -> (dx, dg).
    """
    if x.shape[2] != params.w_x.shape[0] or g.shape[2] != params.w_g.shape[0]:
        raise ValueError("channel count does not match gate parameters")
    g_rs = bilinear_resample2d(g, x.shape[:2])
    pre = x @ params.w_x + g_rs @ params.w_g + params.b
    relu = np.maximum(pre, 0.0)
    s = relu @ params.psi
    alpha = 1.0 / (1.0 + np.exp(-s))
    gated = x * alpha[:, :, None]
    if not with_grad:
        return gated, alpha

    def backward(dout):
        dalpha = (dout * x).sum(axis=2)
        dx = dout * alpha[:, :, None]
        ds = dalpha * alpha * (1.0 - alpha)
        drelu = ds[:, :, None] * params.psi[None, None, :]
        dpre = drelu * (pre > 0)
        dx = dx + dpre @ params.w_x.T
        dg_rs = dpre @ params.w_g.T
        dg = _bilinear_backward(dg_rs, g.shape[:2])
        return dx, dg

    return gated, alpha, backward


def pixel_shuffle(x, r=2):
    """(C, H, W) -> (C/r^2, rH, rW); out[c, r*i+di, r*j+dj] = x[c*r^2+di*r+dj, i, j]."""
    c, h, w = x.shape
    if c % (r * r) != 0:
        raise ValueError(f"channels {c} not divisible by r^2 = {r * r}")
    co = c // (r * r)
    return (
        x.reshape(co, r, r, h, w)
        .transpose(0, 3, 1, 4, 2)
        .reshape(co, h * r, w * r)
    )


def pixel_unshuffle(x, r=2):
    """Exact inverse of pixel_shuffle."""
    co, hr, wr = x.shape
    if hr % r != 0 or wr % r != 0:
        raise ValueError("spatial dims not divisible by r")
    h, w = hr // r, wr // r
    return (
        x.reshape(co, h, r, w, r)
        .transpose(0, 2, 4, 1, 3)
        .reshape(co * r * r, h, w)
    )
