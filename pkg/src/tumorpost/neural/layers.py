"""Dense-tensor layers with hand-written backward passes (float64 only).

Activations are channels-last: (batch, D, H, W, C).  Convolutions are
3x3x3, stride 1, zero pad 1 (size preserving), computed as 27 shifted
matmuls so BLAS does the heavy lifting.  Max pooling is 2x2x2 with floor
semantics (trailing odd voxels are dropped) and first-occurrence argmax
gradient routing.
"""

import numpy as np

KERNEL = 3
PAD = 1
_OFFSETS = [(dz, dy, dx) for dz in range(3) for dy in range(3) for dx in range(3)]


_NARROW_LIMIT = 32  # c_in at or below this uses the per-offset column path


class Conv3d:
    """3x3x3 stride-1 pad-1 convolution; weights (27, c_in, c_out).

    Three forward paths keep BLAS shapes fat at any width: a single im2col
    matmul for 1-channel input, per-offset column matmuls for narrow input,
    and an output-scatter accumulation for wide input.  Backward is one
    uniform pass driven by shifted gradient blocks.
    """

    def __init__(self, c_in, c_out, gen):
        fan_in = 27 * c_in
        self.w = gen.normal(0.0, np.sqrt(2.0 / fan_in), size=(27, c_in, c_out))
        self.b = np.zeros(c_out)
        self._x = None

    def params(self):
        return [("w", self.w), ("b", self.b)]

    @staticmethod
    def _pad(x):
        b, d, h, w, c = x.shape
        xp = np.zeros((b, d + 2, h + 2, w + 2, c))
        xp[:, 1:-1, 1:-1, 1:-1, :] = x
        return xp

    def forward(self, x, train=False):
        x = np.ascontiguousarray(x)
        b, d, h, w, c_in = x.shape
        c_out = self.w.shape[2]
        n = b * d * h * w
        if c_in == 1:
            xp = self._pad(x)[..., 0]
            col3 = np.empty((27, n))
            for k, (dz, dy, dx) in enumerate(_OFFSETS):
                col3[k] = xp[:, dz:dz + d, dy:dy + h, dx:dx + w].reshape(n)
            col = np.ascontiguousarray(col3.T)
            out = (col @ self.w[:, 0, :]).reshape(b, d, h, w, c_out)
        elif c_in <= _NARROW_LIMIT:
            xp = self._pad(x)
            out_flat = np.zeros((n, c_out))
            for k, (dz, dy, dx) in enumerate(_OFFSETS):
                xs = xp[:, dz:dz + d, dy:dy + h, dx:dx + w, :].reshape(n, c_in)
                out_flat += xs @ self.w[k]
            out = out_flat.reshape(b, d, h, w, c_out)
        else:
            x_flat = x.reshape(n, c_in)
            acc = np.zeros((b, d + 2, h + 2, w + 2, c_out))
            # y[p] = sum_k x[p + off_k - 1] w_k: scatter x @ w_k by 1 - off_k
            for k, (dz, dy, dx) in enumerate(_OFFSETS):
                t = (x_flat @ self.w[k]).reshape(b, d, h, w, c_out)
                acc[:, 2 - dz:2 - dz + d, 2 - dy:2 - dy + h,
                    2 - dx:2 - dx + w, :] += t
            out = np.ascontiguousarray(acc[:, 1:-1, 1:-1, 1:-1, :])
        out += self.b
        if train:
            self._x = x
        return out

    def backward(self, dout):
        x = self._x
        b, d, h, w, c_in = x.shape
        c_out = self.w.shape[2]
        self.db = dout.sum(axis=(0, 1, 2, 3))
        x_flat = x.reshape(-1, c_in)
        dyp = np.zeros((b, d + 2, h + 2, w + 2, c_out))
        dyp[:, 1:-1, 1:-1, 1:-1, :] = dout
        self.dw = np.empty_like(self.w)
        dx_flat = np.zeros((b * d * h * w, c_in))
        for k, (dz, dy, dx) in enumerate(_OFFSETS):
            # dt_k[p] = dY[p - (off_k - 1)] with zero padding
            dt = np.ascontiguousarray(
                dyp[:, 2 - dz:2 - dz + d, 2 - dy:2 - dy + h, 2 - dx:2 - dx + w, :]
            ).reshape(-1, c_out)
            self.dw[k] = x_flat.T @ dt
            dx_flat += dt @ self.w[k].T
        self._x = None
        return dx_flat.reshape(b, d, h, w, c_in)

    def grads(self):
        return [("w", self.dw), ("b", self.db)]


class MaxPool3d:
    """2x2x2 max pooling with floor semantics; identity when any dim is 1."""

    def __init__(self):
        self._cache = None

    def params(self):
        return []

    def grads(self):
        return []

    @staticmethod
    def output_dims(dims):
        if min(dims) <= 1:
            return tuple(dims)
        return tuple(n // 2 for n in dims)

    def forward(self, x, train=False):
        b, d, h, w, c = x.shape
        if min(d, h, w) <= 1:
            if train:
                self._cache = ("skip", x.shape)
            return x
        od, oh, ow = d // 2, h // 2, w // 2
        xv = x[:, :2 * od, :2 * oh, :2 * ow, :].reshape(b, od, 2, oh, 2, ow, 2, c)
        xw = xv.transpose(0, 1, 3, 5, 2, 4, 6, 7).reshape(b, od, oh, ow, 8, c)
        am = xw.argmax(axis=4)
        out = np.take_along_axis(xw, am[:, :, :, :, None, :], axis=4)[:, :, :, :, 0, :]
        if train:
            self._cache = ("pool", x.shape, am)
        return out

    def backward(self, dout):
        kind = self._cache[0]
        if kind == "skip":
            self._cache = None
            return dout
        _, x_shape, am = self._cache
        b, d, h, w, c = x_shape
        od, oh, ow = d // 2, h // 2, w // 2
        dxw = np.zeros((b, od, oh, ow, 8, c))
        np.put_along_axis(dxw, am[:, :, :, :, None, :], dout[:, :, :, :, None, :], axis=4)
        dxv = dxw.reshape(b, od, oh, ow, 2, 2, 2, c).transpose(0, 1, 4, 2, 5, 3, 6, 7)
        dx = np.zeros(x_shape)
        dx[:, :2 * od, :2 * oh, :2 * ow, :] = dxv.reshape(b, 2 * od, 2 * oh, 2 * ow, c)
        self._cache = None
        return dx


class Relu:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dout):
        dx = dout * self._mask
        self._mask = None
        return dx


class Flatten:
    def __init__(self):
        self._shape = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x, train=False):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        dx = dout.reshape(self._shape)
        self._shape = None
        return dx


class Dense:
    def __init__(self, n_in, n_out, gen):
        self.w = gen.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self._x = None

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def forward(self, x, train=False):
        if train:
            self._x = x
        return x @ self.w + self.b

    def backward(self, dout):
        self.dw = self._x.T @ dout
        self.db = dout.sum(axis=0)
        dx = dout @ self.w.T
        self._x = None
        return dx

    def grads(self):
        return [("w", self.dw), ("b", self.db)]


class Sigmoid:
    def __init__(self):
        self._y = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x, train=False):
        y = 1.0 / (1.0 + np.exp(-x))
        if train:
            self._y = y
        return y

    def backward(self, dout):
        dx = dout * self._y * (1.0 - self._y)
        self._y = None
        return dx
