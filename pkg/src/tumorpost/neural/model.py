"""Compact 3D patch classifier: conv(64)x2 / pool / conv(128)x2 / pool /
conv(256) / pool / FC(64) / FC(1) / sigmoid, all convs 3x3x3 stride 1
pad 1, pools 2x2x2 (skipped once a spatial dim reaches 1).

Channel widths are configurable so desk-scale pipelines can run a slimmer
variant; defaults match the reference architecture.
"""

import json
from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from .layers import Conv3d, Dense, Flatten, MaxPool3d, Relu, Sigmoid


@dataclass
class Cnn3dConfig:
    patch_size: int = 11
    conv_channels: tuple = (64, 64, 128, 128, 256)  # two blocks of two + one
    fc_width: int = 64
    center_patches: bool = False  # subtract per-patch mean before the net

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if len(self.conv_channels) != 5:
            raise ValueError("architecture uses exactly five conv layers")


# after which conv layer (1-based) a pooling stage sits
_POOL_AFTER = {2, 4, 5}


def _spatial_trace(s):
    dims = (s, s, s)
    trace = [dims]
    for _ in range(3):
        dims = MaxPool3d.output_dims(dims)
        trace.append(dims)
    return trace


class Cnn3dModel:
    def __init__(self, config: Cnn3dConfig = None, seed: int = 0):
        self.config = config or Cnn3dConfig()
        self.seed = seed
        gen = rngmod.stream(seed, "cnn-init")
        chans = self.config.conv_channels
        s = self.config.patch_size
        self.layers = []
        c_prev = 1
        conv_idx = 0
        dims = (s, s, s)
        for c in chans:
            conv_idx += 1
            self.layers.append(Conv3d(c_prev, c, gen))
            self.layers.append(Relu())
            c_prev = c
            if conv_idx in _POOL_AFTER:
                self.layers.append(MaxPool3d())
                dims = MaxPool3d.output_dims(dims)
        self.layers.append(Flatten())
        flat_dim = int(np.prod(dims)) * c_prev
        self.layers.append(Dense(flat_dim, self.config.fc_width, gen))
        self.layers.append(Relu())
        self.layers.append(Dense(self.config.fc_width, 1, gen))
        self.layers.append(Sigmoid())

    # -- forward / backward -------------------------------------------------

    def forward(self, patches, train=False) -> np.ndarray:
        """patches: (B, s, s, s) or (B, s, s, s, 1) float; returns (B,) probs."""
        x = np.asarray(patches, dtype=np.float64)
        if x.ndim == 4:
            x = x[..., None]
        s = self.config.patch_size
        if x.shape[1:] != (s, s, s, 1):
            raise ValueError(
                f"expected (B, {s}, {s}, {s}, 1) patches, got {x.shape}"
            )
        for layer in self.layers:
            x = layer.forward(x, train=train)
        self._trained_pass = train
        return x[:, 0]

    def backward(self, dprob) -> None:
        """Backprop from d(loss)/d(probability); fills per-layer grads."""
        if not getattr(self, "_trained_pass", False):
            raise RuntimeError("backward requires a forward pass with train=True")
        g = np.asarray(dprob, dtype=np.float64)[:, None]
        for layer in reversed(self.layers):
            g = layer.backward(g)
        self._trained_pass = False

    # -- parameter access ----------------------------------------------------

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params():
                out.append((f"layer{i}.{name}", arr))
        return out

    def gradients(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.grads():
                out.append((f"layer{i}.{name}", arr))
        return out

    def get_weights(self):
        return [arr.copy() for _, arr in self.parameters()]

    def set_weights(self, weights):
        params = self.parameters()
        if len(weights) != len(params):
            raise ValueError("weight list length mismatch")
        for (_, arr), src in zip(params, weights):
            if arr.shape != src.shape:
                raise ValueError("weight shape mismatch")
            arr[...] = src

    # -- serialization: JSON header + little-endian float64 blob -------------

    def save(self, path):
        header = {
            "format": "tumorpost-cnn3d",
            "version": 1,
            "patch_size": self.config.patch_size,
            "conv_channels": list(self.config.conv_channels),
            "fc_width": self.config.fc_width,
            "center_patches": self.config.center_patches,
            "seed": self.seed,
            "tensors": [
                {"name": name, "shape": list(arr.shape)}
                for name, arr in self.parameters()
            ],
        }
        blob = b"".join(
            np.ascontiguousarray(arr, dtype="<f8").tobytes()
            for _, arr in self.parameters()
        )
        head = json.dumps(header).encode()
        with open(path, "wb") as f:
            f.write(len(head).to_bytes(8, "little"))
            f.write(head)
            f.write(blob)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            n = int.from_bytes(f.read(8), "little")
            header = json.loads(f.read(n).decode())
            blob = f.read()
        if header.get("format") != "tumorpost-cnn3d" or header.get("version") != 1:
            raise ValueError(f"{path}: not a version-1 cnn3d file")
        model = cls(
            Cnn3dConfig(
                patch_size=header["patch_size"],
                conv_channels=tuple(header["conv_channels"]),
                fc_width=header["fc_width"],
                center_patches=header.get("center_patches", False),
            ),
            seed=header["seed"],
        )
        offset = 0
        weights = []
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            arr = np.frombuffer(
                blob, dtype="<f8", count=count, offset=offset
            ).reshape(shape).astype(np.float64)
            weights.append(arr)
            offset += count * 8
        model.set_weights(weights)
        return model
