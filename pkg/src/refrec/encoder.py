"""
encoder.py - Multi-resolution convolutional visual encoder

Each level is conv3x3 -> relu -> conv3x3 -> relu -> avg-pool(2), so level l
(0-based) of the pyramid has spatial side S / 2^(l+1). There is no pooling
or classifier head after the last block; every block output is a pyramid
level and every parameter is trainable.
"""

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .tensor import Tensor, ShapeError, conv2d, pool2d, relu


@dataclass
class BackboneConfig:
    """Encoder shape configuration."""
    levels: int = 4
    channels: List[int] = field(default_factory=lambda: [16, 32, 64, 64])
    side: int = 64
    in_channels: int = 3

    def validate(self):
        if self.levels < 2:
            raise ValueError(f"Backbone needs at least 2 levels, got {self.levels}")
        if len(self.channels) != self.levels:
            raise ValueError(f"Backbone has {self.levels} levels but {len(self.channels)} channel sizes")
        if any(c < 1 for c in self.channels):
            raise ValueError(f"Backbone channel sizes must be positive: {self.channels}")
        if self.in_channels < 1:
            raise ValueError(f"Backbone input channels must be positive, got {self.in_channels}")
        if self.side < 2 ** self.levels or self.side % (2 ** self.levels):
            raise ValueError(f"Image side {self.side} not divisible by 2^{self.levels}")

    def level_sides(self) -> List[int]:
        return [self.side // 2 ** (l + 1) for l in range(self.levels)]


@dataclass
class EncoderParams:
    config: BackboneConfig
    tensors: Dict[str, Tensor]

    def parameters(self) -> Dict[str, Tensor]:
        return self.tensors


# Ordered list of feature maps, finest first
FeaturePyramid = List[Tensor]


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def conv_param_shapes(config: BackboneConfig) -> Dict[str, tuple]:
    """Name -> shape for every encoder parameter, in creation order."""
    shapes = {}
    c_in = config.in_channels
    for l, c in enumerate(config.channels):
        prefix = f"encoder.level{l}"
        shapes[f"{prefix}.conv1.weight"] = (c, c_in, 3, 3)
        shapes[f"{prefix}.conv1.bias"] = (c,)
        shapes[f"{prefix}.conv2.weight"] = (c, c, 3, 3)
        shapes[f"{prefix}.conv2.bias"] = (c,)
        c_in = c
    return shapes


def encoder_init(config: BackboneConfig, seed: int) -> EncoderParams:
    """Seeded He-uniform weights, zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in conv_param_shapes(config).items():
        if name.endswith(".weight"):
            data = he_uniform(rng, shape, fan_in=shape[1] * shape[2] * shape[3])
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return EncoderParams(config=config, tensors=tensors)


def encoder_forward(params: EncoderParams, image: Tensor) -> FeaturePyramid:
    """Run the image through every block; returns one feature map per level."""
    cfg = params.config
    expected = (cfg.in_channels, cfg.side, cfg.side)
    if image.shape != expected:
        raise ShapeError(f"Encoder expects image of shape {expected}, got {image.shape}")

    p = params.tensors
    pyramid = []
    x = image
    for l in range(cfg.levels):
        prefix = f"encoder.level{l}"
        x = relu(conv2d(x, p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"], stride=1, padding=1))
        x = relu(conv2d(x, p[f"{prefix}.conv2.weight"], p[f"{prefix}.conv2.bias"], stride=1, padding=1))
        x = pool2d(x, 2, mode="avg")
        pyramid.append(x)
    return pyramid
