"""
decoder.py - Recurrent multi-resolution mask decoder

For each referring expression, coarse to fine over the pyramid:

    input_l = concat(feature_l, tile(phrase), skip_l)
    (h_l, c_l) = ConvLSTM_l(input_l, (h_l, c_l))

where skip_l is a 1x1 projection of the upsampled hidden state just
produced at level l+1 (absent at the coarsest level). The mask head
upsamples h_0 to full resolution, applies a small conv and a sigmoid.

The per-level (h, c) pairs are carried from one expression to the next
within an image, which is what conditions each mask on the earlier ones.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .encoder import BackboneConfig, EncoderParams, FeaturePyramid, encoder_forward, encoder_init
from .language import PhraseEmbedding
from .tensor import (
    ShapeError,
    Tensor,
    add,
    broadcast_spatial,
    concat_channels,
    conv2d,
    mul,
    sigmoid,
    slice_channels,
    tanh,
    upsample_nearest,
)

logger = logging.getLogger(__name__)

FORGET_BIAS = 1.0

LSTMState = Tuple[Tensor, Tensor]
DecoderState = List[LSTMState]
MaskSequence = List[Tensor]
PhraseLike = Union[PhraseEmbedding, Tensor, np.ndarray]


@dataclass
class DecoderConfig:
    """
    Attributes:
        hidden: ConvLSTM hidden channels per pyramid level (finest first)
        embed_dim: phrase embedding size; 0 disables the language input
        kernel: ConvLSTM kernel size (odd, same padding)
        side: output mask side S
        head_kernel: kernel of the output conv (odd)
        carry_state: thread (h, c) across expressions; False resets every step
    """
    hidden: List[int] = field(default_factory=lambda: [32, 32, 16, 16])
    embed_dim: int = 16
    kernel: int = 3
    side: int = 64
    head_kernel: int = 3
    carry_state: bool = True

    def validate(self, backbone: BackboneConfig):
        if len(self.hidden) != backbone.levels:
            raise ValueError(f"Decoder has {len(self.hidden)} hidden sizes for {backbone.levels} pyramid levels")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"Decoder hidden sizes must be positive: {self.hidden}")
        if self.embed_dim < 0:
            raise ValueError(f"Phrase embedding size must be >= 0, got {self.embed_dim}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"ConvLSTM kernel must be odd, got {self.kernel}")
        if self.head_kernel < 1 or self.head_kernel % 2 == 0:
            raise ValueError(f"Head kernel must be odd, got {self.head_kernel}")
        if self.side != backbone.side:
            raise ValueError(f"Decoder side {self.side} differs from backbone side {backbone.side}")


@dataclass
class ConvLSTMParams:
    """Joint gate transform over concat(x, h): weight [4H, C_in + H, k, k], bias [4H]."""
    weight: Tensor
    bias: Tensor

    @property
    def hidden(self) -> int:
        return self.weight.shape[0] // 4

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] - self.hidden


@dataclass
class SegmenterParams:
    """Encoder and decoder parameters of one model."""
    encoder: EncoderParams
    decoder_config: DecoderConfig
    tensors: Dict[str, Tensor]

    @property
    def backbone(self) -> BackboneConfig:
        return self.encoder.config

    @property
    def uses_language(self) -> bool:
        return self.decoder_config.embed_dim > 0

    def parameters(self) -> Dict[str, Tensor]:
        merged = dict(self.encoder.tensors)
        merged.update(self.tensors)
        return merged

    def lstm(self, level: int) -> ConvLSTMParams:
        return ConvLSTMParams(self.tensors[f"decoder.level{level}.lstm.weight"],
                              self.tensors[f"decoder.level{level}.lstm.bias"])


def decoder_param_shapes(backbone: BackboneConfig, config: DecoderConfig) -> Dict[str, tuple]:
    shapes = {}
    levels = backbone.levels
    for l in range(levels - 1, -1, -1):
        h = config.hidden[l]
        c_in = backbone.channels[l] + config.embed_dim
        if l < levels - 1:
            shapes[f"decoder.level{l}.skip.weight"] = (h, config.hidden[l + 1], 1, 1)
            shapes[f"decoder.level{l}.skip.bias"] = (h,)
            c_in += h
        shapes[f"decoder.level{l}.lstm.weight"] = (4 * h, c_in + h, config.kernel, config.kernel)
        shapes[f"decoder.level{l}.lstm.bias"] = (4 * h,)
    shapes["decoder.head.weight"] = (1, config.hidden[0], config.head_kernel, config.head_kernel)
    shapes["decoder.head.bias"] = (1,)
    return shapes


def build_model(backbone: BackboneConfig, config: DecoderConfig, seed: int) -> SegmenterParams:
    """Initialize encoder and decoder from one seed."""
    backbone.validate()
    config.validate(backbone)
    encoder = encoder_init(backbone, seed)
    rng = np.random.default_rng([seed, 1])
    tensors = {}
    for name, shape in decoder_param_shapes(backbone, config).items():
        if name.endswith(".weight"):
            bound = 1.0 / np.sqrt(shape[1] * shape[2] * shape[3])
            data = rng.uniform(-bound, bound, size=shape)
        else:
            data = np.zeros(shape)
            if ".lstm." in name:
                h = shape[0] // 4
                data[h:2 * h] = FORGET_BIAS
        tensors[name] = Tensor(data, requires_grad=True)
    return SegmenterParams(encoder=encoder, decoder_config=config, tensors=tensors)


# ----------------------------------------------------------------------
# ConvLSTM
# ----------------------------------------------------------------------
def convlstm_step(cell: ConvLSTMParams, x: Tensor, state: LSTMState) -> LSTMState:
    """
    One ConvLSTM update with gates i, f, o (sigmoid) and g (tanh):

        c' = f * c + i * g
        h' = o * tanh(c')
    """
    h_prev, c_prev = state
    hid = cell.hidden
    if h_prev.shape != c_prev.shape or h_prev.shape[0] != hid:
        raise ShapeError(f"ConvLSTM state shapes {h_prev.shape}, {c_prev.shape} do not match {hid} hidden channels")
    if x.data.ndim != 3 or x.shape[0] != cell.in_channels or x.shape[1:] != h_prev.shape[1:]:
        raise ShapeError(
            f"ConvLSTM input shape {x.shape} incompatible with {cell.in_channels} input channels "
            f"and state shape {h_prev.shape}"
        )

    gates = conv2d(concat_channels([x, h_prev]), cell.weight, cell.bias,
                   stride=1, padding=cell.weight.shape[2] // 2)
    i = sigmoid(slice_channels(gates, 0, hid))
    f = sigmoid(slice_channels(gates, hid, 2 * hid))
    o = sigmoid(slice_channels(gates, 2 * hid, 3 * hid))
    g = tanh(slice_channels(gates, 3 * hid, 4 * hid))

    c_next = add(mul(f, c_prev), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


# ----------------------------------------------------------------------
# Decoder
# ----------------------------------------------------------------------
def zero_state(params: SegmenterParams) -> DecoderState:
    state = []
    for h, side in zip(params.decoder_config.hidden, params.backbone.level_sides()):
        state.append((Tensor(np.zeros((h, side, side))), Tensor(np.zeros((h, side, side)))))
    return state


def _phrase_tensor(phrase: Optional[PhraseLike]) -> Optional[Tensor]:
    if phrase is None or isinstance(phrase, Tensor):
        return phrase
    if isinstance(phrase, PhraseEmbedding):
        return Tensor(phrase.vector)
    return Tensor(phrase)


def decoder_step(params: SegmenterParams, pyramid: FeaturePyramid, phrase: Optional[PhraseLike],
                 state: DecoderState) -> Tuple[Tensor, DecoderState]:
    """
    Predict one mask and advance the recurrent state.

    Args:
        params: model parameters
        pyramid: encoder output for the image
        phrase: embedding of the current expression (None when the model has no language input)
        state: per-level (h, c) from the previous expression

    Returns:
        ([1, S, S] mask probabilities, new state)
    """
    cfg = params.decoder_config
    backbone = params.backbone
    p = params.tensors
    levels = backbone.levels

    if len(pyramid) != levels or len(state) != levels:
        raise ShapeError(f"Decoder expects {levels} pyramid levels and states, got {len(pyramid)} and {len(state)}")
    v = _phrase_tensor(phrase)
    if cfg.embed_dim > 0:
        if v is None:
            raise ValueError("Decoder with language input needs a phrase embedding")
        if v.shape != (cfg.embed_dim,):
            raise ShapeError(f"Phrase embedding shape {v.shape} does not match ({cfg.embed_dim},)")
    elif v is not None:
        raise ValueError("Decoder without language input was given a phrase embedding")

    new_state: DecoderState = [None] * levels
    above: Optional[Tensor] = None
    for l in range(levels - 1, -1, -1):
        feature = pyramid[l]
        side = feature.shape[1]
        parts = [feature]
        if v is not None:
            parts.append(broadcast_spatial(v, side, side))
        if above is not None:
            skip = conv2d(upsample_nearest(above, 2), p[f"decoder.level{l}.skip.weight"],
                          p[f"decoder.level{l}.skip.bias"], stride=1, padding=0)
            parts.append(skip)
        h, c = convlstm_step(params.lstm(l), concat_channels(parts), state[l])
        new_state[l] = (h, c)
        above = h

    head_in = upsample_nearest(new_state[0][0], 2)
    logits = conv2d(head_in, p["decoder.head.weight"], p["decoder.head.bias"],
                    stride=1, padding=cfg.head_kernel // 2)
    return sigmoid(logits), new_state


def _roll(params: SegmenterParams, image: Tensor, phrases: Sequence[Optional[PhraseLike]]) -> MaskSequence:
    pyramid = encoder_forward(params.encoder, image)
    state = zero_state(params)
    masks = []
    for phrase in phrases:
        if not params.decoder_config.carry_state:
            state = zero_state(params)
        mask, state = decoder_step(params, pyramid, phrase, state)
        masks.append(mask)
    return masks


def forward_sequence(params: SegmenterParams, image: Tensor, phrases: Sequence[PhraseLike]) -> MaskSequence:
    """Encode the image once, then decode one mask per phrase in order."""
    if not phrases:
        raise ValueError("forward_sequence needs at least one phrase")
    if not params.uses_language:
        raise ValueError("Model has no language input; use forward_blank")
    return _roll(params, image, list(phrases))


def forward_blank(params: SegmenterParams, image: Tensor, steps: int) -> MaskSequence:
    """Language-free rollout producing a fixed number of masks."""
    if steps < 1:
        raise ValueError(f"forward_blank needs at least one step, got {steps}")
    if params.uses_language:
        raise ValueError("Model expects phrases; use forward_sequence")
    return _roll(params, image, [None] * steps)
