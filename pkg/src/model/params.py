"""Named parameter map for the five networks, projection heads, mask tokens and τ.

Naming scheme (weights stored ``(in, out)``)::

    image_encoder.patch_embed.{weight,bias}
    image_encoder.blocks.<i>.{ln1,ln2}.{gamma,beta}
    image_encoder.blocks.<i>.attn.{q,k,v,o}.{weight,bias}
    image_encoder.blocks.<i>.mlp.{fc1,fc2}.{weight,bias}
    image_encoder.norm.{gamma,beta}
    pixel_decoder.{embed,head}.*      feature_decoder.{embed,head}.*
    bridge.embed.*                    (only when encoder and bridge widths differ)
    text_encoder.{tok_embed,pos_embed}
    image_proj.weight  text_proj.weight
    mask_token_pixel  mask_token_feature  log_tau
"""
import math
from collections.abc import Mapping
from typing import Iterator

import numpy as np

from src.config.run_config import ModelConfig, TransformerConfig
from src.numeric.rng import Rng
from src.numeric.tensor import Tensor
from src.types import FloatArray

IMAGE_ENCODER = "image_encoder"
PIXEL_DECODER = "pixel_decoder"
BRIDGE = "bridge"
FEATURE_DECODER = "feature_decoder"
TEXT_ENCODER = "text_encoder"
IMAGE_PROJ = "image_proj.weight"
TEXT_PROJ = "text_proj.weight"
MASK_TOKEN_PIXEL = "mask_token_pixel"
MASK_TOKEN_FEATURE = "mask_token_feature"
LOG_TAU = "log_tau"

# Init kinds
_NORMAL, _ZEROS, _ONES, _LOG_TAU = "normal", "zeros", "ones", "log_tau"
_TRUNCATE_SIGMAS = 2.0


def _block_shapes(prefix: str, cfg: TransformerConfig) -> list[tuple[str, tuple, str]]:
    d, h = cfg.width, cfg.width * cfg.mlp_ratio
    out: list[tuple[str, tuple, str]] = []
    for i in range(cfg.depth):
        b = f"{prefix}.blocks.{i}"
        out += [(f"{b}.ln1.gamma", (d,), _ONES), (f"{b}.ln1.beta", (d,), _ZEROS)]
        for proj in ("q", "k", "v", "o"):
            out += [(f"{b}.attn.{proj}.weight", (d, d), _NORMAL),
                    (f"{b}.attn.{proj}.bias", (d,), _ZEROS)]
        out += [(f"{b}.ln2.gamma", (d,), _ONES), (f"{b}.ln2.beta", (d,), _ZEROS)]
        out += [(f"{b}.mlp.fc1.weight", (d, h), _NORMAL), (f"{b}.mlp.fc1.bias", (h,), _ZEROS),
                (f"{b}.mlp.fc2.weight", (h, d), _NORMAL), (f"{b}.mlp.fc2.bias", (d,), _ZEROS)]
    out += [(f"{prefix}.norm.gamma", (d,), _ONES), (f"{prefix}.norm.beta", (d,), _ZEROS)]
    return out


def _linear_shapes(name: str, d_in: int, d_out: int) -> list[tuple[str, tuple, str]]:
    return [(f"{name}.weight", (d_in, d_out), _NORMAL), (f"{name}.bias", (d_out,), _ZEROS)]


def parameter_layout(config: ModelConfig) -> list[tuple[str, tuple, str]]:
    """Ordered ``(name, shape, init_kind)`` for every parameter of the model."""
    enc, dec, brg, fdec, txt = (config.image_encoder, config.pixel_decoder, config.bridge,
                                config.feature_decoder, config.text_encoder)
    d = enc.width
    layout: list[tuple[str, tuple, str]] = []

    layout += _linear_shapes(f"{IMAGE_ENCODER}.patch_embed", config.patch_dim, d)
    layout += _block_shapes(IMAGE_ENCODER, enc)

    layout += _linear_shapes(f"{PIXEL_DECODER}.embed", d, dec.width)
    layout += _block_shapes(PIXEL_DECODER, dec)
    layout += _linear_shapes(f"{PIXEL_DECODER}.head", dec.width, config.patch_dim)

    if brg.width != d:
        layout += _linear_shapes(f"{BRIDGE}.embed", d, brg.width)
    layout += _block_shapes(BRIDGE, brg)

    layout += _linear_shapes(f"{FEATURE_DECODER}.embed", d, fdec.width)
    layout += _block_shapes(FEATURE_DECODER, fdec)
    layout += _linear_shapes(f"{FEATURE_DECODER}.head", fdec.width, brg.width)

    layout += [(f"{TEXT_ENCODER}.tok_embed", (config.vocab_size, txt.width), _NORMAL),
               (f"{TEXT_ENCODER}.pos_embed", (config.max_text_len, txt.width), _NORMAL)]
    layout += _block_shapes(TEXT_ENCODER, txt)

    layout += [(IMAGE_PROJ, (brg.width, config.joint_dim), _NORMAL),
               (TEXT_PROJ, (txt.width, config.joint_dim), _NORMAL),
               (MASK_TOKEN_PIXEL, (1, dec.width), _ZEROS),
               (MASK_TOKEN_FEATURE, (1, fdec.width), _ZEROS),
               (LOG_TAU, (1,), _LOG_TAU)]
    return layout


def is_decay_exempt(name: str) -> bool:
    """Layer-norm affines, biases, mask tokens and the temperature skip weight decay."""
    return (name.endswith((".bias", ".gamma", ".beta"))
            or name in (MASK_TOKEN_PIXEL, MASK_TOKEN_FEATURE, LOG_TAU))


class ModelParams(Mapping):
    """Read-only mapping ``name -> Tensor`` that also carries its :class:`ModelConfig`.

    Tensors are mutated in place by the optimizer; the mapping itself never
    changes shape after construction.
    """

    def __init__(self, tensors: dict[str, Tensor], config: ModelConfig):
        self._tensors = dict(tensors)
        self.config = config

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        return f"ModelParams({len(self)} tensors, {self.parameter_count()} scalars)"

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, FloatArray], config: ModelConfig,
                    requires_grad: bool = True) -> "ModelParams":
        tensors = {name: Tensor(np.array(value), requires_grad=requires_grad, name=name)
                   for name, value in arrays.items()}
        return cls(tensors, config)

    def arrays(self) -> dict[str, FloatArray]:
        return {name: t.data for name, t in self._tensors.items()}

    def names_with_prefix(self, *prefixes: str) -> list[str]:
        return [n for n in self._tensors if n.startswith(prefixes)]

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def parameter_count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    @property
    def tau(self) -> float:
        return float(np.exp(self._tensors[LOG_TAU].data[0]))

    def clamp_tau(self) -> None:
        """Keep τ = exp(log_tau) at or below ``config.tau_max``."""
        t = self._tensors[LOG_TAU]
        ceiling = math.log(self.config.tau_max)
        np.minimum(t.data, ceiling, out=t.data)


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Truncated-normal weights (σ = ``init_std``, cut at 2σ), zero biases and mask tokens."""
    arrays: dict[str, FloatArray] = {}
    for name, shape, kind in parameter_layout(config):
        if kind == _NORMAL:
            arrays[name] = rng.normal_array(shape, std=config.init_std, truncate=_TRUNCATE_SIGMAS)
        elif kind == _ONES:
            arrays[name] = np.ones(shape)
        elif kind == _LOG_TAU:
            arrays[name] = np.full(shape, math.log(config.tau_init))
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams.from_arrays(arrays, config)


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed-form count; matches ``init_params(config, rng).parameter_count()``."""
    enc, dec, brg, fdec, txt = (config.image_encoder, config.pixel_decoder, config.bridge,
                                config.feature_decoder, config.text_encoder)
    d, dpx = enc.width, config.patch_dim

    def stack(cfg: TransformerConfig) -> int:
        return cfg.depth * cfg.block_parameter_count() + 2 * cfg.width

    def linear(d_in: int, d_out: int) -> int:
        return d_in * d_out + d_out

    total = linear(dpx, d) + stack(enc)
    total += linear(d, dec.width) + stack(dec) + linear(dec.width, dpx)
    total += (linear(d, brg.width) if brg.width != d else 0) + stack(brg)
    total += linear(d, fdec.width) + stack(fdec) + linear(fdec.width, brg.width)
    total += (config.vocab_size + config.max_text_len) * txt.width + stack(txt)
    total += brg.width * config.joint_dim + txt.width * config.joint_dim
    total += dec.width + fdec.width + 1
    return total
