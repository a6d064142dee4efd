"""Prunable block-stack model: construction, forward pass, activation capture, block deletion."""

from __future__ import annotations

import copy
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autodiff import Tensor, layer_norm, linear, softmax
from .errors import HookIndexError, InvalidArgumentError, ShapeError


class BlockKind(str, Enum):
    RESIDUAL_MLP = "ResidualMlpBlock"
    ENCODER = "EncoderBlock"


@dataclass(frozen=True)
class BlockSpec:
    """Shape of one block.

    ``in_width`` defaults to ``width``; a different value makes a projection
    block (linear shortcut) that changes the hidden dimension. Encoder blocks
    view the hidden vector as ``tokens`` tokens of ``width // tokens`` features.
    """

    kind: BlockKind = BlockKind.RESIDUAL_MLP
    width: int = 16
    inner_width: int = 32
    in_width: int | None = None
    tokens: int = 4

    def __post_init__(self):
        object.__setattr__(self, "kind", BlockKind(self.kind))
        if self.in_width is None:
            object.__setattr__(self, "in_width", self.width)
        for name in ("width", "inner_width", "in_width", "tokens"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"BlockSpec.{name} must be >= 1, got {getattr(self, name)}")
        if self.kind is BlockKind.ENCODER:
            if self.in_width != self.width:
                raise InvalidArgumentError("encoder blocks must preserve width")
            if self.width % self.tokens:
                raise InvalidArgumentError(f"width {self.width} not divisible by tokens {self.tokens}")


def block_param_shapes(spec: BlockSpec) -> dict[str, tuple[int, ...]]:
    a, d, m = spec.in_width, spec.width, spec.inner_width
    if spec.kind is BlockKind.RESIDUAL_MLP:
        shapes = {
            "ln_g": (a,),
            "ln_b": (a,),
            "fc1_w": (m, a),
            "fc1_b": (m,),
            "fc2_w": (d, m),
            "fc2_b": (d,),
        }
        if a != d:
            shapes["proj_w"] = (d, a)
        return shapes
    e = d // spec.tokens
    shapes = {"ln1_g": (d,), "ln1_b": (d,)}
    for p in "qkvo":
        shapes[f"{p}_w"] = (e, e)
        shapes[f"{p}_b"] = (e,)
    shapes.update({
        "ln2_g": (d,),
        "ln2_b": (d,),
        "fc1_w": (m, d),
        "fc1_b": (m,),
        "fc2_w": (d, m),
        "fc2_b": (d,),
    })
    return shapes


def block_param_count(spec: BlockSpec) -> int:
    """Closed-form parameter count of one block."""
    a, d, m = spec.in_width, spec.width, spec.inner_width
    mlp = m * a + m + d * m + d
    if spec.kind is BlockKind.RESIDUAL_MLP:
        return 2 * a + mlp + (d * a if a != d else 0)
    e = d // spec.tokens
    return 4 * d + 4 * (e * e + e) + mlp


@dataclass
class Block:
    spec: BlockSpec
    params: dict[str, np.ndarray]
    trainable: bool = True

    @property
    def in_width(self) -> int:
        return self.spec.in_width

    @property
    def out_width(self) -> int:
        return self.spec.width

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())


@dataclass
class Model:
    input_dim: int
    num_classes: int
    embed: dict[str, np.ndarray]
    blocks: list[Block]
    head: dict[str, np.ndarray]
    hook_positions: list[int] = field(default_factory=list)
    embed_trainable: bool = True
    head_trainable: bool = True

    @property
    def width(self) -> int:
        return self.embed["weight"].shape[0]

    @property
    def dtype(self):
        return self.embed["weight"].dtype

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for k, v in self.embed.items():
            yield f"embed.{k}", v
        for i, block in enumerate(self.blocks):
            for k, v in block.params.items():
                yield f"blocks.{i}.{k}", v
        for k, v in self.head.items():
            yield f"head.{k}", v

    def is_trainable(self, name: str) -> bool:
        section, rest = name.split(".", 1)
        if section == "embed":
            return self.embed_trainable
        if section == "head":
            return self.head_trainable
        return self.blocks[int(rest.split(".", 1)[0])].trainable

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def trainable_parameter_count(self) -> int:
        return sum(p.size for n, p in self.named_parameters() if self.is_trainable(n))

    def nonzero_parameter_count(self) -> int:
        return sum(int(np.count_nonzero(p)) for _, p in self.named_parameters())

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        section, rest = name.split(".", 1)
        if section == "embed":
            self.embed[rest] = value
        elif section == "head":
            self.head[rest] = value
        else:
            idx, key = rest.split(".", 1)
            self.blocks[int(idx)].params[key] = value

    def copy(self) -> Model:
        return copy.deepcopy(self)

    def astype(self, dtype) -> Model:
        out = self.copy()
        for name, p in list(out.named_parameters()):
            out.set_parameter(name, p.astype(dtype))
        return out

    def unfreeze(self) -> Model:
        out = self.copy()
        out.embed_trainable = out.head_trainable = True
        for b in out.blocks:
            b.trainable = True
        return out


def _check_dims(**dims: int) -> None:
    for name, value in dims.items():
        if int(value) < 1:
            raise InvalidArgumentError(f"{name} must be >= 1, got {value}")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _init_block(spec: BlockSpec, rng: np.random.Generator) -> Block:
    params = {}
    for name, shape in block_param_shapes(spec).items():
        if name.endswith("_g"):
            params[name] = np.ones(shape, dtype=np.float32)
        elif name.startswith("ln"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = params[name[:-2] + "_w"].shape[1] if name.endswith("_b") else shape[1]
            params[name] = _uniform(rng, shape, fan_in)
    return Block(spec, params)


def build_model_from_specs(
    input_dim: int, specs: Sequence[BlockSpec], num_classes: int, seed: int = 0
) -> Model:
    """Build a model from an explicit block list (widths may change between blocks)."""
    _check_dims(input_dim=input_dim, num_blocks=len(specs), num_classes=num_classes)
    for prev, nxt in zip(specs, specs[1:]):
        if prev.width != nxt.in_width:
            raise ShapeError(f"block output width {prev.width} does not feed input width {nxt.in_width}")
    rng = np.random.default_rng(seed)
    d0, d_last = specs[0].in_width, specs[-1].width
    embed = {
        "weight": _uniform(rng, (d0, input_dim), input_dim),
        "bias": _uniform(rng, (d0,), input_dim),
    }
    blocks = [_init_block(s, rng) for s in specs]
    head = {
        "weight": _uniform(rng, (num_classes, d_last), d_last),
        "bias": _uniform(rng, (num_classes,), d_last),
    }
    return Model(input_dim, num_classes, embed, blocks, head, list(range(len(specs))))


def build_model(
    input_dim: int, num_blocks: int, spec: BlockSpec, num_classes: int, seed: int = 0
) -> Model:
    _check_dims(input_dim=input_dim, num_blocks=num_blocks, num_classes=num_classes)
    if spec.in_width != spec.width:
        raise InvalidArgumentError("build_model needs a width-preserving BlockSpec")
    return build_model_from_specs(input_dim, [spec] * num_blocks, num_classes, seed)


# -- forward ---------------------------------------------------------------------


def _mlp_branch(x, p, prefix, name, rec):
    h = layer_norm(x, p[f"{prefix}_g"], p[f"{prefix}_b"])
    h = _linear(h, p, "fc1", name, rec).gelu()
    return _linear(h, p, "fc2", name, rec)


def _linear(x: Tensor, p, key: str, name: str, rec) -> Tensor:
    if rec is not None:
        flat = x.data.reshape(-1, x.shape[-1]).astype(np.float64)
        wname = f"{name}.{key}_w"
        rec[wname] = rec.get(wname, 0.0) + (flat * flat).sum(axis=0)
    return linear(x, p[f"{key}_w"], p.get(f"{key}_b"))


def _block_forward(block: Block, x: Tensor, p: Mapping[str, Tensor], name: str, rec) -> Tensor:
    spec = block.spec
    if spec.kind is BlockKind.RESIDUAL_MLP:
        skip = x
        if "proj_w" in p:
            skip = _linear(x, p, "proj", name, rec)
        return skip + _mlp_branch(x, p, "ln", name, rec)
    n, d = x.shape
    t = spec.tokens
    e = d // t
    h = layer_norm(x, p["ln1_g"], p["ln1_b"]).reshape(n, t, e)
    q = _linear(h, p, "q", name, rec)
    k = _linear(h, p, "k", name, rec)
    v = _linear(h, p, "v", name, rec)
    attn = softmax((q @ k.swap_last()) * (1.0 / math.sqrt(e)), axis=-1)
    o = _linear(attn @ v, p, "o", name, rec).reshape(n, d)
    x = x + o
    return x + _mlp_branch(x, p, "ln2", name, rec)


def constant_params(model: Model) -> dict[str, Tensor]:
    return {name: Tensor(v) for name, v in model.named_parameters()}


def _as_batch(model: Model, batch) -> np.ndarray:
    arr = np.asarray(batch)
    if arr.ndim != 2 or arr.shape[1] != model.input_dim:
        raise ShapeError(f"expected batch of shape (n, {model.input_dim}), got {arr.shape}")
    return arr.astype(model.dtype, copy=False)


def run(
    model: Model,
    batch,
    params: Mapping[str, Tensor] | None = None,
    capture: Sequence[int] = (),
    linear_sq_norms: dict | None = None,
) -> tuple[Tensor, dict[int, np.ndarray]]:
    """Forward pass on autodiff tensors.

    Returns the logits tensor and the post-block activations at ``capture``.
    ``linear_sq_norms``, when given, accumulates per-input-feature squared
    norms of every linear layer's input, keyed by weight name.
    """
    x_np = _as_batch(model, batch)
    if params is None:
        params = constant_params(model)
    wanted = set(capture)
    captured: dict[int, np.ndarray] = {}
    if linear_sq_norms is not None:
        flat = x_np.astype(np.float64)
        linear_sq_norms["embed.weight"] = linear_sq_norms.get("embed.weight", 0.0) + (flat * flat).sum(0)
    x = linear(Tensor(x_np), params["embed.weight"], params["embed.bias"])
    views: dict[int, dict[str, Tensor]] = {}
    for name, t in params.items():
        if name.startswith("blocks."):
            _, idx, key = name.split(".", 2)
            views.setdefault(int(idx), {})[key] = t
    for i, block in enumerate(model.blocks):
        x = _block_forward(block, x, views[i], f"blocks.{i}", linear_sq_norms)
        if i in wanted:
            captured[i] = x.data.copy()
    if linear_sq_norms is not None:
        flat = x.data.astype(np.float64)
        linear_sq_norms["head.weight"] = linear_sq_norms.get("head.weight", 0.0) + (flat * flat).sum(0)
    logits = linear(x, params["head.weight"], params["head.bias"])
    return logits, captured


def forward(model: Model, batch) -> np.ndarray:
    """Logits for ``batch`` (n x input_dim)."""
    logits, _ = run(model, batch)
    return logits.data


def validate_hooks(model: Model, hooks: Sequence[int]) -> list[int]:
    hooks = [int(h) for h in hooks]
    for h in hooks:
        if not 0 <= h < model.num_blocks:
            raise HookIndexError(f"hook {h} out of range for {model.num_blocks} blocks")
    if any(b <= a for a, b in zip(hooks, hooks[1:])):
        raise HookIndexError(f"hooks must be strictly increasing, got {hooks}")
    return hooks


def capture_activations(model: Model, batch, hooks: Sequence[int] | None = None) -> dict[int, np.ndarray]:
    """Post-block activations (n x width) at each hook, in hook order."""
    hooks = validate_hooks(model, model.hook_positions if hooks is None else hooks)
    _, captured = run(model, batch, capture=hooks)
    return {h: captured[h] for h in hooks}


def delete_block(model: Model, index: int) -> Model:
    if not 0 <= index < model.num_blocks:
        raise HookIndexError(f"block index {index} out of range for {model.num_blocks} blocks")
    out = model.copy()
    del out.blocks[index]
    out.hook_positions = [h - (h > index) for h in out.hook_positions if h != index]
    return out
