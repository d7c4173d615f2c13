"""CIFAR ResNets, FP-layer substitution by configuration string, and ImageNet counting.

A configuration string has one bit per residual layer of the base network;
``'1'`` replaces that layer by an FP-layer (a short stack of FP-blocks with no
shortcuts). The stem convolution and classification head are never touched.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .fp_block import FPBlock, FpBlockSpec, count_block_params
from .layers import (
    BatchNorm2d, Conv2d, GlobalAvgPool, Linear, Module, Sequential, conv_bn_relu,
)
from .ops import BatchNormSpec, Conv2dSpec
from .tensor import Tensor, child_seed, no_grad

CIFAR_BLOCKS = {"resnet20": 3, "resnet32": 5, "resnet44": 7}
# FP-blocks per replaced layer: the block count of the next-smaller base
CIFAR_FP_BLOCKS = {"resnet20": 1, "resnet32": 3, "resnet44": 5}
CIFAR_WIDTHS = (16, 32, 64)

IMAGENET_LAYOUT = {
    "resnet18": ("basic", (2, 2, 2, 2)),
    "resnet34": ("basic", (3, 4, 6, 3)),
    "resnet50": ("bottleneck", (3, 4, 6, 3)),
}
IMAGENET_WIDTHS = (64, 128, 256, 512)

BASES = tuple(CIFAR_BLOCKS) + tuple(IMAGENET_LAYOUT)


class ConfigError(ValueError):
    pass


class RejectedConfigError(ConfigError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    base: str
    config: str | None = None
    q: int | None = None
    num_classes: int | None = None
    ablation: bool = False

    def __post_init__(self):
        if self.base not in BASES:
            raise ConfigError(f"unknown base {self.base!r}; choose from {', '.join(BASES)}")
        n_layers = self.num_layers
        config = self.config if self.config is not None else "0" * n_layers
        if len(config) != n_layers or set(config) - {"0", "1"}:
            raise ConfigError(f"{self.base} needs a binary configuration string of length {n_layers}, "
                              f"got {config!r}")
        if self.is_cifar and config == "1" * n_layers:
            raise RejectedConfigError(
                f"configuration {config!r} replaces every layer of {self.base}; "
                "this setting does not train to usable accuracy and is rejected")
        object.__setattr__(self, "config", config)
        if self.q is None:
            object.__setattr__(self, "q", 2 if self.is_cifar else 1)
        if self.q < 1:
            raise ConfigError(f"expansion factor q must be positive, got {self.q}")
        if self.num_classes is None:
            object.__setattr__(self, "num_classes", 10 if self.is_cifar else 1000)

    @property
    def is_cifar(self) -> bool:
        return self.base in CIFAR_BLOCKS

    @property
    def num_layers(self) -> int:
        return 3 if self.base in CIFAR_BLOCKS else 4

    @property
    def name(self) -> str:
        if "1" not in self.config:
            return self.base
        tag = "-ablation" if self.ablation else ""
        return f"fp-{self.base}-{self.config}{tag}"


@dataclass
class LayerRow:
    name: str
    kind: str
    in_shape: tuple | None
    out_shape: tuple | None
    params: int
    downsample: bool = False


@dataclass
class ModelSummary:
    name: str
    config: str
    q: int
    total_params: int
    per_layer_params: list[tuple[str, int]]
    depth: int
    rows: list[LayerRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_layer_params"] = [list(p) for p in self.per_layer_params]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"model: {self.name}", f"config: {self.config}", f"q: {self.q}",
                 f"depth: {self.depth}", ""]
        lines.append(f"{'layer':<18}{'type':<22}{'input':<18}{'output':<18}{'params':>10}")
        for r in self.rows:
            shp_in = "x".join(map(str, r.in_shape)) if r.in_shape else "-"
            shp_out = "x".join(map(str, r.out_shape)) if r.out_shape else "-"
            kind = r.kind + (" [pool]" if r.downsample else "")
            lines.append(f"{r.name:<18}{kind:<22}{shp_in:<18}{shp_out:<18}{r.params:>10,}")
        lines.append("")
        lines.append(f"total parameters: {self.total_params:,}")
        return "\n".join(lines)


class BasicBlock(Module):
    """Two 3x3 conv-BN stages, ReLU after the residual sum.

    Shape changes use the parameter-free shortcut (subsample + zero channels).
    """

    def __init__(self, d_in: int, d_out: int, stride: int = 1, seed=0):
        super().__init__()
        self.d_in, self.d_out, self.stride = d_in, d_out, stride
        self.conv1 = Conv2d(Conv2dSpec(d_in, d_out, 3, stride=stride, padding=1), child_seed(seed, 0))
        self.bn1 = BatchNorm2d(BatchNormSpec(d_out))
        self.conv2 = Conv2d(Conv2dSpec(d_out, d_out, 3, stride=1, padding=1), child_seed(seed, 1))
        self.bn2 = BatchNorm2d(BatchNormSpec(d_out))

    def forward(self, x):
        h = ops.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        if self.stride != 1 or self.d_in != self.d_out:
            x = ops.subsample_pad(x, self.d_out, self.stride)
        return ops.relu(h + x)

    def extra_repr(self):
        return f"{self.d_in}->{self.d_out}, stride={self.stride}"


class CifarResNet(Module):
    def __init__(self, spec: ModelSpec, seed=0):
        super().__init__()
        if not spec.is_cifar:
            raise ConfigError(f"{spec.base} is not a CIFAR base network")
        self.model_spec = spec
        self.seed = seed
        n = CIFAR_BLOCKS[spec.base]
        m = CIFAR_FP_BLOCKS[spec.base]
        self.stem = conv_bn_relu(3, CIFAR_WIDTHS[0], 3, seed=child_seed(seed, 0))
        d_in = CIFAR_WIDTHS[0]
        for i, (width, bit) in enumerate(zip(CIFAR_WIDTHS, spec.config), start=1):
            reduce = i > 1
            if bit == "1":
                blocks = [FPBlock(FpBlockSpec(d_in if j == 0 else width, width, spec.q, 3,
                                              downsample=reduce and j == 0, ablation=spec.ablation),
                                  child_seed(seed, i, j))
                          for j in range(m)]
            else:
                blocks = [BasicBlock(d_in if j == 0 else width, width, 2 if reduce and j == 0 else 1,
                                     child_seed(seed, i, j))
                          for j in range(n)]
            setattr(self, f"layer{i}", Sequential(*blocks))
            d_in = width
        self.pool = GlobalAvgPool()
        self.fc = Linear(CIFAR_WIDTHS[-1], spec.num_classes, child_seed(seed, 4))

    def layers(self) -> list[Sequential]:
        return [self.layer1, self.layer2, self.layer3]

    def forward(self, x):
        x = self.stem(x)
        for layer in self.layers():
            x = layer(x)
        return self.fc(self.pool(x))


def build_cifar_resnet(base: str, num_classes: int = 10, seed=0) -> CifarResNet:
    return CifarResNet(ModelSpec(base, num_classes=num_classes), seed)


def apply_fp_config(spec: ModelSpec, seed=0):
    """Build ``spec.base`` with the layers flagged in ``spec.config`` replaced by FP-layers.

    CIFAR bases return a trainable model; ImageNet bases return a
    :class:`ModelSummary` (parameter accounting only).
    """
    if spec.is_cifar:
        return CifarResNet(spec, seed)
    return imagenet_summary(spec)


def _count(module: Module) -> int:
    return sum(p.size for p in module.parameters())


def count_learnable(module: Module, exclude_bn: bool = False) -> int:
    """Walk the module tree and count learnable scalars, optionally skipping BN layers."""
    if exclude_bn and isinstance(module, BatchNorm2d):
        return 0
    total = sum(p.size for p in module._params.values() if p.learnable)
    for _, child in module.children():
        total += count_learnable(child, exclude_bn)
    return total


def _depth(module: Module) -> int:
    if isinstance(module, FPBlock):
        return 3  # expand, filter stage, recombine
    if isinstance(module, BasicBlock):
        return 2
    if isinstance(module, (Conv2d, Linear)):
        return 1
    return sum(_depth(c) for _, c in module.children())


def summarize(model: CifarResNet, input_hw: int = 32) -> ModelSummary:
    """Exact per-stage parameter enumeration plus shapes from a 1-image probe."""
    spec = model.model_spec
    stages: list[tuple[str, Module]] = [("stem", model.stem)]
    for i, layer in enumerate(model.layers(), start=1):
        for j, block in enumerate(layer):
            stages.append((f"layer{i}.{j}", block))
    stages.append(("head", Sequential(model.pool, model.fc)))

    was_training = model.training
    model.eval()
    rows = []
    x = Tensor(np.zeros((1, 3, input_hw, input_hw), dtype=model.fc.weight.dtype))
    with no_grad():
        for name, stage in stages:
            y = stage(x)
            if isinstance(stage, FPBlock):
                kind = "FPAblationBlock" if stage.spec.ablation else "FPBlock"
                down = stage.spec.downsample
            elif isinstance(stage, BasicBlock):
                kind, down = "BasicBlock", False
            else:
                kind, down = ("Conv-BN-ReLU" if name == "stem" else "AvgPool-Linear"), False
            rows.append(LayerRow(name, kind, x.shape[1:], y.shape[1:], _count(stage), down))
            x = y
    model.train(was_training)

    per_layer = [("stem", _count(model.stem))]
    per_layer += [(f"layer{i}", _count(layer)) for i, layer in enumerate(model.layers(), start=1)]
    per_layer.append(("head", _count(model.fc)))
    return ModelSummary(spec.name, spec.config, spec.q, model.num_parameters(), per_layer,
                        _depth(model), rows)


# ImageNet ResNets, described arithmetically for parameter counting only


def _conv_bn(d_in, d_out, k) -> int:
    return d_in * d_out * k * k + 2 * d_out


def _basic_params(d_in, d_out, stride) -> int:
    n = _conv_bn(d_in, d_out, 3) + _conv_bn(d_out, d_out, 3)
    if stride != 1 or d_in != d_out:
        n += _conv_bn(d_in, d_out, 1)
    return n


def _bottleneck_params(d_in, width, stride) -> int:
    d_out = 4 * width
    n = _conv_bn(d_in, width, 1) + _conv_bn(width, width, 3) + _conv_bn(width, d_out, 1)
    if stride != 1 or d_in != d_out:
        n += _conv_bn(d_in, d_out, 1)
    return n


def imagenet_summary(spec: ModelSpec) -> ModelSummary:
    kind, blocks = IMAGENET_LAYOUT[spec.base]
    expansion = 4 if kind == "bottleneck" else 1
    stem = _conv_bn(3, 64, 7)
    rows = [LayerRow("stem", "Conv7x7-BN-ReLU-MaxPool", (3, 224, 224), (64, 56, 56), stem)]
    per_layer = [("stem", stem)]
    depth = 1
    d_in, hw = 64, 56
    for i, (width, n, bit) in enumerate(zip(IMAGENET_WIDTHS, blocks, spec.config), start=1):
        d_out = width * expansion
        stride = 1 if i == 1 else 2
        layer_total = 0
        if bit == "1":
            fp = FpBlockSpec(d_in, d_out, spec.q, 3, downsample=stride == 2, ablation=spec.ablation)
            p = count_block_params(fp, include_bn=True)
            out_hw = hw // stride
            rows.append(LayerRow(f"layer{i}.0", "FPBlock", (d_in, hw, hw), (d_out, out_hw, out_hw),
                                 p, fp.downsample))
            layer_total, depth, hw = p, depth + 3, out_hw
        else:
            for j in range(n):
                s = stride if j == 0 else 1
                blk_in = d_in if j == 0 else d_out
                if kind == "bottleneck":
                    p = _bottleneck_params(blk_in, width, s)
                    depth += 3
                else:
                    p = _basic_params(blk_in, d_out, s)
                    depth += 2
                out_hw = hw // s
                rows.append(LayerRow(f"layer{i}.{j}", kind.capitalize() + "Block",
                                     (blk_in, hw, hw), (d_out, out_hw, out_hw), p))
                layer_total += p
                hw = out_hw
        per_layer.append((f"layer{i}", layer_total))
        d_in = d_out
    head = d_in * spec.num_classes + spec.num_classes
    rows.append(LayerRow("head", "AvgPool-Linear", (d_in, hw, hw), (spec.num_classes,), head))
    per_layer.append(("head", head))
    total = sum(p for _, p in per_layer)
    return ModelSummary(spec.name, spec.config, spec.q, total, per_layer, depth + 1, rows)


def build_fp_resnet50_spec(num_classes: int = 1000) -> ModelSummary:
    """ResNet-50 with layers 2 and 4 each replaced by one FP-block (q = 1)."""
    return imagenet_summary(ModelSpec("resnet50", "0101", q=1, num_classes=num_classes))


def describe(spec: ModelSpec, seed=0) -> ModelSummary:
    if spec.is_cifar:
        return summarize(CifarResNet(spec, seed))
    return imagenet_summary(spec)
