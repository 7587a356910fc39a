"""18-layer residual network over single-channel time-frequency maps.

Layout: 7x7/2 stem conv -> BN -> ReLU -> 3x3/2 max-pool, four stages of two
basic blocks (64, 128, 256, 512 channels times ``width_scale``; stages 2-4
open with a stride-2 block and a 1x1 projection skip), global average pool,
fully connected layer to four emotion logits.
"""

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from serfocal.errors import ConfigError, ShapeError
from serfocal.labels import N_CLASSES
from serfocal.nn.layers import BatchNorm, Conv2d, GlobalAvgPool, Linear, MaxPool2d, ReLU


@dataclass(frozen=True)
class ResNet18Config:
    input_rows: int = 128
    input_cols: int = 259
    n_classes: int = N_CLASSES
    stem_channels: int = 64
    stage_channels: tuple = (64, 128, 256, 512)
    blocks_per_stage: tuple = (2, 2, 2, 2)
    width_scale: float = 1.0

    def __post_init__(self):
        if not self.width_scale > 0:
            raise ConfigError(f"width_scale must be positive, got {self.width_scale}")
        if self.n_classes != N_CLASSES:
            raise ConfigError(f"n_classes must be {N_CLASSES}")
        if self.input_rows < 1 or self.input_cols < 1:
            raise ConfigError("input dimensions must be positive")

    def scaled(self, channels):
        return max(1, int(round(channels * self.width_scale)))

    def to_dict(self):
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stage_channels"] = tuple(d["stage_channels"])
        d["blocks_per_stage"] = tuple(d["blocks_per_stage"])
        return cls(**d)


def parse_width_scale(text):
    """Accepts ``0.125`` or ``1/8``."""
    try:
        value = float(Fraction(str(text)))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad width scale {text!r}") from exc
    if value <= 0:
        raise ConfigError(f"width_scale must be positive, got {text}")
    return value


class ResidualBlock:
    """Basic block: ``y = relu(bn2(conv2(relu(bn1(conv1(x))))) + skip(x))``."""

    def __init__(self, in_ch, out_ch, stride=1, rng=None, dtype=np.float32):
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, 1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm(out_ch, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, 1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm(out_ch, dtype=dtype)
        self.relu_out = ReLU()
        if stride != 1 or in_ch != out_ch:
            self.proj_conv = Conv2d(in_ch, out_ch, 1, stride, 0, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm(out_ch, dtype=dtype)
        else:
            self.proj_conv = self.proj_bn = None

    @property
    def has_projection(self):
        return self.proj_conv is not None

    def named_layers(self):
        layers = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.has_projection:
            layers += [("proj.conv", self.proj_conv), ("proj.bn", self.proj_bn)]
        return layers

    def forward(self, x, training=False):
        h = self.relu1.forward(self.bn1.forward(self.conv1.forward(x), training))
        h = self.bn2.forward(self.conv2.forward(h), training)
        skip = x
        if self.has_projection:
            skip = self.proj_bn.forward(self.proj_conv.forward(x), training)
        if h.shape != skip.shape:
            raise ShapeError(f"residual branch {h.shape} does not match skip {skip.shape}")
        return self.relu_out.forward(h + skip)

    def backward(self, dout):
        d = self.relu_out.backward(dout)
        dskip = d
        if self.has_projection:
            dskip = self.proj_conv.backward(self.proj_bn.backward(d))
        dh = self.conv2.backward(self.bn2.backward(d))
        dh = self.conv1.backward(self.bn1.backward(self.relu1.backward(dh)))
        return dh + dskip

    def output_shape(self, shape):
        return self.conv2.output_shape(self.conv1.output_shape(shape))


def residual_block_forward(x, block, training=False):
    return block.forward(x, training)


class ResNet18:
    def __init__(self, cfg=ResNet18Config(), seed=0, dtype=np.float32):
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        stem = cfg.scaled(cfg.stem_channels)
        self.stem_conv = Conv2d(1, stem, 7, 2, 3, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm(stem, dtype=dtype)
        self.stem_relu = ReLU()
        self.pool = MaxPool2d(3, 2, 1)
        self.stages = []
        in_ch = stem
        for s, (channels, n_blocks) in enumerate(zip(cfg.stage_channels, cfg.blocks_per_stage)):
            out_ch = cfg.scaled(channels)
            stage = []
            for b in range(n_blocks):
                stride = 2 if (s > 0 and b == 0) else 1
                stage.append(ResidualBlock(in_ch, out_ch, stride, rng=rng, dtype=dtype))
                in_ch = out_ch
            self.stages.append(stage)
        self.gap = GlobalAvgPool()
        self.fc = Linear(in_ch, cfg.n_classes, rng=rng, dtype=dtype)

    # -- structure -------------------------------------------------------

    def named_layers(self):
        """Weighted layers in forward order as ``(name, layer)``."""
        out = [("stem.conv", self.stem_conv), ("stem.bn", self.stem_bn)]
        for s, stage in enumerate(self.stages, start=1):
            for b, block in enumerate(stage):
                out += [(f"layer{s}.{b}.{n}", layer) for n, layer in block.named_layers()]
        out.append(("fc", self.fc))
        return out

    def blocks(self):
        return [block for stage in self.stages for block in stage]

    def parameters(self):
        return {f"{name}.{p}": t for name, layer in self.named_layers()
                for p, t in layer.parameters().items()}

    def buffers(self):
        return {f"{name}.{b}": a for name, layer in self.named_layers()
                for b, a in layer.buffers().items()}

    def state_dict(self):
        state = {k: t.data for k, t in self.parameters().items()}
        state.update(self.buffers())
        return state

    def load_state_dict(self, state):
        params, buffers = self.parameters(), self.buffers()
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ShapeError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for k, t in params.items():
            if state[k].shape != t.shape:
                raise ShapeError(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data[...] = state[k]
        for k, a in buffers.items():
            a[...] = state[k]

    def zero_grad(self):
        for t in self.parameters().values():
            t.zero_grad()

    def num_params(self):
        return sum(t.size for t in self.parameters().values())

    # -- compute ---------------------------------------------------------

    def forward(self, x, training=False):
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.cfg.input_rows:
            raise ShapeError(
                f"expected input (N, 1, {self.cfg.input_rows}, T), got {x.shape}")
        h = x.astype(self.dtype, copy=False)
        h = self.stem_relu.forward(self.stem_bn.forward(self.stem_conv.forward(h), training))
        h = self.pool.forward(h)
        for block in self.blocks():
            h = block.forward(h, training)
        return self.fc.forward(self.gap.forward(h))

    def backward(self, dlogits):
        d = self.gap.backward(self.fc.backward(dlogits))
        for block in reversed(self.blocks()):
            d = block.backward(d)
        d = self.pool.backward(d)
        return self.stem_conv.backward(self.stem_bn.backward(self.stem_relu.backward(d)))

    def predict(self, x, batch_size=64):
        logits = np.concatenate([self.forward(x[i:i + batch_size])
                                 for i in range(0, len(x), batch_size)])
        return logits.argmax(axis=1)

    # -- reporting -------------------------------------------------------

    def layer_table(self, batch=1):
        """Rows ``(name, kind, output_shape, n_params)`` from shape algebra alone."""
        shape = (batch, 1, self.cfg.input_rows, self.cfg.input_cols)
        rows = []

        def add(name, layer, shape):
            out = layer.output_shape(shape)
            rows.append((name, layer.kind, out, layer.num_params()))
            return out

        shape = add("stem.conv", self.stem_conv, shape)
        shape = add("stem.bn", self.stem_bn, shape)
        shape = add("stem.pool", self.pool, shape)
        for s, stage in enumerate(self.stages, start=1):
            for b, block in enumerate(stage):
                prefix = f"layer{s}.{b}"
                block_in = shape
                shape = add(f"{prefix}.conv1", block.conv1, shape)
                shape = add(f"{prefix}.bn1", block.bn1, shape)
                shape = add(f"{prefix}.conv2", block.conv2, shape)
                shape = add(f"{prefix}.bn2", block.bn2, shape)
                if block.has_projection:
                    skip = add(f"{prefix}.proj.conv", block.proj_conv, block_in)
                    add(f"{prefix}.proj.bn", block.proj_bn, skip)
        shape = add("gap", self.gap, shape)
        add("fc", self.fc, shape)
        return rows

    def depth_audit(self):
        """Count weighted layers on the main path; projection skips excluded."""
        convs = sum(1 for name, layer in self.named_layers()
                    if layer.kind == "conv" and ".proj." not in name)
        fcs = sum(1 for _, layer in self.named_layers() if layer.kind == "fc")
        projections = sum(1 for b in self.blocks() if b.has_projection)
        return {"conv": convs, "fc": fcs, "depth": convs + fcs, "projections": projections}

    def summary(self):
        lines = [f"{'layer':<20} {'kind':<10} {'output':<22} {'params':>10}"]
        for name, kind, shape, n in self.layer_table():
            lines.append(f"{name:<20} {kind:<10} {'x'.join(map(str, shape)):<22} {n:>10}")
        audit = self.depth_audit()
        lines.append(f"total parameters: {self.num_params()}")
        lines.append(f"weighted layers: {audit['conv']} conv + {audit['fc']} fc = {audit['depth']}"
                     f" ({audit['projections']} projection skips)")
        return "\n".join(lines)


def build_resnet18(cfg=ResNet18Config(), seed=0, dtype=np.float32):
    return ResNet18(cfg, seed, dtype)


def model_forward(model, batch, training=False):
    return model.forward(batch, training)
