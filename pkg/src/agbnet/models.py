"""Attention UNet, plain UNet and the fully-connected AU variant."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .nn import Value


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureDescriptor:
    kind: str = "AU"  # AU | UNet | AU_FC
    depth: int = 4
    base_channels: int = 32
    in_channels: int = 29
    patch_size: int = 64

    def validate(self) -> None:
        if self.kind not in ("AU", "UNet", "AU_FC"):
            raise ArchitectureError(f"unknown architecture {self.kind!r}")
        if self.depth not in (2, 3, 4, 5):
            raise ArchitectureError(f"depth must be 2..5, got {self.depth}")
        if self.patch_size % (2**self.depth):
            raise ArchitectureError(f"patch_size {self.patch_size} not divisible by 2^{self.depth}")
        if self.base_channels < 1 or self.in_channels < 1:
            raise ArchitectureError("channel counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ArchitectureDescriptor":
        return cls(**{k: d[k] for k in ("kind", "depth", "base_channels", "in_channels", "patch_size") if k in d})


class _Builder:
    """Creates named parameters in a fixed order from one seeded generator."""

    def __init__(self, seed, dtype):
        self.rng = np.random.default_rng(seed)
        # gates draw from their own stream so AU and UNet built from one
        # seed share every non-gate parameter
        self.gate_rng = np.random.default_rng([seed, 1])
        self.dtype = dtype
        self.params: dict[str, Value] = {}
        self.decay: list[str] = []  # names entering the L2 penalty

    def _add(self, name, arr, decay):
        self.params[name] = Value(arr.astype(self.dtype), requires_grad=True, name=name)
        if decay:
            self.decay.append(name)

    def uniform(self, name, shape, fan_in, rng=None):
        bound = 1.0 / np.sqrt(fan_in)
        self._add(name, (rng or self.rng).uniform(-bound, bound, size=shape), decay=True)

    def bias(self, name, n, fan_in, rng=None):
        bound = 1.0 / np.sqrt(fan_in)
        self._add(name, (rng or self.rng).uniform(-bound, bound, size=n), decay=False)

    def const(self, name, shape, value):
        self._add(name, np.full(shape, value, dtype=np.float64), decay=False)


class UNet:
    """Encoder-decoder with optional attention-gated skips.

    Encoder level i has ``base * 2**i`` channels; each block is two
    conv3x3-BN-ReLU units followed by 2x2 max pooling. The decoder
    upsamples with a 2x2 transposed convolution, gates the skip (AU only),
    concatenates [skip, upsampled] and applies two conv3x3-BN-ReLU units.
    A 1x1 convolution maps to one output channel.
    """

    def __init__(self, desc: ArchitectureDescriptor, seed: int = 0, dtype=np.float32, prefix=""):
        desc.validate()
        self.desc = desc
        self.gated = desc.kind in ("AU", "AU_FC")
        self.dtype = np.dtype(dtype)
        self.prefix = prefix
        b = _Builder(seed, self.dtype)
        self.bn: dict[str, nn.BatchNormState] = {}
        widths = [desc.base_channels * 2**i for i in range(desc.depth + 1)]
        self.widths = widths
        p = prefix

        def double_conv(name, cin, cout):
            for j, (a, o) in enumerate(((cin, cout), (cout, cout))):
                b.uniform(f"{p}{name}.conv{j}.weight", (o, a, 3, 3), a * 9)
                b.const(f"{p}{name}.bn{j}.gamma", o, 1.0)
                b.const(f"{p}{name}.bn{j}.beta", o, 0.0)
                self.bn[f"{p}{name}.bn{j}"] = nn.BatchNormState(o, dtype=self.dtype)

        cin = desc.in_channels
        for i in range(desc.depth):
            double_conv(f"enc{i}", cin, widths[i])
            cin = widths[i]
        double_conv("bottleneck", cin, widths[desc.depth])
        for i in reversed(range(desc.depth)):
            c_hi, c = widths[i + 1], widths[i]
            b.uniform(f"{p}dec{i}.up.weight", (c_hi, c, 2, 2), c_hi * 4)
            b.bias(f"{p}dec{i}.up.bias", c, c_hi * 4)
            if self.gated:
                f_int = max(c // 2, 1)
                b.uniform(f"{p}dec{i}.gate.Wx", (f_int, c, 1, 1), c, b.gate_rng)
                b.bias(f"{p}dec{i}.gate.bx", f_int, c, b.gate_rng)
                b.uniform(f"{p}dec{i}.gate.Wg", (f_int, c, 1, 1), c, b.gate_rng)
                b.bias(f"{p}dec{i}.gate.bg", f_int, c, b.gate_rng)
                b.uniform(f"{p}dec{i}.gate.psi", (1, f_int, 1, 1), f_int, b.gate_rng)
                b.const(f"{p}dec{i}.gate.bpsi", 1, 0.0)
            double_conv(f"dec{i}", 2 * c, c)
        b.uniform(f"{p}head.weight", (1, widths[0], 1, 1), widths[0])
        b.bias(f"{p}head.bias", 1, widths[0])
        self.params = b.params
        self.decay_names = b.decay

    # -- forward -------------------------------------------------------------

    def _double_conv(self, h, name, P, train):
        for j in range(2):
            h = nn.conv2d(h, P[f"{name}.conv{j}.weight"], padding=1)
            h = nn.batch_norm(h, P[f"{name}.bn{j}.gamma"], P[f"{name}.bn{j}.beta"], self.bn[f"{name}.bn{j}"], train)
            h = nn.relu(h)
        return h

    def forward(self, x, train: bool = True, params: dict | None = None, gate_maps: list | None = None) -> Value:
        """Map N x C x H x W to N x 1 x H x W.

        ``params`` substitutes parameter Values by name (used for gradient
        checks); ``gate_maps`` collects each gate's coefficients if given.
        """
        P = dict(self.params)
        if params:
            P.update(params)
        p = self.prefix
        h = x if isinstance(x, Value) else Value(np.asarray(x, dtype=self.dtype))
        skips = []
        for i in range(self.desc.depth):
            h = self._double_conv(h, f"{p}enc{i}", P, train)
            skips.append(h)
            h = nn.max_pool2(h)
        h = self._double_conv(h, f"{p}bottleneck", P, train)
        for i in reversed(range(self.desc.depth)):
            d = nn.up_conv2(h, P[f"{p}dec{i}.up.weight"], P[f"{p}dec{i}.up.bias"])
            s = skips[i]
            if self.gated:
                g = {k: P[f"{p}dec{i}.gate.{k}"] for k in ("Wx", "bx", "Wg", "bg", "psi", "bpsi")}
                s, u = nn.attention_gate(s, d, g, return_coefficients=True)
                if gate_maps is not None:
                    gate_maps.append(u.data)
            h = nn.concat([s, d], axis=1)
            h = self._double_conv(h, f"{p}dec{i}", P, train)
        return nn.conv2d(h, P[f"{p}head.weight"], P[f"{p}head.bias"])

    __call__ = forward

    def decay_params(self):
        return [self.params[n] for n in self.decay_names]

    def buffers(self) -> dict:
        out = {}
        for k, st in self.bn.items():
            out[f"{k}.running_mean"] = st.mean
            out[f"{k}.running_var"] = st.var
        return out

    def state_dict(self) -> dict:
        out = {k: v.data.copy() for k, v in self.params.items()}
        out.update({k: v.copy() for k, v in self.buffers().items()})
        return out

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        for k, v in self.params.items():
            if k in state:
                v.data = np.asarray(state[k], dtype=self.dtype).reshape(v.shape).copy()
            elif strict:
                raise KeyError(f"missing parameter {k!r}")
        for k, st in self.bn.items():
            if f"{k}.running_mean" in state:
                st.mean = np.asarray(state[f"{k}.running_mean"], dtype=self.dtype).copy()
                st.var = np.asarray(state[f"{k}.running_var"], dtype=self.dtype).copy()
            elif strict:
                raise KeyError(f"missing running statistics for {k!r}")

    def open_gates(self, logit: float = 20.0) -> None:
        """Zero the gate weights and saturate the gate bias so u ~= 1."""
        for k, v in self.params.items():
            if ".gate." in k:
                v.data[...] = logit if k.endswith("bpsi") else 0.0


class AUFC:
    """Per-footprint feature vector -> 4096 -> 64x64 single-channel patch ->
    attention UNet -> flatten -> 2048 -> scalar AGB."""

    def __init__(self, desc: ArchitectureDescriptor, seed: int = 0, dtype=np.float32):
        desc.validate()
        self.desc = desc
        self.dtype = np.dtype(dtype)
        side = desc.patch_size
        nodes = side * side
        inner = ArchitectureDescriptor("AU", desc.depth, desc.base_channels, 1, side)
        b = _Builder(seed, self.dtype)
        b.uniform("fc_in.weight", (desc.in_channels, nodes), desc.in_channels)
        b.bias("fc_in.bias", nodes, desc.in_channels)
        b.uniform("fc_mid.weight", (nodes, 2048), nodes)
        b.bias("fc_mid.bias", 2048, nodes)
        b.uniform("fc_out.weight", (2048, 1), 2048)
        b.bias("fc_out.bias", 1, 2048)
        self.unet = UNet(inner, seed=int(np.random.default_rng(seed).integers(2**31)) + 1, dtype=dtype, prefix="au.")
        self.params = dict(b.params)
        self.params.update(self.unet.params)
        self.decay_names = b.decay + self.unet.decay_names
        self.bn = self.unet.bn

    def forward(self, x, train: bool = True, params: dict | None = None) -> Value:
        """x: N x C (or length C) -> N predictions (or a scalar)."""
        P = dict(self.params)
        if params:
            P.update(params)
        xv = x if isinstance(x, Value) else Value(np.asarray(x, dtype=self.dtype))
        single = xv.data.ndim == 1
        if single:
            xv = nn.reshape(xv, (1, -1))
        n = xv.shape[0]
        side = self.desc.patch_size
        h = nn.linear(xv, P["fc_in.weight"], P["fc_in.bias"])
        h = nn.reshape(h, (n, 1, side, side))
        h = self.unet.forward(h, train=train, params=P)
        h = nn.reshape(h, (n, side * side))
        h = nn.linear(h, P["fc_mid.weight"], P["fc_mid.bias"])
        h = nn.linear(h, P["fc_out.weight"], P["fc_out.bias"])
        return nn.reshape(h, ()) if single else nn.reshape(h, (n,))

    __call__ = forward
    decay_params = UNet.decay_params
    buffers = UNet.buffers
    state_dict = UNet.state_dict
    load_state_dict = UNet.load_state_dict


def build_model(desc: ArchitectureDescriptor, seed: int = 0, dtype=np.float32):
    desc.validate()
    if desc.kind == "AU_FC":
        return AUFC(desc, seed, dtype)
    return UNet(desc, seed, dtype)


def build_au_fc(desc: ArchitectureDescriptor, seed: int = 0, dtype=np.float32) -> AUFC:
    return AUFC(ArchitectureDescriptor("AU_FC", desc.depth, desc.base_channels, desc.in_channels, desc.patch_size), seed, dtype)
