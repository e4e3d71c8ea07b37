"""The finite-difference suite over every differentiable operator.

Each case draws small random float64 inputs from a seed and reduces the
operator output to a scalar with fixed random weights, so the whole
Jacobian is probed through one vector-Jacobian product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .gradcheck import grad_check


def _conv3(rng):
    inputs = {"x": rng.standard_normal((2, 3, 6, 6)), "w": rng.standard_normal((4, 3, 3, 3)), "b": rng.standard_normal(4)}
    w = rng.standard_normal((2, 4, 6, 6))
    return inputs, lambda v: ops.weighted_sum(ops.conv2d(v["x"], v["w"], v["b"], padding=1), w)


def _conv1(rng):
    inputs = {"x": rng.standard_normal((2, 3, 5, 5)), "w": rng.standard_normal((4, 3, 1, 1)), "b": rng.standard_normal(4)}
    w = rng.standard_normal((2, 4, 5, 5))
    return inputs, lambda v: ops.weighted_sum(ops.conv2d(v["x"], v["w"], v["b"]), w)


def _batch_norm(rng):
    inputs = {"x": rng.standard_normal((3, 2, 4, 4)) * 2 + 1, "gamma": rng.standard_normal(2), "beta": rng.standard_normal(2)}
    w = rng.standard_normal((3, 2, 4, 4))

    def op(v):
        state = ops.BatchNormState(2, dtype=np.float64)
        return ops.weighted_sum(ops.batch_norm(v["x"], v["gamma"], v["beta"], state, train=True), w)

    return inputs, op


def _unary(fn, out_shape=(2, 3, 4, 4)):
    def case(rng):
        inputs = {"x": rng.standard_normal((2, 3, 4, 4))}
        w = rng.standard_normal(out_shape)
        return inputs, lambda v: ops.weighted_sum(fn(v["x"]), w)

    return case


def _up_conv(rng):
    inputs = {"x": rng.standard_normal((2, 3, 3, 3)), "w": rng.standard_normal((3, 2, 2, 2)), "b": rng.standard_normal(2)}
    w = rng.standard_normal((2, 2, 6, 6))
    return inputs, lambda v: ops.weighted_sum(ops.up_conv2(v["x"], v["w"], v["b"]), w)


def _linear(rng):
    inputs = {"x": rng.standard_normal((4, 5)), "w": rng.standard_normal((5, 3)), "b": rng.standard_normal(3)}
    w = rng.standard_normal((4, 3))
    return inputs, lambda v: ops.weighted_sum(ops.linear(v["x"], v["w"], v["b"]), w)


def _attention_gate(rng):
    fl, fg, fi = 3, 3, 2
    inputs = {
        "x": rng.standard_normal((2, fl, 4, 4)),
        "g": rng.standard_normal((2, fg, 4, 4)),
        "Wx": rng.standard_normal((fi, fl, 1, 1)),
        "bx": rng.standard_normal(fi),
        "Wg": rng.standard_normal((fi, fg, 1, 1)),
        "bg": rng.standard_normal(fi),
        "psi": rng.standard_normal((1, fi, 1, 1)),
        "bpsi": rng.standard_normal(1),
    }
    w = rng.standard_normal((2, fl, 4, 4))

    def op(v):
        params = {k: v[k] for k in ("Wx", "bx", "Wg", "bg", "psi", "bpsi")}
        return ops.weighted_sum(ops.attention_gate(v["x"], v["g"], params), w)

    return inputs, op


def _masked_loss(rng):
    label = rng.uniform(0, 3, size=(2, 1, 5, 5))
    label[rng.uniform(size=label.shape) < 0.6] = -1.0
    label[0, 0, 0, 0] = 1.0
    inputs = {"pred": rng.standard_normal((2, 1, 5, 5)), "w1": rng.standard_normal((3, 2)), "w2": rng.standard_normal(4)}
    return inputs, lambda v: ops.masked_mse_l2_loss(v["pred"], label, None, [v["w1"], v["w2"]], lam=0.01)


def _au_end_to_end(rng):
    from ..models import ArchitectureDescriptor, UNet

    seed = int(rng.integers(2**31))
    model = UNet(ArchitectureDescriptor("AU", depth=2, base_channels=4, in_channels=3, patch_size=8), seed=seed, dtype=np.float64)
    inputs = {k: p.data for k, p in model.params.items()}
    inputs["input"] = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((2, 1, 8, 8))

    def op(v):
        params = {k: val for k, val in v.items() if k != "input"}
        return ops.weighted_sum(model.forward(v["input"], train=True, params=params), w)

    return inputs, op


# name -> (case builder, max entries probed per tensor or None for all)
CASES = {
    "conv3x3": (_conv3, None),
    "conv1x1": (_conv1, None),
    "batch_norm": (_batch_norm, None),
    "relu": (_unary(ops.relu), None),
    "sigmoid": (_unary(ops.sigmoid), None),
    "max_pool": (_unary(ops.max_pool2, (2, 3, 2, 2)), None),
    "up_conv": (_up_conv, None),
    "linear": (_linear, None),
    "attention_gate": (_attention_gate, None),
    "masked_loss": (_masked_loss, None),
    "au_end_to_end": (_au_end_to_end, 6),
}


@dataclass
class SuiteResult:
    name: str
    seeds: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_dict(self) -> dict:
        return {"operator": self.name, "seeds": self.seeds, "max_error": self.max_error, "tolerance": self.tolerance, "passed": self.passed}


def run_suite(seeds: int = 20, tolerance: float = 1e-4, names=None, base_seed: int = 0) -> list:
    """Gradient-check each operator on ``seeds`` independent random draws."""
    results = []
    for name in names or CASES:
        build, max_entries = CASES[name]
        worst = 0.0
        for s in range(seeds):
            rng = np.random.default_rng([base_seed, s])
            inputs, op = build(rng)
            report = grad_check(op, inputs, tolerance=tolerance, max_entries=max_entries, rng=rng)
            worst = max(worst, report.max_error)
        results.append(SuiteResult(name, seeds, worst, tolerance))
    return results
