"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Value


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(analytic, numeric, floor=1e-8) -> float:
    """Normwise relative error max|a - n| / max(max|a|, max|n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def grad_check(op, inputs: dict, step=1e-6, tolerance=1e-4, max_entries=None, rng=None):
    """Compare ``op``'s reverse-mode gradients against central differences.

    ``op`` maps a dict of Values (same keys as ``inputs``) to a scalar Value
    and must be deterministic. ``inputs`` are copied to float64. With
    ``max_entries`` only that many randomly chosen entries per tensor are
    probed.
    """
    rng = rng or np.random.default_rng(0)
    values = {k: Value(np.array(v, dtype=np.float64), requires_grad=True, name=k) for k, v in inputs.items()}
    out = op(values)
    out.backward()
    report = GradCheckReport(tolerance=tolerance)
    for name, v in values.items():
        analytic = v.grad if v.grad is not None else np.zeros_like(v.data)
        flat = v.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            probe = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            probe = np.arange(flat.size)
        numeric = np.empty(len(probe))
        for j, i in enumerate(probe):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(op(_detached(values)).data)
            flat[i] = orig - step
            fm = float(op(_detached(values)).data)
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * step)
        report.errors[name] = relative_error(analytic.reshape(-1)[probe], numeric)
    return report


def _detached(values):
    return {k: Value(v.data) for k, v in values.items()}
