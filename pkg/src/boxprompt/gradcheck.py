"""Finite-difference verification of the recorded gradients.

Central differences (f(p+eps) - f(p-eps)) / (2*eps) are compared per
element against a single backward pass.  Relative error uses the
denominator max(|analytic|, |numeric|, 1e-8).  Run the check in float64;
finite differences are not trustworthy at float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradReport:
    tolerance: float
    eps: float
    rel_error: dict[str, float] = field(default_factory=dict)
    abs_error: dict[str, float] = field(default_factory=dict)
    passed: bool = False

    @property
    def worst(self) -> float:
        return max(self.rel_error.values()) if self.rel_error else 0.0

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "eps": self.eps,
            "max_rel_error": self.worst,
            "per_param_rel_error": dict(self.rel_error),
            "per_param_abs_error": dict(self.abs_error),
            "pass": self.passed,
        }


def gradcheck(f, params: dict[str, Tensor], eps: float = 1e-5, tol: float = 1e-6,
              max_elems_per_param: int | None = None, sample_seed: int = 0) -> GradReport:
    """Check d(f)/d(param) for every parameter element (or a seeded sample).

    ``f`` takes the parameter dict and returns a scalar Tensor; it must be
    deterministic, which is verified by evaluating it twice.
    """
    with no_grad():
        v1 = f(params).data.copy()
        v2 = f(params).data.copy()
    if not np.array_equal(v1, v2):
        raise ValueError("gradcheck: f is not deterministic (double evaluation mismatch)")

    for p in params.values():
        p.zero_grad()
    loss = f(params)
    backward(loss)

    report = GradReport(tolerance=tol, eps=eps)
    rng = np.random.default_rng(sample_seed)
    ok = True
    for name, p in sorted(params.items()):
        if not p.requires_grad:
            continue
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elems_per_param is not None and n > max_elems_per_param:
            idxs = rng.choice(n, size=max_elems_per_param, replace=False)
            idxs.sort()
        else:
            idxs = np.arange(n)
        worst_rel = 0.0
        worst_abs = 0.0
        aflat = analytic.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = f(params).item()
            flat[i] = orig - eps
            with no_grad():
                fm = f(params).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = float(aflat[i])
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), 1e-8)
            if rel_err > worst_rel:
                worst_rel = rel_err
            if abs_err > worst_abs:
                worst_abs = abs_err
        report.rel_error[name] = worst_rel
        report.abs_error[name] = worst_abs
        if worst_rel > tol:
            ok = False
    report.passed = ok
    return report
