"""Central-difference gradient checker.

Runs in float64 only; float32 round-off would drown the signal. The check is
the artifact's standing oracle for every hand-written backward pass.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ParameterError


@dataclass
class GradcheckResult:
    max_rel_err: float
    worst_param: str
    per_param: dict

    def __str__(self):
        lines = [
            f"  {name}: {err:.3e}" for name, err in sorted(self.per_param.items())
        ]
        lines.append(f"worst: {self.worst_param} ({self.max_rel_err:.3e})")
        return "\n".join(lines)


def _rel_err(analytic, numeric):
    return abs(analytic - numeric) / max(1.0, abs(analytic) + abs(numeric))


def gradcheck(f, params, h=1e-5):
    """Compare analytic gradients of f against central finite differences.

    f(params) must return (loss, grads) deterministically, with grads keyed
    like params. Returns the worst relative error per parameter tensor using
    |a - n| / max(1, |a| + |n|).
    """
    for name, value in params.items():
        if value.dtype != np.float64:
            raise ParameterError(f"gradcheck requires float64 params ({name} is {value.dtype})")

    loss, grads = f(params)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss!r} at the evaluation point")

    per_param = {}
    for name, value in params.items():
        analytic = grads[name]
        worst = 0.0
        flat = value.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            plus, _ = f(params)
            flat[idx] = original - h
            minus, _ = f(params)
            flat[idx] = original
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NumericError(f"non-finite loss while perturbing {name}[{idx}]")
            numeric = (plus - minus) / (2 * h)
            worst = max(worst, _rel_err(analytic.reshape(-1)[idx], numeric))
        per_param[name] = worst

    worst_param = max(per_param, key=per_param.get)
    return GradcheckResult(per_param[worst_param], worst_param, per_param)
