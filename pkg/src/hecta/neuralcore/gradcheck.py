"""Central finite-difference verification of analytic gradients."""
from dataclasses import dataclass, field

import numpy as np

from .layers import kink_margin


def rel_error(analytic, numeric, floor=1e-6):
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def sample_indices(shape, max_entries, rng):
    size = int(np.prod(shape))
    if max_entries is None or max_entries >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_entries, replace=False))


def numeric_grad(f, arr, indices, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. ``arr.flat[indices]``.

    ``arr`` is perturbed in place and restored exactly.
    """
    flat = arr.reshape(-1)
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[j] = (fp - fm) / (2.0 * h)
    return out


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict = field(default_factory=dict)
    kink_margin: float = np.inf

    @property
    def failures(self):
        return sorted(k for k, v in self.errors.items() if not v <= self.tolerance)

    @property
    def passed(self):
        return not self.failures

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        status = "pass" if self.passed else "FAIL " + ", ".join(self.failures)
        return f"gradcheck max rel err {self.max_error:.2e} (tol {self.tolerance:g}): {status}"


def grad_check(module, input_spec, tolerance=1e-4, rng=None, params=None,
               h=1e-6, max_entries=None, check_inputs=True):
    """Compare a module's backward pass with central differences.

    ``input_spec`` holds arrays or shapes (shapes are filled with standard
    normals). The scalar probed is ``sum(out * R)`` for a fixed random ``R``.
    ``max_entries`` caps the number of probed coordinates per tensor; None
    probes every coordinate.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if params is None:
        params = module.init(rng)
    inputs = [np.array(s, dtype=np.float64) if not isinstance(s, tuple)
              else rng.standard_normal(s) for s in input_spec]

    out, cache = module.forward(params, *inputs)
    R = rng.standard_normal(np.shape(out))
    dinputs, dparams = module.backward(params, R, cache)
    report = GradCheckReport(tolerance=tolerance, kink_margin=kink_margin(cache))

    def f():
        o, _ = module.forward(params, *inputs)
        return float(np.sum(o * R))

    for name in sorted(params):
        arr = params[name]
        idx = sample_indices(arr.shape, max_entries, rng)
        num = numeric_grad(f, arr, idx, h)
        report.errors[name] = float(np.max(rel_error(dparams[name].reshape(-1)[idx], num), initial=0.0))
    if check_inputs:
        for k, x in enumerate(inputs):
            idx = sample_indices(x.shape, max_entries, rng)
            num = numeric_grad(f, x, idx, h)
            report.errors[f"input{k}"] = float(
                np.max(rel_error(dinputs[k].reshape(-1)[idx], num), initial=0.0))
    return report
