"""Central finite differences, used to check the analytic gradients."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .layers import ParamSet
from .tensor import Tensor


def finite_diff_gradient(loss_fn, params: ParamSet, h=1e-5, names=None):
    """Estimate d loss / d theta coordinate by coordinate.

    ``loss_fn`` takes no arguments and returns a float (or 0-d Tensor);
    it must read the current parameter values each time it is called.
    """
    out = OrderedDict()
    for name in names or params.names():
        p = params[name]
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(_value(loss_fn()))
            flat[i] = orig - h
            down = float(_value(loss_fn()))
            flat[i] = orig
            g[i] = (up - down) / (2.0 * h)
        out[name] = g.reshape(p.shape)
    return out


def _value(v):
    return v.data if isinstance(v, Tensor) else v


def relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|, floor), elementwise, reduced by max."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def analytic_gradient(loss_fn, params: ParamSet):
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    return OrderedDict((k, p.grad.copy()) for k, p in params.items())


def check_gradients(loss_fn, params: ParamSet, h=1e-5, floor=1e-6):
    """Return {name: relative error} comparing backward() to finite differences."""
    analytic = analytic_gradient(loss_fn, params)
    numeric = finite_diff_gradient(loss_fn, params, h)
    return {k: relative_error(analytic[k], numeric[k], floor) for k in analytic}
