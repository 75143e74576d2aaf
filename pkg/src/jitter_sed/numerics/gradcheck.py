"""Finite-difference check of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ContractError
from .autodiff import Tensor, Tape


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-6) -> float:
    """Largest |analytic - central difference| / max(1, |analytic|) over all coordinates of ``x``.

    ``f`` must map a tensor to a scalar tensor.  Runs in float64 regardless of
    the dtype of ``x``.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ContractError(f"grad_check step {step} outside [1e-7, 1e-3]")
    base = np.array(x.data, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
    if out.data.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    tape.backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(Tensor(base.copy())).data)
        flat[i] = orig - step
        lo = float(f(Tensor(base.copy())).data)
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
