"""Mean-teacher parameter averaging."""

from __future__ import annotations

from ..errors import CheckpointError
from ..model import SEDModel


def ema_update(teacher: SEDModel, student: SEDModel, decay: float) -> SEDModel:
    """teacher <- decay * teacher + (1 - decay) * student, in place."""
    if set(teacher.params) != set(student.params):
        raise CheckpointError("teacher and student parameter manifests differ")
    for k, tp in teacher.params.items():
        sp = student.params[k]
        if tp.shape != sp.shape:
            raise CheckpointError(f"{k}: teacher shape {tp.shape} != student shape {sp.shape}")
        if decay == 0.0:
            tp.data = sp.data.copy()
        elif decay != 1.0:
            tp.data = (decay * tp.data + (1.0 - decay) * sp.data).astype(tp.data.dtype)
    return teacher
