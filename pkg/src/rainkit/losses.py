"""Reconstruction, adversarial hinge and domain-verification hinge losses."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def rec_loss(output: Tensor, target) -> Tensor:
    """Mean absolute error over all elements."""
    target = T.as_tensor(target, dtype=output.dtype)
    if output.shape != target.shape:
        raise T.ShapeError(f"rec_loss: output {output.shape} vs target {target.shape}")
    return T.tabs(output - target).mean()


def hinge_d(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    return T.relu(1.0 - real_scores).mean() + T.relu(1.0 + fake_scores).mean()


def hinge_g(fake_scores: Tensor) -> Tensor:
    return -fake_scores.mean()


def adv_loss_d(D, real, fake: Tensor) -> Tensor:
    return hinge_d(D(T.as_tensor(real)), D(fake.detach()))


def adv_loss_g(D, fake: Tensor) -> Tensor:
    return hinge_g(D(fake))


def ver_loss_d(D_v, real, fake: Tensor, mask: np.ndarray) -> Tensor:
    return hinge_d(D_v(T.as_tensor(real), mask), D_v(fake.detach(), mask))


def ver_loss_g(D_v, fake: Tensor, mask: np.ndarray) -> Tensor:
    return hinge_g(D_v(fake, mask))
