"""Curriculum sample weights from motif attention and the weighted training loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from core.tensor import (
    LOG_EPS,
    Tensor,
    add,
    add_row,
    clamp,
    log,
    mean_rows,
    mul,
    scale_rows,
    softmax_segments,
    sub,
    sum_all,
    sum_cols,
)

__all__ = ["CurriculumState", "curriculum_weights", "weighted_loss", "regularization"]

logger = logging.getLogger(__name__)


@dataclass
class CurriculumState:
    beta: Tensor
    mu: Tensor
    lambda_reg: float = 0.0

    def beta_array(self) -> np.ndarray:
        return self.beta.data.reshape(-1)


def curriculum_weights(alpha: Tensor, enabled: bool = True) -> Optional[CurriculumState]:
    """Batch softmax of each user's squared distance from the batch-mean attention.

    ``alpha`` holds one attention distribution per labeled user in the batch.
    Returns ``None`` for an empty batch so the caller can skip it. With
    ``enabled`` off every deviation is zero and the weights are uniform.
    Pass a detached ``alpha`` to keep gradients from flowing into the weights.
    """
    if alpha.rows == 0:
        return None
    mu = mean_rows(alpha)
    if enabled:
        centred = add_row(alpha, mul(mu, -1.0))
        deviation = sum_cols(mul(centred, centred))
    else:
        deviation = Tensor(np.zeros((alpha.rows, 1)))
    beta = softmax_segments(deviation, np.zeros(alpha.rows, dtype=np.int64), 1)
    return CurriculumState(beta=beta, mu=mu)


def regularization(params: Iterable[Tuple[str, Tensor]], lambda_reg: float) -> Optional[Tensor]:
    """lambda * sum of squared entries over the given (name, weight) pairs."""
    total: Optional[Tensor] = None
    if lambda_reg == 0.0:
        return None
    for _, weight in params:
        term = sum_all(mul(weight, weight))
        total = term if total is None else add(total, term)
    return mul(total, lambda_reg) if total is not None else None


def weighted_loss(
    y_hat: Tensor,
    y: Sequence[int],
    beta: Tensor,
    params: Iterable[Tuple[str, Tensor]] = (),
    lambda_reg: float = 0.0,
    rescale_beta: bool = True,
    task: str = "binary",
) -> Tensor:
    """Curriculum-weighted cross-entropy over a batch plus L2 regularization.

    Binary: -(1/B) sum beta_u [y log p + (1 - y) log(1 - p)], with p clamped to
    [1e-12, 1 - 1e-12]. Multiclass: -(1/B) sum beta_u log p_u[y_u]. With
    ``rescale_beta`` the weights are multiplied by B so their mean is 1.
    """
    targets = np.asarray(y, dtype=np.int64).reshape(-1)
    size = targets.shape[0]
    if task == "binary":
        prob = clamp(y_hat, LOG_EPS, 1.0 - LOG_EPS)
        positive = Tensor(targets.astype(np.float64))
        log_likelihood = add(mul(positive, log(prob)), mul(Tensor(1.0 - positive.data), log(sub(1.0, prob))))
    else:
        one_hot = np.zeros(y_hat.shape)
        one_hot[np.arange(size), targets] = 1.0
        log_likelihood = sum_cols(mul(Tensor(one_hot), log(clamp(y_hat, LOG_EPS, 1.0))))
    weights = mul(beta, float(size)) if rescale_beta else beta
    loss = mul(sum_all(scale_rows(log_likelihood, weights)), -1.0 / size)
    penalty = regularization(params, lambda_reg)
    return add(loss, penalty) if penalty is not None else loss
