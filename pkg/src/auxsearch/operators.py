"""The ten loss operators comparing predictions ``y`` with targets ``y_hat``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .loss_dsl import Measure, OperatorSpec

TRAINING_EPS = 1e-8


class ZeroNormVector(ValueError):
    pass


class BatchTooSmall(ValueError):
    pass


@dataclass
class OperatorParams:
    """Learnable operator state; only the bilinear measure has any."""

    bilinear: Tensor | None = None

    @classmethod
    def for_spec(cls, spec: OperatorSpec, dim: int) -> OperatorParams:
        if spec.measure is Measure.BILINEAR:
            return cls(Tensor(np.eye(dim), requires_grad=True, name="W"))
        return cls()

    def tensors(self) -> dict[str, Tensor]:
        return {} if self.bilinear is None else {"W": self.bilinear}


@dataclass
class LossBatch:
    predictions: Tensor
    targets: Tensor
    negatives: Tensor | None = None

    def __post_init__(self):
        if self.predictions.shape != self.targets.shape:
            raise ad.ShapeMismatch(
                f"predictions {self.predictions.shape} vs targets {self.targets.shape}"
            )
        if self.negatives is not None and self.negatives.shape != self.targets.shape:
            raise ad.ShapeMismatch(
                f"negatives {self.negatives.shape} vs targets {self.targets.shape}"
            )


def derangement_negatives(targets: Tensor) -> Tensor:
    """Pair row ``i`` with target row ``i + 1 (mod n)``."""
    n = targets.shape[0]
    if n < 2:
        raise BatchTooSmall(f"negatives need at least 2 rows, got {n}")
    idx = np.roll(np.arange(n), -1)
    # row gather as a constant permutation matmul keeps the gradient path
    perm = np.zeros((n, n))
    perm[np.arange(n), idx] = 1.0
    return ad.matmul(Tensor(perm), targets)


def _unit_rows(x: Tensor, eps: float | None) -> Tensor:
    if eps is None:
        if np.any((x.data * x.data).sum(axis=1) == 0.0):
            raise ZeroNormVector("cannot normalize a zero row")
        return x / ad.l2_norm(x)
    return x / ad.l2_norm(x, eps)


def similarity(measure: Measure, y, y_hat, params: OperatorParams | None = None) -> Tensor:
    """Scalar similarity of two vectors under ``measure`` (strict zero-norm check)."""
    y, y_hat = ad.as_tensor(y), ad.as_tensor(y_hat)
    if y.shape != y_hat.shape or y.shape[0] != 1 or y.shape[1] == 0:
        raise ad.ShapeMismatch(f"similarity needs two equal row vectors, got {y.shape}, {y_hat.shape}")
    return _pairwise_diag(measure, y, y_hat, params, eps=None)


def _pairwise_diag(measure, y, y_hat, params, eps):
    """Row-wise phi(y_i, y_hat_i) as an (n, 1) column."""
    if measure is Measure.INNER:
        return ad.sum(y * y_hat, axis=1)
    if measure is Measure.BILINEAR:
        return ad.sum(ad.matmul(y, _bilinear(params, y.shape[1])) * y_hat, axis=1)
    if measure is Measure.COSINE:
        return ad.sum(_unit_rows(y, eps) * _unit_rows(y_hat, eps), axis=1)
    raise ValueError(f"{measure} is not a similarity measure")


def _pairwise_matrix(measure, y, y_hat, params, eps):
    """Logits M[i, j] = phi(y_i, y_hat_j)."""
    if measure is Measure.INNER:
        return ad.matmul(y, y_hat.T)
    if measure is Measure.BILINEAR:
        return ad.matmul(ad.matmul(y, _bilinear(params, y.shape[1])), y_hat.T)
    if measure is Measure.COSINE:
        return ad.matmul(_unit_rows(y, eps), _unit_rows(y_hat, eps).T)
    raise ValueError(f"{measure} is not a similarity measure")


def _bilinear(params, dim):
    if params is None or params.bilinear is None:
        raise ValueError("bilinear measure needs OperatorParams with a matrix")
    if params.bilinear.shape != (dim, dim):
        raise ad.ShapeMismatch(f"bilinear matrix {params.bilinear.shape} for dim {dim}")
    return params.bilinear


def mse_loss(batch: LossBatch, normalized: bool = False, with_negatives: bool = False,
             eps: float | None = None) -> Tensor:
    """Mean over rows of mean-over-dims squared error, minus the negative-pair term.

    ``eps=None`` raises :class:`ZeroNormVector` on zero rows when normalizing;
    a float is added under the square root instead.
    """
    y, y_hat = batch.predictions, batch.targets
    neg = batch.negatives
    if with_negatives and neg is None:
        neg = derangement_negatives(y_hat)
    if normalized:
        y, y_hat = _unit_rows(y, eps), _unit_rows(y_hat, eps)
        if with_negatives:
            neg = _unit_rows(neg, eps)
    per_row = ad.mean(ad.square(y - y_hat), axis=1)
    if with_negatives:
        per_row = per_row - ad.mean(ad.square(y - neg), axis=1)
    return ad.mean(per_row)


def infonce_loss(measure: Measure, batch: LossBatch, params: OperatorParams | None = None,
                 eps: float | None = None) -> Tensor:
    """K-way softmax log-loss with every other row's target as a negative."""
    n = batch.predictions.shape[0]
    if n < 2:
        raise BatchTooSmall(f"InfoNCE needs at least 2 rows, got {n}")
    logits = _pairwise_matrix(measure, batch.predictions, batch.targets, params, eps)
    positives = _pairwise_diag(measure, batch.predictions, batch.targets, params, eps)
    return ad.mean(ad.log_sum_exp(logits) - positives)


def operator_loss(spec: OperatorSpec, batch: LossBatch, params: OperatorParams | None = None,
                  eps: float | None = None) -> Tensor:
    m = spec.measure
    if m in (Measure.MSE, Measure.NMSE):
        return mse_loss(batch, normalized=m is Measure.NMSE, with_negatives=spec.negatives, eps=eps)
    if spec.negatives:
        return infonce_loss(m, batch, params, eps)
    # alignment term only; a one-logit cross entropy would be constant
    return -ad.mean(_pairwise_diag(m, batch.predictions, batch.targets, params, eps))
