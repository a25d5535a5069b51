"""Training objectives for the generators and the modality discriminators.

All losses are sums over batch elements or batch pairs, not means; the
trainer applies the 1/n factor in its gradient step.  The pairwise
negative log-likelihood is computed through a stable softplus, so large
feature inner products cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import ndcore as nd
from .errors import ContractError, ShapeError
from .ndcore import Var
from .networks import ModalityOutput


@dataclass(frozen=True)
class LossWeights:
    """Hyper-parameters weighting the four generator loss terms."""

    alpha: float = 1.0
    gamma: float = 1.0
    eta: float = 1e-4
    beta: float = 1e-4

    def __post_init__(self) -> None:
        for name in ("alpha", "gamma", "eta", "beta"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ContractError(f"{name} must be finite and non-negative, got {value}")


@dataclass
class LossReport:
    """Recorded raw loss values; adversarial fields are filled by the trainer."""

    j1: float = 0.0
    j2: float = 0.0
    j3: float = 0.0
    j4: float = 0.0
    total: float = 0.0
    adv_v: float = 0.0
    adv_t: float = 0.0


def _check_binary(arr: np.ndarray, allowed: Tuple[float, float], what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {arr.shape}")
    if not np.isin(arr, allowed).all():
        raise ContractError(f"{what} entries must lie in {allowed}")
    return arr


def pairwise_nll(feat_a: Var, feat_b: Var, sim: np.ndarray) -> Var:
    """Negative log-likelihood of pairwise similarities under feature overlap.

    theta[i, j] is half the inner product of row i of feat_a with row j of
    feat_b; each pair contributes softplus(theta) - S * theta, which is
    log(1 + exp(theta)) - S * theta without overflow.
    """
    sim = _check_binary(sim, (0.0, 1.0), "similarity")
    if feat_a.shape[1] != feat_b.shape[1]:
        raise ShapeError(
            f"feature widths differ: {feat_a.shape[1]} vs {feat_b.shape[1]}"
        )
    if sim.shape != (feat_a.shape[0], feat_b.shape[0]):
        raise ShapeError(
            f"similarity shape {sim.shape} does not match pair counts "
            f"({feat_a.shape[0]}, {feat_b.shape[0]})"
        )
    tape = feat_a.tape
    theta = nd.scale(nd.matmul(feat_a, nd.transpose(feat_b)), 0.5)
    penalty = nd.sub(nd.softplus(theta), nd.multiply(tape.constant(sim), theta))
    return nd.reduce_sum(penalty)


def quantization_loss(hash_real: Var, codes: np.ndarray) -> Var:
    """Squared Frobenius distance between real-valued and binary hash values."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape != hash_real.shape:
        raise ShapeError(
            f"code slice shape {codes.shape} does not match hash shape {hash_real.shape}"
        )
    if not np.isin(codes, (-1.0, 1.0)).all():
        raise ContractError("binary codes must contain only -1 and +1")
    return nd.frobenius_sq(nd.sub(hash_real, hash_real.tape.constant(codes)))


def classification_loss(predicted: Var, truth: np.ndarray) -> Var:
    """Squared Frobenius distance between predicted and true label matrices."""
    truth = _check_binary(truth, (0.0, 1.0), "labels")
    if truth.shape != predicted.shape:
        raise ShapeError(
            f"label shape {truth.shape} does not match prediction shape {predicted.shape}"
        )
    return nd.frobenius_sq(nd.sub(predicted, predicted.tape.constant(truth)))


def generator_objective(
    outputs: ModalityOutput,
    lab_outputs: ModalityOutput,
    sim: np.ndarray,
    code_slice: np.ndarray,
    truth: np.ndarray,
    weights: LossWeights,
) -> Tuple[Var, LossReport]:
    """Weighted generator loss for one modality against the label network.

    j1 pairs semantic features (label net rows against modality columns),
    j2 pairs real-valued hash outputs the same way, j3 pulls the modality
    hash toward the current binary codes, j4 matches predicted labels to
    the ground truth.  For the label network itself, pass the same output
    bundle as both arguments.
    """
    j1 = pairwise_nll(lab_outputs.semantic, outputs.semantic, sim)
    j2 = pairwise_nll(lab_outputs.hash_real, outputs.hash_real, sim)
    j3 = quantization_loss(outputs.hash_real, code_slice)
    j4 = classification_loss(outputs.labels, truth)
    total = nd.add(
        nd.add(
            nd.add(nd.scale(j1, weights.alpha), nd.scale(j2, weights.gamma)),
            nd.scale(j3, weights.eta),
        ),
        nd.scale(j4, weights.beta),
    )
    report = LossReport(
        j1=float(j1.value[0, 0]),
        j2=float(j2.value[0, 0]),
        j3=float(j3.value[0, 0]),
        j4=float(j4.value[0, 0]),
        total=float(total.value[0, 0]),
    )
    return total, report


def adversarial_objective(d_scores_real: Var, d_scores_fake: Var) -> Var:
    """Squared-error discriminator loss over real and fake score columns.

    Real scores (label-network features) are pulled toward 1, fake scores
    (modality features) toward 0; one batch of m real and m fake items
    contributes 2m terms.
    """
    for name, scores in (("real", d_scores_real), ("fake", d_scores_fake)):
        if scores.shape[1] != 1:
            raise ShapeError(f"{name} scores must be a column, got shape {scores.shape}")
    tape = d_scores_real.tape
    ones = tape.constant(np.ones(d_scores_real.shape))
    return nd.add(
        nd.frobenius_sq(nd.sub(d_scores_real, ones)),
        nd.frobenius_sq(d_scores_fake),
    )


def compose_totals(
    lab: LossReport, img: LossReport, txt: LossReport, adv_v: float, adv_t: float
) -> Tuple[float, float]:
    """Overall generator loss and overall adversarial loss."""
    return lab.total + img.total + txt.total, adv_v + adv_t
