"""Alternating adversarial training of the three generators and two critics.

Each epoch runs four sequential phases over the same shuffled batches:
the label network descends its own objective minus the full adversarial
loss, then the image and text networks each descend their objective minus
their discriminator's loss (label network frozen), and finally both
discriminators descend the adversarial loss with every generator frozen.
Losses are sums over the batch; the gradient step divides by the batch
size.  After the phases, the unified binary codes are recomputed over the
whole training set as the sign of the summed real-valued hash outputs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import IO, List, Optional, Sequence, Tuple

import numpy as np

from . import ndcore as nd
from .datamodel import Dataset, build_similarity
from .errors import ContractError, DivergenceError
from .losses import (
    LossReport,
    LossWeights,
    adversarial_objective,
    compose_totals,
    generator_objective,
)
from .networks import Models, build_models
from .retrieval import binarize

GENERATOR_PHASES = ("lab", "img", "txt")


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for one training run."""

    code_length: int = 16
    alpha: float = 1.0
    gamma: float = 1.0
    eta: float = 1e-4
    beta: float = 1e-4
    lr: float = 1e-4
    batch_size: int = 128
    t_max: int = 100
    inner_iters: int = 1
    width_factor: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.code_length < 1:
            raise ContractError(f"code_length must be at least 1, got {self.code_length}")
        if self.lr <= 0.0 or not np.isfinite(self.lr):
            raise ContractError(f"lr must be positive and finite, got {self.lr}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.t_max < 0:
            raise ContractError(f"t_max must be non-negative, got {self.t_max}")
        if self.inner_iters < 1:
            raise ContractError(f"inner_iters must be at least 1, got {self.inner_iters}")
        if self.width_factor <= 0.0:
            raise ContractError(f"width_factor must be positive, got {self.width_factor}")
        self.weights()  # validates alpha, gamma, eta, beta

    def weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, gamma=self.gamma, eta=self.eta, beta=self.beta)


@dataclass
class EpochMetrics:
    """Raw per-epoch loss sums, one record per epoch."""

    epoch: int
    lab: LossReport
    img: LossReport
    txt: LossReport
    adv_v: float
    adv_t: float
    l_gen: float
    l_adv: float
    wall_ms: float

    def to_json_dict(self) -> dict:
        out: dict = {"epoch": self.epoch}
        for name, report in (("lab", self.lab), ("img", self.img), ("txt", self.txt)):
            out[f"{name}_j1"] = report.j1
            out[f"{name}_j2"] = report.j2
            out[f"{name}_j3"] = report.j3
            out[f"{name}_j4"] = report.j4
            out[f"{name}_total"] = report.total
        out["adv_v"] = self.adv_v
        out["adv_t"] = self.adv_t
        out["l_gen"] = self.l_gen
        out["l_adv"] = self.l_adv
        out["wall_ms"] = self.wall_ms
        return out


@dataclass
class TrainState:
    """Networks, current binary codes, and the loss history."""

    models: Models
    codes: np.ndarray
    epoch: int = 0
    history: List[EpochMetrics] = field(default_factory=list)


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffle all indices, then split into consecutive batches."""
    order = rng.permutation(n)
    return [order[lo : lo + batch_size] for lo in range(0, n, batch_size)]


def consolidate_codes(models: Models, dataset: Dataset, chunk: int = 256) -> np.ndarray:
    """Unified codes: sign of the summed hash outputs of all three generators."""
    n = dataset.n
    labels = dataset.labels.astype(np.float64)
    summed = np.empty((n, models.k))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        tape = nd.Tape()
        h_l = models.labnet.forward(tape, labels[lo:hi], trainable=False).hash_real.value
        h_v = models.imgnet.forward(tape, dataset.images[lo:hi], trainable=False).hash_real.value
        h_t = models.txtnet.forward(tape, dataset.texts[lo:hi], trainable=False).hash_real.value
        summed[lo:hi] = h_v + h_t + h_l
    return binarize(summed)


def init_state(dataset: Dataset, config: TrainConfig) -> TrainState:
    """Fresh networks plus codes consolidated from their initial outputs."""
    models = build_models(
        d_v=dataset.d_v,
        d_t=dataset.d_t,
        c=dataset.c,
        k=config.code_length,
        width_factor=config.width_factor,
        seed=config.seed,
    )
    return TrainState(models=models, codes=consolidate_codes(models, dataset))


def _check_finite(values: dict, epoch: int, phase: str) -> None:
    for term, value in values.items():
        if not np.isfinite(value):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch}, phase {phase}, term {term}"
            )


def _accumulate(into: LossReport, piece: LossReport) -> None:
    into.j1 += piece.j1
    into.j2 += piece.j2
    into.j3 += piece.j3
    into.j4 += piece.j4
    into.total += piece.total


def generator_phase(
    state: TrainState,
    dataset: Dataset,
    batches: Sequence[np.ndarray],
    which: str,
    config: TrainConfig,
    epoch: int = 0,
) -> LossReport:
    """One pass of minibatch steps for a single generator network.

    The phase descends (generator objective - adversarial loss) / m with
    every other network frozen; the adversarial term sees the frozen
    discriminators, so its gradient pushes the generator to mislead them.
    """
    if which not in GENERATOR_PHASES:
        raise ContractError(f"unknown generator phase {which!r}")
    models = state.models
    weights = config.weights()
    labels = dataset.labels.astype(np.float64)
    summed = LossReport()
    for idx in batches:
        m = len(idx)
        batch_labels = labels[idx]
        tape = nd.Tape()
        lab_out = models.labnet.forward(tape, batch_labels, trainable=(which == "lab"))
        if which == "lab":
            out = lab_out
            params = models.labnet.params()
        elif which == "img":
            out = models.imgnet.forward(tape, dataset.images[idx], trainable=True)
            params = models.imgnet.params()
        else:
            out = models.txtnet.forward(tape, dataset.texts[idx], trainable=True)
            params = models.txtnet.params()

        sim = build_similarity(dataset.labels[idx], dataset.labels[idx])
        gen_total, report = generator_objective(
            out, lab_out, sim, state.codes[idx], batch_labels, weights
        )

        if which == "lab":
            fake_v = models.imgnet.forward(tape, dataset.images[idx], trainable=False)
            fake_t = models.txtnet.forward(tape, dataset.texts[idx], trainable=False)
            adv_v = adversarial_objective(
                models.disc_img.forward(tape, lab_out.semantic, trainable=False),
                models.disc_img.forward(tape, fake_v.semantic, trainable=False),
            )
            adv_t = adversarial_objective(
                models.disc_txt.forward(tape, lab_out.semantic, trainable=False),
                models.disc_txt.forward(tape, fake_t.semantic, trainable=False),
            )
            adv_term = nd.add(adv_v, adv_t)
            adv_values = {
                "adv_v": float(adv_v.value[0, 0]),
                "adv_t": float(adv_t.value[0, 0]),
            }
        else:
            disc = models.disc_img if which == "img" else models.disc_txt
            adv_term = adversarial_objective(
                disc.forward(tape, lab_out.semantic, trainable=False),
                disc.forward(tape, out.semantic, trainable=False),
            )
            key = "adv_v" if which == "img" else "adv_t"
            adv_values = {key: float(adv_term.value[0, 0])}

        _check_finite(
            {
                "j1": report.j1,
                "j2": report.j2,
                "j3": report.j3,
                "j4": report.j4,
                **adv_values,
            },
            epoch,
            which,
        )
        phase_loss = nd.scale(nd.sub(gen_total, adv_term), 1.0 / m)
        grads = nd.backward(phase_loss, params)
        nd.sgd_step(params, grads, config.lr, "descent")
        _accumulate(summed, report)
    return summed


def adversary_phase(
    state: TrainState,
    dataset: Dataset,
    batches: Sequence[np.ndarray],
    config: TrainConfig,
    epoch: int = 0,
) -> Tuple[float, float]:
    """Minibatch steps for both discriminators with generators frozen.

    Returns the summed pre-step adversarial losses (adv_v, adv_t) over the
    batches; inner_iters > 1 repeats each batch's step that many times.
    """
    models = state.models
    labels = dataset.labels.astype(np.float64)
    params = models.disc_img.params() + models.disc_txt.params()
    sum_v = 0.0
    sum_t = 0.0
    for idx in batches:
        m = len(idx)
        for it in range(config.inner_iters):
            tape = nd.Tape()
            f_l = models.labnet.forward(tape, labels[idx], trainable=False).semantic
            f_v = models.imgnet.forward(tape, dataset.images[idx], trainable=False).semantic
            f_t = models.txtnet.forward(tape, dataset.texts[idx], trainable=False).semantic
            adv_v = adversarial_objective(
                models.disc_img.forward(tape, f_l, trainable=True),
                models.disc_img.forward(tape, f_v, trainable=True),
            )
            adv_t = adversarial_objective(
                models.disc_txt.forward(tape, f_l, trainable=True),
                models.disc_txt.forward(tape, f_t, trainable=True),
            )
            value_v = float(adv_v.value[0, 0])
            value_t = float(adv_t.value[0, 0])
            _check_finite({"adv_v": value_v, "adv_t": value_t}, epoch, "adversary")
            if it == 0:
                sum_v += value_v
                sum_t += value_t
            total = nd.scale(nd.add(adv_v, adv_t), 1.0 / m)
            grads = nd.backward(total, params)
            nd.sgd_step(params, grads, config.lr, "descent")
    return sum_v, sum_t


def evaluate_adversarial(
    state: TrainState, dataset: Dataset, idx: np.ndarray
) -> Tuple[float, float]:
    """Current adversarial losses on one batch, without any update."""
    models = state.models
    labels = dataset.labels.astype(np.float64)
    tape = nd.Tape()
    f_l = models.labnet.forward(tape, labels[idx], trainable=False).semantic
    f_v = models.imgnet.forward(tape, dataset.images[idx], trainable=False).semantic
    f_t = models.txtnet.forward(tape, dataset.texts[idx], trainable=False).semantic
    adv_v = adversarial_objective(
        models.disc_img.forward(tape, f_l, trainable=False),
        models.disc_img.forward(tape, f_v, trainable=False),
    )
    adv_t = adversarial_objective(
        models.disc_txt.forward(tape, f_l, trainable=False),
        models.disc_txt.forward(tape, f_t, trainable=False),
    )
    return float(adv_v.value[0, 0]), float(adv_t.value[0, 0])


def train(
    dataset: Dataset, config: TrainConfig, log_stream: Optional[IO[str]] = None
) -> TrainState:
    """Run the full alternating loop for t_max epochs.

    Batches are drawn without replacement and reshuffled every epoch from
    a stream seeded by config.seed, so identical inputs give identical
    results.  One JSON object per epoch is written to log_stream when given.
    """
    state = init_state(dataset, config)
    rng = np.random.default_rng([config.seed, 1])
    for epoch in range(1, config.t_max + 1):
        t0 = time.perf_counter()
        batches = epoch_batches(dataset.n, config.batch_size, rng)
        lab_rep = generator_phase(state, dataset, batches, "lab", config, epoch)
        img_rep = generator_phase(state, dataset, batches, "img", config, epoch)
        txt_rep = generator_phase(state, dataset, batches, "txt", config, epoch)
        adv_v, adv_t = adversary_phase(state, dataset, batches, config, epoch)
        state.codes = consolidate_codes(state.models, dataset)
        l_gen, l_adv = compose_totals(lab_rep, img_rep, txt_rep, adv_v, adv_t)
        metrics = EpochMetrics(
            epoch=epoch,
            lab=lab_rep,
            img=img_rep,
            txt=txt_rep,
            adv_v=adv_v,
            adv_t=adv_t,
            l_gen=l_gen,
            l_adv=l_adv,
            wall_ms=(time.perf_counter() - t0) * 1000.0,
        )
        state.history.append(metrics)
        state.epoch = epoch
        if log_stream is not None:
            log_stream.write(json.dumps(metrics.to_json_dict()) + "\n")
    return state
