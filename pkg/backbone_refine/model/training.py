"""Denoising pretraining of the toy refiner.

Every optimisation step:

1. picks training structures for the batch
2. corrupts each one at a timestep drawn uniformly from the configured range
   (the decoy is corrupted when the item is a :py:class:`~backbone_refine.structure.DecoyPair`)
3. runs ``n_refine_steps`` rounds of featurize, forward and apply_update
4. scores the final frames against the reference with
   :py:func:`~backbone_refine.losses.combine` of FAPE, bond and optional noise regression terms
5. back-propagates by hand and takes an optimiser step

Between refinement rounds the translation gradient flows through all
rounds while the rotation gradient stops at the round that produced it.
Features are treated as constants.

Example:

.. code-block:: python

    refs = [make_synthetic("helix", 24, rng_seed=i) for i in range(20)]
    params, log = train(refs, TrainConfig(epochs=30, seed=1))
    print(log.epoch_table())
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from backbone_refine import config
from backbone_refine.diffusion.forward import NoiseRecord, corrupt, implied_noise
from backbone_refine.diffusion.schedule import Schedule, ScheduleConfig
from backbone_refine.geometry import FrameSet, atom_coords_from_frames, atoms_from_frames, default_template, frames_from_backbone
from backbone_refine.losses import (
    LossBreakdown,
    LossWeights,
    bond_loss,
    bond_loss_grad,
    combine,
    fape_local_mse,
    fape_local_mse_grad,
    score_matching_loss,
    score_matching_loss_grad,
)
from backbone_refine.metrics import DeltaReport, lddt, score
from backbone_refine.model.network import (
    LAYERS,
    ForwardCache,
    ModelRefiner,
    ToyRefinerParams,
    backward_from_cache,
    forward_with_cache,
    zero_grads,
)
from backbone_refine.model.features import featurize
from backbone_refine.model.optim import OptimizerKind, make_optimizer
from backbone_refine.refinement import RefineContext, Refiner, apply_update, iterate_refine, transport_atoms
from backbone_refine.report import ReportRow, mean_deltas
from backbone_refine.structure import BackboneStructure, DecoyPair
from backbone_refine.utils import make_rng, ordered_map

logger = logging.getLogger(__name__)

#: Random stream keys under the run seed
_INIT_STREAM = 0
_VALIDATION_STREAM = 1
_SHUFFLE_STREAM = 2
_EXAMPLE_STREAM = 3

TrainingItem = Union[BackboneStructure, DecoyPair]


class DivergedTraining(Exception):
    """Loss or parameters became NaN or infinite."""


@dataclass
class TrainConfig:
    """Training hyperparameters.

    Serialised as the ``train`` block of a run config.
    """

    epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-3

    #: ``adam`` or ``sgd``
    optimizer: str = "adam"

    weights: LossWeights = field(default_factory=LossWeights)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    #: Refinement rounds unrolled per training example
    n_refine_steps: int = 2

    seed: int = 0

    #: Neighbours per residue in the features
    k: int = config.DEFAULT_K_NEIGHBOURS

    #: Skip the diffusion corruption and train at T = 0 on the raw input
    direct_psr: bool = False

    #: Average the loss over every refinement round instead of the last one only
    intermediate_supervision: bool = False

    #: Inclusive timestep range to sample from, default the whole schedule
    t_range: Optional[Tuple[int, int]] = None

    #: Fixed corruption timestep of the validation set, default sampled from `t_range`
    val_timestep: Optional[int] = None

    #: Per-pair FAPE clamp in Å, off by default
    clamp: Optional[float] = None

    #: Layers to keep fixed
    frozen: Tuple[str, ...] = ()

    def __post_init__(self):
        assert self.epochs >= 0, f"epochs must be non-negative, got {self.epochs}"
        assert self.batch_size >= 1, f"batch_size must be positive, got {self.batch_size}"
        assert self.lr >= 0, f"lr must be non-negative, got {self.lr}"
        assert self.n_refine_steps >= 1, f"n_refine_steps must be positive, got {self.n_refine_steps}"
        assert self.k >= 1, f"k must be positive, got {self.k}"
        assert self.seed >= 0, f"seed must be non-negative, got {self.seed}"
        OptimizerKind(self.optimizer)
        layer_names = {name for name, _, _ in LAYERS}
        self.frozen = tuple(self.frozen)
        assert set(self.frozen) <= layer_names, f"Unknown layers {set(self.frozen) - layer_names}"
        if self.t_range is not None:
            low, high = self.t_range
            self.t_range = (int(low), int(high))
            assert 1 <= low <= high <= self.schedule.t_max, f"Bad timestep range {self.t_range} for T_max {self.schedule.t_max}"
        if self.val_timestep is not None:
            assert 1 <= self.val_timestep <= self.schedule.t_max, f"Bad validation timestep {self.val_timestep}"

    def timestep_range(self) -> Tuple[int, int]:
        return self.t_range or (1, self.schedule.t_max)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["t_range"] = list(self.t_range) if self.t_range else None
        data["frozen"] = list(self.frozen)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        assert set(data) <= known, f"Unknown training config keys {sorted(set(data) - known)}"
        data = dict(data)
        if "weights" in data:
            data["weights"] = LossWeights.from_dict(data["weights"])
        if "schedule" in data:
            data["schedule"] = ScheduleConfig.from_dict(data["schedule"])
        if data.get("t_range") is not None:
            data["t_range"] = tuple(data["t_range"])
        if "frozen" in data:
            data["frozen"] = tuple(data["frozen"])
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class TrainingExample:
    """One corrupted input with its supervision target."""

    sequence: str

    #: Frames fed to the first refinement round
    start: FrameSet

    #: Reference frames
    truth: FrameSet

    #: (N, 4, 3) template atoms placed in the reference frames
    truth_atoms: np.ndarray

    #: Diffusion timestep of `start`, 0 when not corrupted
    timestep: int = 0

    #: Noise that produced `start`
    record: Optional[NoiseRecord] = None

    #: The record was drawn around the reference itself, so the noise regression term applies
    supervise_noise: bool = False


@dataclass(frozen=True)
class StepRow:
    step: int
    epoch: int
    total: float
    mse: float
    bond: float
    score: float


@dataclass(frozen=True)
class EpochRow:
    """Epoch means of the training losses and the validation scores after the epoch.

    Epoch 0 holds the validation scores of the initial parameters and NaN training losses.
    """

    epoch: int
    step: int
    total: float
    mse: float
    bond: float
    score: float
    val_fape: float
    val_lddt: float


@dataclass
class TrainingLog:
    """Loss traces of a training run."""

    epochs: List[EpochRow] = field(default_factory=list)
    steps: List[StepRow] = field(default_factory=list)

    def epoch_table(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.epochs], columns=[f.name for f in fields(EpochRow)])

    def step_table(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.steps], columns=[f.name for f in fields(StepRow)])

    def save(self, path: Union[str, Path]):
        """Write the epoch table as TSV."""
        self.epoch_table().to_csv(path, sep="\t", index=False)
        logger.info("Wrote training log with %d epochs to %s", len(self.epochs), path)


def prepare_example(
    item: TrainingItem,
    cfg: TrainConfig,
    schedules: Tuple[Schedule, Schedule],
    rng: np.random.Generator,
    timestep: Optional[int] = None,
) -> TrainingExample:
    """Corrupt a training item.

    References are corrupted directly. For decoy pairs the decoy is
    corrupted and the reference stays the target.

    :param timestep: Use this timestep instead of sampling one
    """
    if isinstance(item, DecoyPair):
        reference, start_structure = item.reference, item.decoy
    else:
        reference = start_structure = item
    truth = frames_from_backbone(reference)
    start = frames_from_backbone(start_structure)
    truth_atoms = atom_coords_from_frames(truth)
    if cfg.direct_psr:
        return TrainingExample(reference.sequence, start, truth, truth_atoms)

    s_pos, s_ori = schedules
    if timestep is None:
        low, high = cfg.timestep_range()
        timestep = int(rng.integers(low, high + 1))
    noisy, record = corrupt(start, timestep, s_pos, s_ori, rng)
    return TrainingExample(
        reference.sequence,
        noisy,
        truth,
        truth_atoms,
        timestep=timestep,
        record=record,
        supervise_noise=start_structure is reference,
    )


def unroll(params: ToyRefinerParams, ex: TrainingExample, n_steps: int, k: int) -> Tuple[List[FrameSet], List[ForwardCache]]:
    """Run the refinement rounds of one example.

    :return: Frames before and after every round, and the forward caches
    """
    frames = [ex.start]
    caches = []
    for _ in range(n_steps):
        feats = featurize(frames[-1], ex.sequence, ex.timestep, k)
        update, cache = forward_with_cache(params, feats, frames[-1])
        frames.append(apply_update(frames[-1], update))
        caches.append(cache)
    return frames, caches


def frame_loss(
    p: FrameSet,
    ex: TrainingExample,
    weights: LossWeights,
    s_pos: Schedule,
    clamp: Optional[float] = None,
) -> Tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Combined loss of predicted frames and its gradient.

    Predicted atoms are the ideal template placed in `p`, so the atom
    gradients fold back into the frames.

    :return: Loss breakdown, (N, 3, 3) ∂L/∂O and (N, 3) ∂L/∂t
    """
    tpl = default_template().coords
    atoms = atom_coords_from_frames(p)
    mse = fape_local_mse(p, atoms, ex.truth, ex.truth_atoms, clamp=clamp)
    fape_grad = fape_local_mse_grad(p, atoms, ex.truth, ex.truth_atoms, clamp=clamp)
    bond = bond_loss(atoms)

    g_atoms = weights.w_mse * fape_grad.atoms + weights.w_bond * bond_loss_grad(atoms)
    d_rot = weights.w_mse * fape_grad.rot + np.einsum("nai,aj->nij", g_atoms, tpl)
    d_trans = weights.w_mse * fape_grad.trans + g_atoms.sum(axis=1)

    noise_term = 0.0
    if weights.w_score > 0 and ex.supervise_noise and ex.record is not None:
        eps_hat = implied_noise(ex.start.trans, p.trans, ex.timestep, s_pos, center=ex.record.center)
        noise_term = score_matching_loss(eps_hat, ex.record)
        alpha_bar = s_pos.alpha_bar_at(ex.timestep)
        d_eps = -math.sqrt(alpha_bar) / (config.TRANSLATION_SCALE * math.sqrt(1.0 - alpha_bar))
        d_trans = d_trans + weights.w_score * d_eps * score_matching_loss_grad(eps_hat, ex.record)

    return combine(mse, bond, noise_term, weights), d_rot, d_trans


def _mean_breakdown(items: Sequence[LossBreakdown], weights: LossWeights) -> LossBreakdown:
    return combine(
        float(np.mean([b.mse for b in items])),
        float(np.mean([b.bond for b in items])),
        float(np.mean([b.score for b in items])),
        weights,
    )


def example_loss_and_grad(
    params: ToyRefinerParams,
    ex: TrainingExample,
    cfg: TrainConfig,
    schedules: Tuple[Schedule, Schedule],
) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
    """Loss of one example and its parameter gradients."""
    s_pos = schedules[0]
    frames, caches = unroll(params, ex, cfg.n_refine_steps, cfg.k)
    n_rounds = len(caches)
    supervised = range(1, n_rounds + 1) if cfg.intermediate_supervision else [n_rounds]
    terms = {s: frame_loss(frames[s], ex, cfg.weights, s_pos, cfg.clamp) for s in supervised}
    weight = 1.0 / len(terms)

    grads = zero_grads()
    g_rot = np.zeros((len(ex.start), 3, 3))
    g_trans = np.zeros((len(ex.start), 3))
    for s in range(n_rounds, 0, -1):
        if s in terms:
            _, d_rot, d_trans = terms[s]
            g_rot = g_rot + weight * d_rot
            g_trans = g_trans + weight * d_trans
        # O^s = O^{s-1}·ΔO, t^s = t^{s-1} + Δt
        g_delta_rot = np.swapaxes(frames[s - 1].rot, -1, -2) @ g_rot
        round_grads = backward_from_cache(params, caches[s - 1], g_delta_rot, g_trans, cfg.frozen)
        for name in grads:
            grads[name] += round_grads[name]
        # Stop-gradient on rotations between rounds
        g_rot = np.zeros_like(g_rot)

    return _mean_breakdown([b for b, _, _ in terms.values()], cfg.weights), grads


def example_loss(
    params: ToyRefinerParams,
    ex: TrainingExample,
    cfg: TrainConfig,
    schedules: Tuple[Schedule, Schedule],
) -> LossBreakdown:
    """Loss of one example, no gradients."""
    frames, _ = unroll(params, ex, cfg.n_refine_steps, cfg.k)
    rounds = range(1, len(frames)) if cfg.intermediate_supervision else [len(frames) - 1]
    items = [frame_loss(frames[s], ex, cfg.weights, schedules[0], cfg.clamp)[0] for s in rounds]
    return _mean_breakdown(items, cfg.weights)


def _check_data(data: Sequence[TrainingItem]):
    assert len(data) >= 1, "Need at least one training structure"
    assert len(data) <= config.MAX_TRAIN_STRUCTURES, f"At most {config.MAX_TRAIN_STRUCTURES} training structures, got {len(data)}"
    for item in data:
        n = len(item.reference if isinstance(item, DecoyPair) else item)
        assert 2 <= n <= config.MAX_TRAIN_RESIDUES, f"Training structures need 2..{config.MAX_TRAIN_RESIDUES} residues, got {n}"


def _validation_scores(params: ToyRefinerParams, ex: TrainingExample, cfg: TrainConfig) -> Tuple[float, float]:
    frames, _ = unroll(params, ex, cfg.n_refine_steps, cfg.k)
    final = frames[-1]
    fape = fape_local_mse(final, atom_coords_from_frames(final), ex.truth, ex.truth_atoms)
    return fape, lddt(atoms_from_frames(final), atoms_from_frames(ex.truth))


def validate(params: ToyRefinerParams, examples: Sequence[TrainingExample], cfg: TrainConfig, jobs: int = 1) -> Tuple[float, float]:
    """Mean FAPE and lDDT after refining fixed validation examples."""
    scores = ordered_map(partial(_validation_scores, params, cfg=cfg), examples, jobs)
    return float(np.mean([s[0] for s in scores])), float(np.mean([s[1] for s in scores]))


def _fail(message: str):
    logger.error(message)
    raise DivergedTraining(message)


def train(
    data: Sequence[TrainingItem],
    cfg: TrainConfig,
    val_data: Optional[Sequence[TrainingItem]] = None,
    jobs: int = 1,
    init: Optional[ToyRefinerParams] = None,
) -> Tuple[ToyRefinerParams, TrainingLog]:
    """Train the toy refiner.

    All randomness comes from ``cfg.seed``: the same data and config give
    bit-identical parameters and logs, whatever `jobs` is.

    :param data: Reference structures or decoy pairs
    :param val_data: Validation items, corrupted once up front; default the training items
    :param jobs: Workers for the per-example forward and backward passes
    :param init: Start from these parameters instead of a fresh initialisation
    :raise DivergedTraining: If the loss or parameters stop being finite
    """
    data = list(data)
    _check_data(data)
    schedules = cfg.schedule.build()
    params = init.copy() if init else ToyRefinerParams.init(make_rng(cfg.seed, _INIT_STREAM))
    optimizer = make_optimizer(cfg.optimizer, cfg.lr)

    val_items = list(val_data) if val_data else data
    val_examples = [
        prepare_example(item, cfg, schedules, make_rng(cfg.seed, _VALIDATION_STREAM, i), cfg.val_timestep)
        for i, item in enumerate(val_items)
    ]

    log = TrainingLog()
    val_fape, val_lddt = validate(params, val_examples, cfg, jobs)
    log.epochs.append(EpochRow(0, 0, math.nan, math.nan, math.nan, math.nan, val_fape, val_lddt))
    logger.info("Training on %d items for %d epochs, initial val FAPE %.4f", len(data), cfg.epochs, val_fape)

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = make_rng(cfg.seed, _SHUFFLE_STREAM, epoch).permutation(len(data))
        epoch_losses = []
        for first in range(0, len(order), cfg.batch_size):
            batch = [int(i) for i in order[first : first + cfg.batch_size]]

            def run(index: int) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
                ex = prepare_example(data[index], cfg, schedules, make_rng(cfg.seed, _EXAMPLE_STREAM, epoch, index))
                return example_loss_and_grad(params, ex, cfg, schedules)

            results = ordered_map(run, batch, jobs)
            breakdown = _mean_breakdown([r[0] for r in results], cfg.weights)
            grads = {name: sum(r[1][name] for r in results) / len(results) for name in results[0][1]}

            if not math.isfinite(breakdown.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                _fail(f"Training diverged at epoch {epoch} step {step + 1}: loss {breakdown.total}")
            params = optimizer.step(params, grads)
            if not params.is_finite():
                _fail(f"Parameters became non-finite at epoch {epoch} step {step + 1}")

            step += 1
            log.steps.append(StepRow(step, epoch, breakdown.total, breakdown.mse, breakdown.bond, breakdown.score))
            epoch_losses.append(breakdown)
            logger.debug("Step %d: total %.5f mse %.5f bond %.5f score %.5f", step, breakdown.total, breakdown.mse, breakdown.bond, breakdown.score)

        mean = _mean_breakdown(epoch_losses, cfg.weights)
        val_fape, val_lddt = validate(params, val_examples, cfg, jobs)
        log.epochs.append(EpochRow(epoch, step, mean.total, mean.mse, mean.bond, mean.score, val_fape, val_lddt))
        logger.info("Epoch %d/%d: train loss %.4f, val FAPE %.4f, val lDDT %.2f", epoch, cfg.epochs, mean.total, val_fape, val_lddt)

    return params, log


def _evaluate_pair(refiner: Refiner, n_steps: int, pair: DecoyPair) -> ReportRow:
    start = frames_from_backbone(pair.decoy)
    context = RefineContext(sequence=pair.decoy.sequence, reference=frames_from_backbone(pair.reference))
    refined_frames, _ = iterate_refine(refiner, start, n_steps, context, with_metrics=False)
    refined = transport_atoms(pair.decoy, start, refined_frames)
    return ReportRow(pair.target_id, score(pair.decoy, pair.reference), score(refined, pair.reference))


def evaluate_refiner(
    refiner: Refiner,
    pairs: Sequence[DecoyPair],
    n_steps: int = config.DEFAULT_REFINE_STEPS,
    jobs: int = 1,
) -> Tuple[List[ReportRow], DeltaReport]:
    """Refine every decoy and score it against its reference before and after.

    Refined structures keep the decoy's own atoms, moved with their frames.

    :return: Per-pair report rows and the mean deltas
    """
    rows = ordered_map(partial(_evaluate_pair, refiner, n_steps), pairs, jobs)
    mean = mean_deltas(rows)
    logger.info(
        "Evaluated %d pairs: mean ΔlDDT %.3f, ΔGDT-TS %.3f, ΔGDT-HA %.3f",
        len(rows),
        mean.delta_lddt,
        mean.delta_gdt_ts,
        mean.delta_gdt_ha,
    )
    return rows, mean


def evaluate(
    params: ToyRefinerParams,
    pairs: Sequence[DecoyPair],
    n_steps: int = config.DEFAULT_REFINE_STEPS,
    k: int = config.DEFAULT_K_NEIGHBOURS,
    jobs: int = 1,
) -> Tuple[List[ReportRow], DeltaReport]:
    """:py:func:`evaluate_refiner` with the toy refiner."""
    return evaluate_refiner(ModelRefiner(params, k), pairs, n_steps, jobs)
