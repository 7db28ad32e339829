"""Frame-update refinement.

A refiner looks at the current frames and proposes a per-residue update
(ΔOᵢ, Δtᵢ); :py:func:`apply_update` moves tᵢ by Δtᵢ and composes ΔOᵢ on
the right of Oᵢ. :py:func:`iterate_refine` repeats this, and
:py:func:`ancestral_step` uses a refiner as the denoiser of one reverse
diffusion step.

Refiners follow the :py:class:`Refiner` protocol. Besides the learned one
in :py:mod:`backbone_refine.model.network` this module has three
reference implementations:

- :py:class:`IdentityRefiner` never moves anything

- :py:class:`OracleRefiner` jumps straight to the reference

- :py:class:`GradientRefiner` descends FAPE against the reference by finite differences

Example:

.. code-block:: python

    context = RefineContext(sequence=decoy.sequence, reference=frames_from_backbone(reference))
    refined, trace = iterate_refine(GradientRefiner(), frames_from_backbone(decoy), 4, context)
    print(trace_table(trace))
"""
import enum
import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import List, Optional, Protocol, Tuple, Union

import numpy as np
import pandas as pd

from backbone_refine import config
from backbone_refine.diffusion.igso3 import sample_igso3_rotvec
from backbone_refine.diffusion.schedule import Channel, InvalidSchedule, InvalidTimestep, Schedule
from backbone_refine.geometry import FrameSet, atom_coords_from_frames, atoms_from_frames, geodesic_flow, orthonormalize, so3_exp
from backbone_refine.losses import LengthMismatch, fape_local_mse
from backbone_refine.metrics import gdt, lddt
from backbone_refine.structure import BackboneStructure

logger = logging.getLogger(__name__)

class ComposeSide(enum.Enum):
    """Which side ΔO multiplies the current orientation from."""

    #: O ← O·ΔO, the update is expressed in the residue's own frame
    right = "right"

    #: O ← ΔO·O, global-frame update
    left = "left"


@dataclass(frozen=True, eq=False)
class FrameUpdate:
    """Per-residue rotation and translation change."""

    #: (N, 3, 3) ΔOᵢ
    delta_rot: np.ndarray

    #: (N, 3) Δtᵢ in Å, global frame
    delta_trans: np.ndarray

    def __post_init__(self):
        for name in ("delta_rot", "delta_trans"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        n = len(self.delta_trans)
        assert self.delta_rot.shape == (n, 3, 3), f"Bad update rotation shape {self.delta_rot.shape}"
        assert self.delta_trans.shape == (n, 3), f"Bad update translation shape {self.delta_trans.shape}"

    def __len__(self) -> int:
        return len(self.delta_trans)

    @classmethod
    def identity(cls, n: int) -> "FrameUpdate":
        return FrameUpdate(np.tile(np.eye(3), (n, 1, 1)), np.zeros((n, 3)))

    def inverse(self) -> "FrameUpdate":
        """(ΔOᵀ, −Δt), undoes a right-composed update."""
        return FrameUpdate(np.swapaxes(self.delta_rot, -1, -2), -self.delta_trans)


@dataclass(frozen=True)
class RefineContext:
    """What a refiner may know besides the frames."""

    #: One-letter sequence
    sequence: str

    #: Diffusion timestep of the input, 0 for a plain decoy
    timestep: int = 0

    #: Reference frames; only the oracle and gradient refiners look at them
    reference: Optional[FrameSet] = None


class Refiner(Protocol):
    """Anything that proposes a frame update.

    Contract: for a global rigid motion g = (R, x), ``propose(g·𝒫)`` must
    return Δt rotated by R and ΔO unchanged.
    Implementations must be safe to call from several threads on
    different structures.
    """

    def propose(self, frames: FrameSet, context: RefineContext) -> FrameUpdate:
        ...


def apply_update(p: FrameSet, u: FrameUpdate, side: Union[ComposeSide, str] = ComposeSide.right) -> FrameSet:
    """tᵢ ← tᵢ + Δtᵢ and Oᵢ ← Oᵢ·ΔOᵢ.

    :param side: ``left`` composes ΔOᵢ·Oᵢ instead
    :raise LengthMismatch: If the update has a different length
    """
    if len(p) != len(u):
        raise LengthMismatch(f"Update for {len(u)} residues applied to {len(p)} frames")
    side = ComposeSide(side)
    rot = p.rot @ u.delta_rot if side == ComposeSide.right else u.delta_rot @ p.rot
    return FrameSet(rot, p.trans + u.delta_trans)


def oracle_refiner(p: FrameSet, truth: FrameSet) -> FrameUpdate:
    """The update that takes `p` exactly to `truth` in one step.

    :raise LengthMismatch: If the frame sets differ in length
    """
    if len(p) != len(truth):
        raise LengthMismatch(f"Frames have {len(p)} residues, truth {len(truth)}")
    return FrameUpdate(np.swapaxes(p.rot, -1, -2) @ truth.rot, truth.trans - p.trans)


def _template_fape(p: FrameSet, truth: FrameSet, truth_atoms: np.ndarray) -> float:
    return fape_local_mse(p, atom_coords_from_frames(p), truth, truth_atoms)


def _fape_gradient(rot: np.ndarray, trans: np.ndarray, truth: FrameSet, truth_atoms: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences of FAPE w.r.t. each translation and right-tangent rotation."""
    n = len(trans)
    g_trans = np.zeros((n, 3))
    g_rot = np.zeros((n, 3))
    steps = so3_exp(np.concatenate([h * np.eye(3), -h * np.eye(3)]))
    for i in range(n):
        for k in range(3):
            t_plus = trans.copy()
            t_minus = trans.copy()
            t_plus[i, k] += h
            t_minus[i, k] -= h
            f_plus = _template_fape(FrameSet(rot, t_plus), truth, truth_atoms)
            f_minus = _template_fape(FrameSet(rot, t_minus), truth, truth_atoms)
            g_trans[i, k] = (f_plus - f_minus) / (2 * h)

            r_plus = rot.copy()
            r_minus = rot.copy()
            r_plus[i] = rot[i] @ steps[k]
            r_minus[i] = rot[i] @ steps[k + 3]
            f_plus = _template_fape(FrameSet(r_plus, trans), truth, truth_atoms)
            f_minus = _template_fape(FrameSet(r_minus, trans), truth, truth_atoms)
            g_rot[i, k] = (f_plus - f_minus) / (2 * h)
    return g_trans, g_rot


def gradient_descent(
    p: FrameSet,
    truth: FrameSet,
    step: float = 0.05,
    n_inner: int = 5,
    h: float = config.GRADIENT_REFINER_H,
) -> Tuple[FrameSet, List[float]]:
    """Fixed-size steepest descent of FAPE against `truth`.

    Each step moves along the negative finite-difference gradient, scaled
    so that the largest per-residue translation or rotation move is `step`
    (Å or radians). Stops early when the gradient vanishes.

    :return: Final frames and the FAPE before every step plus after the last one
    """
    assert step > 0, f"Step must be positive, got {step}"
    assert n_inner >= 1, f"Need at least one descent step, got {n_inner}"
    if len(p) != len(truth):
        raise LengthMismatch(f"Frames have {len(p)} residues, truth {len(truth)}")
    truth_atoms = atom_coords_from_frames(truth)
    rot = np.array(p.rot)
    trans = np.array(p.trans)
    losses = [_template_fape(p, truth, truth_atoms)]
    for _ in range(n_inner):
        g_trans, g_rot = _fape_gradient(rot, trans, truth, truth_atoms, h)
        scale = max(np.linalg.norm(g_trans, axis=-1).max(), np.linalg.norm(g_rot, axis=-1).max())
        if scale < 1e-8:
            break
        trans = trans - step * g_trans / scale
        rot = rot @ so3_exp(-step * g_rot / scale)
        losses.append(_template_fape(FrameSet(rot, trans), truth, truth_atoms))
    return FrameSet(rot, trans), losses


def gradient_refiner(
    p: FrameSet,
    truth: FrameSet,
    step: float = 0.05,
    n_inner: int = 5,
) -> FrameUpdate:
    """Net update of :py:func:`gradient_descent`: Δt = t_end − t, ΔO = Oᵀ·O_end."""
    end, _ = gradient_descent(p, truth, step, n_inner)
    return FrameUpdate(np.swapaxes(p.rot, -1, -2) @ end.rot, end.trans - p.trans)


class IdentityRefiner:
    """Always proposes the identity update."""

    def propose(self, frames: FrameSet, context: RefineContext) -> FrameUpdate:
        return FrameUpdate.identity(len(frames))


class OracleRefiner:
    """Proposes the exact update to the context's reference frames."""

    def propose(self, frames: FrameSet, context: RefineContext) -> FrameUpdate:
        assert context.reference is not None, "Oracle refiner needs reference frames"
        return oracle_refiner(frames, context.reference)


@dataclass(frozen=True)
class GradientRefiner:
    """Finite-difference FAPE descent towards the context's reference frames."""

    step: float = 0.05
    n_inner: int = 5

    def propose(self, frames: FrameSet, context: RefineContext) -> FrameUpdate:
        assert context.reference is not None, "Gradient refiner needs reference frames"
        return gradient_refiner(frames, context.reference, self.step, self.n_inner)


@dataclass(frozen=True)
class TraceRow:
    """Diagnostics after a refinement step; step 0 is the input."""

    step: int
    fape: float
    lddt: float
    gdt_ts: float

    def to_dict(self) -> dict:
        return asdict(self)


def trace_table(trace: List[TraceRow]) -> pd.DataFrame:
    """Trace as a DataFrame with columns step, fape, lddt, gdt_ts."""
    return pd.DataFrame([r.to_dict() for r in trace], columns=["step", "fape", "lddt", "gdt_ts"])


def _trace_row(step: int, p: FrameSet, context: RefineContext, with_metrics: bool) -> TraceRow:
    if context.reference is None:
        return TraceRow(step, math.nan, math.nan, math.nan)
    truth_atoms = atom_coords_from_frames(context.reference)
    fape = _template_fape(p, context.reference, truth_atoms)
    if not with_metrics:
        return TraceRow(step, fape, math.nan, math.nan)
    pred = atoms_from_frames(p)
    ref = atoms_from_frames(context.reference)
    lddt_score = lddt(pred, ref) if len(p) >= 2 else math.nan
    gdt_ts = gdt(pred, ref)[0] if len(p) >= 4 else math.nan
    return TraceRow(step, fape, lddt_score, gdt_ts)


def iterate_refine(
    r: Refiner,
    p: FrameSet,
    n_steps: int = config.DEFAULT_REFINE_STEPS,
    context: Optional[RefineContext] = None,
    side: Union[ComposeSide, str] = ComposeSide.right,
    with_metrics: bool = True,
) -> Tuple[FrameSet, List[TraceRow]]:
    """Propose and apply `n_steps` updates.

    Rotations are projected back onto SO(3) every 64 composed updates.
    When the context carries reference frames every step is scored with
    FAPE, lDDT and GDT-TS on template atoms, otherwise the trace holds NaN.

    :param with_metrics: Skip lDDT and GDT-TS in the trace when False
    :return: Refined frames and n_steps + 1 trace rows
    """
    assert n_steps >= 1, f"Need at least one refinement step, got {n_steps}"
    context = context or RefineContext(sequence="X" * len(p))
    trace = [_trace_row(0, p, context, with_metrics)]
    for step in range(1, n_steps + 1):
        update = r.propose(p, context)
        p = apply_update(p, update, side)
        if step % config.REORTHONORMALIZE_EVERY == 0:
            p = FrameSet(orthonormalize(p.rot), p.trans)
        trace.append(_trace_row(step, p, context, with_metrics))
        logger.debug("Refinement step %d/%d, FAPE %.4f", step, n_steps, trace[-1].fape)
    return p, trace


def transport_atoms(s: BackboneStructure, old: FrameSet, new: FrameSet) -> BackboneStructure:
    """Move every residue's own atoms rigidly with its frame change.

    Atom x of residue i goes to Oᵢ'·Oᵢᵀ·(x − tᵢ) + tᵢ', so the structure
    keeps its internal residue geometry instead of snapping to the template.
    Residues whose frame did not change keep their coordinates bit for bit.
    """
    assert len(s) == len(old) == len(new), "Structure and frames differ in length"
    local = np.einsum("nji,naj->nai", old.rot, s.coords - old.trans[:, None, :])
    coords = np.einsum("nij,naj->nai", new.rot, local) + new.trans[:, None, :]
    still = np.all(old.rot == new.rot, axis=(1, 2)) & np.all(old.trans == new.trans, axis=1)
    return s.with_coords(np.where(still[:, None, None], s.coords, coords))


def _check_schedules(s_pos: Schedule, s_ori: Schedule, t: int):
    assert s_pos.channel == Channel.pos and s_ori.channel == Channel.ori, "Pass the (pos, ori) schedules in order"
    if s_pos.n_steps != s_ori.n_steps:
        raise InvalidSchedule(f"Schedules differ in T_max: {s_pos.n_steps} vs {s_ori.n_steps}")
    s_pos.check_timestep(t)


def ancestral_step(
    r: Refiner,
    p_t: FrameSet,
    t: int,
    s_pos: Schedule,
    s_ori: Schedule,
    rng: np.random.Generator,
    context: Optional[RefineContext] = None,
    eps: Optional[np.ndarray] = None,
    rot_noise: Optional[np.ndarray] = None,
) -> FrameSet:
    """One reverse diffusion step 𝒫^T → 𝒫^{T−1} with a refiner as denoiser.

    The refiner's output 𝒫̂⁰ = apply_update(𝒫^T, propose(𝒫^T)) is the clean estimate.

    Translations: the DDPM posterior mean, in coordinates centred on the
    estimate's mean CA,

    .. code-block:: text

        μ = √ᾱ^{T−1}·β^T/(1−ᾱ^T) · x̂⁰ + √α^T·(1−ᾱ^{T−1})/(1−ᾱ^T) · x^T

    plus √β^{T−1}·ε. Orientations: move from O^T towards the shrunk
    estimate exp(√ᾱ^{T−1}·log Ô⁰) by the fraction β^T/(1−ᾱ^T) of the
    geodesic, then right-multiply IGSO(3) noise of variance β^{T−1}.
    At T = 1 no noise is added and the result is the estimate itself.

    :param eps: (N, 3) translation noise to use instead of drawing it
    :param rot_noise: (N, 3, 3) rotation noise to use instead of drawing it
    :raise InvalidTimestep: If `t` is outside [1, T_max]
    """
    _check_schedules(s_pos, s_ori, t)
    n = len(p_t)
    context = replace(context, timestep=t) if context else RefineContext(sequence="X" * n, timestep=t)
    p0_hat = apply_update(p_t, r.propose(p_t, context))

    alpha_bar = s_pos.alpha_bar_at(t)
    alpha_bar_prev = s_pos.alpha_bar_at(t - 1)
    beta = s_pos.beta_at(t)
    c1 = math.sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar)
    c2 = math.sqrt(1.0 - beta) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    center = p0_hat.trans.mean(axis=0)
    trans = center + c1 * (p0_hat.trans - center) + c2 * (p_t.trans - center)

    ori_bar = s_ori.alpha_bar_at(t)
    target = geodesic_flow(math.sqrt(s_ori.alpha_bar_at(t - 1)), p0_hat.rot)
    gamma = min(s_ori.beta_at(t) / (1.0 - ori_bar), 1.0)
    toward = np.swapaxes(p_t.rot, -1, -2) @ target
    rot = p_t.rot @ geodesic_flow(gamma, toward)

    if t > 1:
        sigma = math.sqrt(s_pos.beta_at(t - 1))
        if eps is None:
            eps = rng.standard_normal((n, 3))
        trans = trans + sigma * np.asarray(eps)
        if rot_noise is None:
            rot_noise = so3_exp(sample_igso3_rotvec(s_ori.beta_at(t - 1), rng, n))
        rot = rot @ np.asarray(rot_noise)
    return FrameSet(rot, trans)
