"""Training objectives.

- :py:func:`fape_local_mse`: frame aligned point error, every atom seen
  from every residue's local frame

- :py:func:`bond_loss`: hinge penalty on consecutive C(i)-N(i+1) peptide bond lengths

- :py:func:`score_matching_loss`: translation noise regression

- :py:func:`combine`: weighted multi-task total

Each loss has a companion ``*_grad`` function with its analytic gradient,
used by the toy refiner's backward pass.
"""
import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional, Union

import numpy as np

from backbone_refine import config
from backbone_refine.geometry import FrameSet
from backbone_refine.structure import BackboneStructure

logger = logging.getLogger(__name__)

Atoms = Union[BackboneStructure, np.ndarray]


class LengthMismatch(Exception):
    """Inputs describe different numbers of residues."""


@dataclass(frozen=True)
class BondSpec:
    """Ideal peptide bond length and the tolerance inside which no penalty applies."""

    #: Idealised C-N peptide bond length, Å
    l_lit: float = config.PEPTIDE_BOND_LENGTH

    #: Tolerance r, Å
    r: float = config.PEPTIDE_BOND_TOLERANCE

    def __post_init__(self):
        assert self.l_lit > 0, f"Bond length must be positive, got {self.l_lit}"
        assert self.r >= 0, f"Bond tolerance must be non-negative, got {self.r}"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossWeights:
    """Task weights of the combined loss."""

    w_mse: float = config.DEFAULT_W_MSE
    w_bond: float = config.DEFAULT_W_BOND
    w_score: float = config.DEFAULT_W_SCORE

    def __post_init__(self):
        values = [self.w_mse, self.w_bond, self.w_score]
        assert all(w >= 0 for w in values), f"Loss weights must be non-negative, got {values}"
        assert any(w > 0 for w in values), "At least one loss weight must be positive"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        known = {f.name for f in fields(cls)}
        assert set(data) <= known, f"Unknown loss weight keys {sorted(set(data) - known)}"
        return cls(**data)


@dataclass(frozen=True)
class LossBreakdown:
    """Loss components and their weighted total."""

    mse: float
    bond: float
    score: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FapeGradient:
    """Gradient of :py:func:`fape_local_mse` with respect to the prediction."""

    #: (N, 3, 3) with respect to each frame rotation matrix entry
    rot: np.ndarray

    #: (N, 3) with respect to each frame translation
    trans: np.ndarray

    #: (N, 4, 3) with respect to each predicted atom
    atoms: np.ndarray


def _coords(atoms: Atoms) -> np.ndarray:
    if isinstance(atoms, BackboneStructure):
        return atoms.coords
    return np.asarray(atoms, dtype=float)


def _local_points(frames: FrameSet, coords: np.ndarray) -> np.ndarray:
    # (N_frames, N_atoms_total, 3): every atom in every frame
    flat = coords.reshape(-1, 3)
    return np.einsum("nji,nmj->nmi", frames.rot, flat[None, :, :] - frames.trans[:, None, :])


def _pair_mask(n_res: int, atoms_per_res: int, own_residue_only: bool) -> Optional[np.ndarray]:
    if not own_residue_only:
        return None
    owner = np.repeat(np.arange(n_res), atoms_per_res)
    return owner[None, :] == np.arange(n_res)[:, None]


def _check_lengths(*items):
    lengths = {len(i) for i in items}
    if len(lengths) != 1:
        raise LengthMismatch(f"Inputs have different residue counts: {sorted(lengths)}")


def _fape_terms(pred_frames, pred_atoms, true_frames, true_atoms, own_residue_only):
    pred_coords = _coords(pred_atoms)
    true_coords = _coords(true_atoms)
    _check_lengths(pred_frames, pred_coords, true_frames, true_coords)
    if pred_coords.shape != true_coords.shape:
        raise LengthMismatch(f"Atom arrays differ: {pred_coords.shape} vs {true_coords.shape}")
    diff = _local_points(pred_frames, pred_coords) - _local_points(true_frames, true_coords)
    norm = np.linalg.norm(diff, axis=-1)
    mask = _pair_mask(len(pred_frames), pred_coords.shape[1], own_residue_only)
    return pred_coords, diff, norm, mask


def fape_local_mse(
    pred_frames: FrameSet,
    pred_atoms: Atoms,
    true_frames: FrameSet,
    true_atoms: Atoms,
    clamp: Optional[float] = None,
    own_residue_only: bool = False,
) -> float:
    """Frame aligned point error in Å.

    Mean over every (frame i, atom j) pair of
    ‖Tᵢ⁻¹∘xⱼ − Tᵢ^{true,−1}∘xⱼ^{true}‖, with j running over all backbone
    atoms of all residues. Invariant under a global rigid motion of either
    argument.

    Example:

    .. code-block:: python

        loss = fape_local_mse(pred_frames, pred_structure, true_frames, reference)

    :param clamp: Cap each pair term at this many Å before averaging
    :param own_residue_only: Only pair frame i with residue i's own atoms
    :raise LengthMismatch: If the inputs have different residue counts
    """
    _, _, norm, mask = _fape_terms(pred_frames, pred_atoms, true_frames, true_atoms, own_residue_only)
    if clamp is not None:
        norm = np.minimum(norm, clamp)
    if mask is not None:
        return float(norm[mask].mean())
    return float(norm.mean())


def fape_local_mse_grad(
    pred_frames: FrameSet,
    pred_atoms: Atoms,
    true_frames: FrameSet,
    true_atoms: Atoms,
    clamp: Optional[float] = None,
    own_residue_only: bool = False,
) -> FapeGradient:
    """Analytic gradient of :py:func:`fape_local_mse` with respect to the prediction.

    Pairs with zero error, and pairs above the clamp, contribute nothing.
    """
    pred_coords, diff, norm, mask = _fape_terms(pred_frames, pred_atoms, true_frames, true_atoms, own_residue_only)
    weight = np.ones_like(norm)
    if mask is not None:
        weight = mask.astype(float)
    if clamp is not None:
        weight = weight * (norm < clamp)
    weight = weight / weight.size if mask is None else weight / mask.sum()
    safe = np.where(norm > 0, norm, 1.0)
    g = np.where(norm[..., None] > 0, diff / safe[..., None], 0.0) * weight[..., None]  # (N, M, 3)

    flat = pred_coords.reshape(-1, 3)
    y = flat[None, :, :] - pred_frames.trans[:, None, :]
    d_atoms = np.einsum("nij,nmj->mi", pred_frames.rot, g).reshape(pred_coords.shape)
    d_trans = -np.einsum("nij,nj->ni", pred_frames.rot, g.sum(axis=1))
    d_rot = np.einsum("nmj,nmk->njk", y, g)
    return FapeGradient(rot=d_rot, trans=d_trans, atoms=d_atoms)


def _bond_vectors(coords: np.ndarray) -> np.ndarray:
    n_idx = config.BACKBONE_ATOMS.index("N")
    c_idx = config.BACKBONE_ATOMS.index("C")
    return coords[1:, n_idx] - coords[:-1, c_idx]


def bond_loss(s: Atoms, spec: BondSpec = BondSpec()) -> float:
    """Mean hinge max(|l − l_lit| − r, 0) over the N_res − 1 peptide bonds, in Å."""
    coords = _coords(s)
    assert len(coords) >= 2, "Bond loss needs at least two residues"
    lengths = np.linalg.norm(_bond_vectors(coords), axis=-1)
    return float(np.maximum(np.abs(lengths - spec.l_lit) - spec.r, 0.0).mean())


def bond_loss_grad(s: Atoms, spec: BondSpec = BondSpec()) -> np.ndarray:
    """(N_res, 4, 3) gradient of :py:func:`bond_loss` with respect to the atoms."""
    coords = _coords(s)
    assert len(coords) >= 2, "Bond loss needs at least two residues"
    d = _bond_vectors(coords)
    lengths = np.linalg.norm(d, axis=-1)
    active = np.abs(lengths - spec.l_lit) > spec.r
    scale = np.where(active, np.sign(lengths - spec.l_lit), 0.0) / len(d)
    g = scale[:, None] * d / lengths[:, None]
    out = np.zeros_like(coords)
    out[1:, config.BACKBONE_ATOMS.index("N")] += g
    out[:-1, config.BACKBONE_ATOMS.index("C")] -= g
    return out


def score_matching_loss(predicted_noise: np.ndarray, eps: np.ndarray) -> float:
    """(1/N_res)·Σⱼ‖εⱼ − ε̂ⱼ‖².

    :param predicted_noise: (N, 3) noise estimate ε̂
    :param eps: (N, 3) recorded noise, or anything with an ``eps`` attribute such as a noise record
    :raise LengthMismatch: If the residue counts differ
    """
    eps = np.asarray(getattr(eps, "eps", eps), dtype=float)
    predicted_noise = np.asarray(predicted_noise, dtype=float)
    _check_lengths(predicted_noise, eps)
    return float(np.sum((eps - predicted_noise) ** 2) / len(eps))


def score_matching_loss_grad(predicted_noise: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Gradient 2(ε̂ − ε)/N with respect to the prediction."""
    eps = np.asarray(getattr(eps, "eps", eps), dtype=float)
    predicted_noise = np.asarray(predicted_noise, dtype=float)
    _check_lengths(predicted_noise, eps)
    return 2.0 * (predicted_noise - eps) / len(eps)


def combine(mse: float, bond: float, score: float, w: LossWeights = LossWeights()) -> LossBreakdown:
    """Weighted total w_mse·mse + w_bond·bond + w_score·score."""
    assert min(mse, bond, score) >= 0, f"Loss components must be non-negative: {mse} {bond} {score}"
    total = w.w_mse * mse + w.w_bond * bond + w.w_score * score
    return LossBreakdown(mse=float(mse), bond=float(bond), score=float(score), total=float(total))
