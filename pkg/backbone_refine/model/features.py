"""Rigid-motion invariant residue features.

For every residue i and each of its k nearest CA neighbours j:

- position of CA(j) in frame i, Å
- relative rotation Oᵢᵀ·Oⱼ, flattened
- sinusoidal encoding of the clipped sequence offset j − i
- Gaussian radial basis of the CA-CA distance

plus the residue's amino acid one-hot and a sinusoidal encoding of the
diffusion timestep. Every entry is a function of relative geometry only,
so a global rotation or translation of the frames leaves the features unchanged.

:py:meth:`ResidueFeatures.pooled` reduces the neighbour axis to the fixed
width network input.
"""
import logging
from dataclasses import dataclass

import numpy as np

from backbone_refine import config
from backbone_refine.geometry import FrameSet
from backbone_refine.metrics import TooShort

logger = logging.getLogger(__name__)

#: Width of one neighbour's feature vector: position, rotation, offset encoding, radial basis
NEIGHBOUR_DIMS = 3 + 9 + config.SEQUENCE_OFFSET_DIMS + config.RBF_CENTERS

#: Width of the geometric part paired with the offset encoding in the pooled outer product
_GEOMETRY_DIMS = 3 + 9 + config.RBF_CENTERS

#: Width of :py:meth:`ResidueFeatures.pooled` rows
POOLED_DIMS = (
    len(config.AMINO_ACIDS)
    + NEIGHBOUR_DIMS
    + config.SEQUENCE_OFFSET_DIMS * _GEOMETRY_DIMS
    + config.TIMESTEP_DIMS
)


@dataclass(frozen=True, eq=False)
class ResidueFeatures:
    """Per-residue network inputs."""

    #: (N, 21) amino acid one-hot
    aa_onehot: np.ndarray

    #: (N, k) neighbour residue indices, nearest first
    neighbours: np.ndarray

    #: (N, k, 3) neighbour CA in the residue's frame
    local_pos: np.ndarray

    #: (N, k, 9) relative rotations, row-major
    rel_rot: np.ndarray

    #: (N, k, 8) sequence offset encoding
    offset: np.ndarray

    #: (N, k, 16) CA-CA distance radial basis
    rbf: np.ndarray

    #: (8,) timestep encoding
    time: np.ndarray

    def __len__(self) -> int:
        return len(self.aa_onehot)

    def neighbour_block(self) -> np.ndarray:
        """(N, k, 36) concatenated neighbour features."""
        return np.concatenate([self.local_pos, self.rel_rot, self.offset, self.rbf], axis=-1)

    def pooled(self) -> np.ndarray:
        """(N, 289) network input.

        The neighbour axis is pooled two ways: the plain mean of the
        neighbour features, and the mean of the outer product of the offset
        encoding with the geometric features, which keeps track of which
        sequence neighbour sits where.
        """
        n = len(self)
        geometry = np.concatenate([self.local_pos, self.rel_rot, self.rbf], axis=-1)
        outer = np.einsum("nko,nkg->nog", self.offset, geometry).reshape(n, -1) / self.offset.shape[1]
        return np.concatenate(
            [
                self.aa_onehot,
                self.neighbour_block().mean(axis=1),
                outer,
                np.broadcast_to(self.time, (n, len(self.time))),
            ],
            axis=-1,
        )


def sinusoidal(x: np.ndarray, dims: int, base: float) -> np.ndarray:
    """(..., dims) sin/cos encoding with geometric frequencies base^(−m/(dims/2))."""
    half = dims // 2
    freqs = base ** (-np.arange(half) / half)
    angles = np.asarray(x, dtype=float)[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def radial_basis(d: np.ndarray) -> np.ndarray:
    """(..., 16) Gaussians with centres evenly spaced over 0..20 Å."""
    centers = np.linspace(0.0, config.RBF_MAX_DISTANCE, config.RBF_CENTERS)
    width = config.RBF_MAX_DISTANCE / config.RBF_CENTERS
    return np.exp(-(((np.asarray(d)[..., None] - centers) / width) ** 2))


def one_hot_sequence(seq: str) -> np.ndarray:
    index = [config.AMINO_ACIDS.index(a) if a in config.AMINO_ACIDS else len(config.AMINO_ACIDS) - 1 for a in seq]
    return np.eye(len(config.AMINO_ACIDS))[index]


def featurize(p: FrameSet, seq: str, t: int = 0, k: int = config.DEFAULT_K_NEIGHBOURS) -> ResidueFeatures:
    """Build the invariant features of a frame set.

    Neighbours are the k nearest CA atoms, ties broken by residue index. A
    `k` larger than N − 1 is reduced to N − 1.

    :param p: Frames
    :param seq: One-letter sequence
    :param t: Diffusion timestep, 0 for a clean or decoy structure
    :param k: Neighbour count
    :raise TooShort: Below 2 residues
    """
    n = len(p)
    if n < 2:
        raise TooShort(f"Features need at least 2 residues, got {n}")
    assert len(seq) == n, f"Sequence length {len(seq)} does not match {n} frames"
    assert k >= 1, f"Need at least one neighbour, got {k}"
    if k > n - 1:
        logger.debug("Reducing k from %d to %d for a %d residue structure", k, n - 1, n)
        k = n - 1

    ca = p.trans
    dist = np.linalg.norm(ca[:, None, :] - ca[None, :, :], axis=-1)
    np.fill_diagonal(dist, np.inf)
    neighbours = np.argsort(dist, axis=1, kind="stable")[:, :k]
    nd = np.take_along_axis(dist, neighbours, axis=1)

    rot_t = np.swapaxes(p.rot, -1, -2)
    local_pos = np.einsum("nij,nkj->nki", rot_t, ca[neighbours] - ca[:, None, :])
    rel_rot = np.einsum("nij,nkjl->nkil", rot_t, p.rot[neighbours]).reshape(n, k, 9)
    offsets = np.clip(neighbours - np.arange(n)[:, None], -config.SEQUENCE_OFFSET_CLIP, config.SEQUENCE_OFFSET_CLIP)

    return ResidueFeatures(
        aa_onehot=one_hot_sequence(seq),
        neighbours=neighbours,
        local_pos=local_pos,
        rel_rot=rel_rot,
        offset=sinusoidal(offsets, config.SEQUENCE_OFFSET_DIMS, 2.0 * config.SEQUENCE_OFFSET_CLIP),
        rbf=radial_basis(nd),
        time=sinusoidal(np.array(t), config.TIMESTEP_DIMS, 1000.0),
    )

