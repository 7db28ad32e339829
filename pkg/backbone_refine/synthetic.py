"""Synthetic ideal backbones for desk-scale experiments.

Backbones are grown residue by residue from internal coordinates: bond
lengths and bond angles from :py:mod:`backbone_refine.config` and the
ideal template, plus (phi, psi, omega) torsions of the requested
secondary structure. The carbonyl oxygen is placed from the template, so
every residue is exactly template consistent and the output round-trips
through :py:func:`backbone_refine.geometry.frames_from_backbone`.

Example:

.. code-block:: python

    from backbone_refine.synthetic import make_synthetic

    helix = make_synthetic("helix", 32, rng_seed=1)
    strand = make_synthetic("extended", 16, rng_seed=2, jitter=0.0)
"""
import enum
import logging
import math
from typing import Union

import numpy as np

from backbone_refine import config
from backbone_refine.geometry import atoms_from_frames, default_template, frames_from_backbone
from backbone_refine.structure import BackboneStructure
from backbone_refine.utils import make_rng

logger = logging.getLogger(__name__)

MIN_RESIDUES = 2
MAX_RESIDUES = 512


class SyntheticKind(enum.Enum):
    """Secondary structure of a synthetic backbone."""

    #: Right handed alpha helix, about 1.5 Å rise and 100° twist per residue
    helix = "helix"

    #: Beta strand
    extended = "extended"


_TORSIONS = {
    SyntheticKind.helix: config.HELIX_TORSIONS,
    SyntheticKind.extended: config.STRAND_TORSIONS,
}


def place_atom(a: np.ndarray, b: np.ndarray, c: np.ndarray, bond: float, angle: float, torsion: float) -> np.ndarray:
    """Position atom d from three preceding atoms.

    :param bond: |c - d| in Å
    :param angle: b-c-d bond angle in radians
    :param torsion: a-b-c-d dihedral in radians
    """
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.stack([bc, np.cross(n, bc), n], axis=-1)
    local = np.array(
        [
            -bond * math.cos(angle),
            bond * math.sin(angle) * math.cos(torsion),
            bond * math.sin(angle) * math.sin(torsion),
        ]
    )
    return c + m @ local


def _angle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    u = a - b
    v = c - b
    return math.acos(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def make_synthetic(
    kind: Union[SyntheticKind, str],
    n_res: int,
    rng_seed: int = 0,
    jitter: float = config.SYNTHETIC_TORSION_JITTER,
) -> BackboneStructure:
    """Build an ideal helix or extended strand.

    The first residue sits in the identity frame. Each seed gives its own
    random sequence and its own Gaussian torsion jitter on phi and psi.

    :param kind: ``helix`` or ``extended``
    :param n_res: Number of residues, 2..512
    :param rng_seed: Seed, same seed gives bit-identical output
    :param jitter: Standard deviation of the phi/psi jitter in degrees, 0 for ideal torsions
    """
    kind = SyntheticKind(kind)
    assert MIN_RESIDUES <= n_res <= MAX_RESIDUES, f"n_res must be in [{MIN_RESIDUES}, {MAX_RESIDUES}], got {n_res}"
    assert jitter >= 0, f"Negative jitter {jitter}"

    rng = make_rng(rng_seed)
    sequence = "".join(rng.choice(list(config.AMINO_ACIDS[:20]), size=n_res))
    phi0, psi0 = _TORSIONS[kind]
    phi = np.radians(phi0 + jitter * rng.standard_normal(n_res))
    psi = np.radians(psi0 + jitter * rng.standard_normal(n_res))
    omega = math.radians(config.OMEGA)

    tpl = default_template()
    n_ca = float(np.linalg.norm(tpl["N"] - tpl["CA"]))
    ca_c = float(np.linalg.norm(tpl["C"] - tpl["CA"]))
    n_ca_c = _angle(tpl["N"], tpl["CA"], tpl["C"])
    ca_c_n = math.radians(config.CA_C_N_ANGLE)
    c_n_ca = math.radians(config.C_N_CA_ANGLE)

    chain = np.zeros((n_res, 3, 3))
    chain[0] = tpl.coords[:3]
    for i in range(1, n_res):
        n_prev, ca_prev, c_prev = chain[i - 1]
        n = place_atom(n_prev, ca_prev, c_prev, config.PEPTIDE_BOND_LENGTH, ca_c_n, psi[i - 1])
        ca = place_atom(ca_prev, c_prev, n, n_ca, c_n_ca, omega)
        c = place_atom(c_prev, n, ca, ca_c, n_ca_c, phi[i])
        chain[i] = (n, ca, c)

    frames = frames_from_backbone(chain)
    structure = atoms_from_frames(frames, tpl, sequence=sequence)
    logger.debug("Built synthetic %s of %d residues, seed %d", kind.value, n_res, rng_seed)
    return BackboneStructure.build(structure.coords, sequence, source=f"synthetic:{kind.value}:{rng_seed}")
