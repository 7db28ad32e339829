"""Protein backbone structures and decoy/reference pairs."""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from backbone_refine import config


class PairMismatch(Exception):
    """Decoy and reference do not describe the same residues."""


@dataclass(frozen=True, eq=False)
class BackboneStructure:
    """A single-chain protein backbone.

    Coordinates are an (N_res, 4, 3) array in
    :py:data:`backbone_refine.config.BACKBONE_ATOMS` order (N, CA, C, O),
    in Å. The array is read-only after construction.
    """

    #: (N_res, 4, 3) backbone atom coordinates
    coords: np.ndarray

    #: One-letter amino acid codes, X for unknown
    sequence: str

    #: PDB residue numbers
    seq_index: np.ndarray

    #: PDB insertion codes, blank string when none
    insertion_codes: Tuple[str, ...]

    chain_id: str = "A"

    #: Where this structure came from: a file name, "synthetic:helix", ...
    source: str = ""

    #: Residues dropped by the reader because a backbone atom was missing
    dropped_count: int = 0

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        seq_index = np.array(self.seq_index, dtype=int)
        seq_index.setflags(write=False)
        object.__setattr__(self, "seq_index", seq_index)
        object.__setattr__(self, "insertion_codes", tuple(self.insertion_codes))

        n = len(coords)
        assert n >= 1, "A structure needs at least one residue"
        assert coords.shape == (n, 4, 3), f"Expected (N, 4, 3) coordinates, got {coords.shape}"
        assert np.all(np.isfinite(coords)), "Coordinates must be finite"
        assert len(self.sequence) == n, f"Sequence length {len(self.sequence)} does not match {n} residues"
        assert all(aa in config.AMINO_ACIDS for aa in self.sequence), f"Unknown residue letters in {self.sequence}"
        assert len(seq_index) == n and len(self.insertion_codes) == n
        keys = list(zip(seq_index.tolist(), self.insertion_codes))
        assert all(a < b for a, b in zip(keys, keys[1:])), "Residue numbering must be strictly increasing"

    def __len__(self) -> int:
        return len(self.coords)

    @classmethod
    def build(
        cls,
        coords: np.ndarray,
        sequence: str,
        seq_index: Optional[Sequence[int]] = None,
        chain_id: str = "A",
        source: str = "",
    ) -> "BackboneStructure":
        """Create a structure numbered 1..N without insertion codes."""
        n = len(coords)
        if seq_index is None:
            seq_index = np.arange(1, n + 1)
        return BackboneStructure(coords, sequence, seq_index, ("",) * n, chain_id, source)

    def ca(self) -> np.ndarray:
        """(N_res, 3) CA coordinates."""
        return self.coords[:, 1]

    def with_coords(self, coords: np.ndarray) -> "BackboneStructure":
        """Same residues, new coordinates."""
        return BackboneStructure(
            coords,
            self.sequence,
            self.seq_index,
            self.insertion_codes,
            self.chain_id,
            self.source,
            self.dropped_count,
        )

    def transformed(self, g) -> "BackboneStructure":
        """Apply a global rigid transform with ``rot`` and ``trans`` attributes."""
        return self.with_coords(self.coords @ np.asarray(g.rot).T + np.asarray(g.trans))


@dataclass(frozen=True, eq=False)
class DecoyPair:
    """A decoy to be refined and its experimental reference."""

    decoy: BackboneStructure
    reference: BackboneStructure
    target_id: str = field(default="")

    def __post_init__(self):
        if len(self.decoy) != len(self.reference):
            raise PairMismatch(f"{self.target_id}: decoy has {len(self.decoy)} residues, reference {len(self.reference)}")
        if self.decoy.sequence != self.reference.sequence:
            raise PairMismatch(f"{self.target_id}: decoy and reference sequences differ")

    @classmethod
    def from_files(cls, decoy: str, reference: str, target_id: str = "") -> "DecoyPair":
        """Read both structures from PDB files."""
        from backbone_refine.pdb import read_pdb

        return DecoyPair(read_pdb(decoy), read_pdb(reference), target_id)
