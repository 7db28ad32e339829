"""Backbone-only PDB reading and writing.

Only the subset of the format this package needs is supported:
``ATOM`` records of the four backbone heavy atoms, ``TER`` and ``END``.
Hetero atoms, waters, side chains and every model after the first are
ignored.

Example:

.. code-block:: python

    structure = read_pdb("decoy.pdb", chain="A")
    print(f"{len(structure)} residues, {structure.dropped_count} incomplete residues dropped")
    save_pdb(structure, "backbone-only.pdb")
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from backbone_refine import config
from backbone_refine.structure import BackboneStructure

logger = logging.getLogger(__name__)

_ONE_TO_THREE = {one: three for three, one in config.THREE_TO_ONE.items()}

#: Coordinates must fit the fixed-width %8.3f columns
_MAX_COORDINATE = 9999.999


class ParseError(Exception):
    """Malformed ATOM record."""


class EmptyStructure(Exception):
    """No residue with a complete N/CA/C/O backbone was found."""


def _parse_atom_line(line: str, line_no: int) -> Tuple[str, str, str, str, int, str, np.ndarray]:
    if len(line) < 54:
        raise ParseError(f"Line {line_no}: ATOM record too short ({len(line)} columns)")
    try:
        name = line[12:16].strip()
        altloc = line[16]
        resname = line[17:20].strip()
        chain = line[21]
        resseq = int(line[22:26])
        icode = line[26].strip()
        xyz = np.array([float(line[30:38]), float(line[38:46]), float(line[46:54])])
    except ValueError as e:
        raise ParseError(f"Line {line_no}: cannot parse ATOM record: {line.rstrip()}") from e
    if not np.all(np.isfinite(xyz)):
        raise ParseError(f"Line {line_no}: non-finite coordinates")
    return name, altloc, resname, chain, resseq, icode, xyz


def parse_pdb_backbone(text: Union[bytes, str], chain: Optional[str] = None, source: str = "") -> BackboneStructure:
    """Read the backbone of one chain from PDB text.

    - Only ``ATOM`` records of N, CA, C and O are read
    - Alternate locations other than blank or ``A`` are skipped
    - Without `chain`, the first chain seen in an ATOM record is used
    - Residues missing any of the four atoms are dropped and counted in
      :py:attr:`BackboneStructure.dropped_count`

    :param text: PDB file content
    :param chain: Chain identifier to read
    :param source: Recorded as the structure's source
    :raise ParseError: On a malformed ATOM record
    :raise EmptyStructure: If no complete residue remains
    """
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")

    residues: Dict[Tuple[int, str], Dict[str, np.ndarray]] = {}
    names: Dict[Tuple[int, str], str] = {}
    order: List[Tuple[int, str]] = []
    selected = chain
    skipped_altlocs = 0

    for line_no, line in enumerate(text.splitlines(), start=1):
        if line.startswith("ENDMDL"):
            break
        if not line.startswith("ATOM  "):
            continue
        name, altloc, resname, chain_id, resseq, icode, xyz = _parse_atom_line(line, line_no)
        if selected is None:
            selected = chain_id
        if chain_id != selected:
            continue
        if name not in config.BACKBONE_ATOMS:
            continue
        if altloc not in (" ", "A"):
            skipped_altlocs += 1
            continue
        key = (resseq, icode)
        if key not in residues:
            residues[key] = {}
            names[key] = resname
            order.append(key)
        residues[key].setdefault(name, xyz)

    if skipped_altlocs:
        logger.debug("%s: skipped %d alternate location records", source, skipped_altlocs)

    complete = [k for k in order if len(residues[k]) == len(config.BACKBONE_ATOMS)]
    dropped = len(order) - len(complete)
    if dropped:
        logger.warning("%s: dropped %d residues with missing backbone atoms", source or "<pdb>", dropped)
    if not complete:
        raise EmptyStructure(f"{source or '<pdb>'}: no residue with a complete backbone in chain {selected!r}")

    if any(a >= b for a, b in zip(complete, complete[1:])):
        raise ParseError(f"{source or '<pdb>'}: residue numbering is not increasing in chain {selected!r}")

    coords = np.array([[residues[k][a] for a in config.BACKBONE_ATOMS] for k in complete])
    sequence = "".join(config.THREE_TO_ONE.get(names[k], "X") for k in complete)
    return BackboneStructure(
        coords=coords,
        sequence=sequence,
        seq_index=[k[0] for k in complete],
        insertion_codes=[k[1] for k in complete],
        chain_id=selected,
        source=source,
        dropped_count=dropped,
    )


def write_pdb(s: BackboneStructure) -> bytes:
    """Serialise a backbone as fixed-width ATOM records plus TER and END.

    Coordinates are written with 3 decimals, occupancy 1.00 and B-factor 0.00.
    """
    assert np.all(np.abs(s.coords) <= _MAX_COORDINATE), "Coordinates do not fit PDB columns"
    lines = []
    serial = 0
    chain = s.chain_id[:1] or "A"
    for i in range(len(s)):
        resname = _ONE_TO_THREE.get(s.sequence[i], "UNK")
        resseq = int(s.seq_index[i])
        icode = s.insertion_codes[i] or " "
        for a, atom in enumerate(config.BACKBONE_ATOMS):
            serial += 1
            x, y, z = s.coords[i, a]
            lines.append(
                f"ATOM  {serial:>5} {' ' + atom:<4} {resname:>3} {chain}{resseq:>4}{icode}   "
                f"{x:8.3f}{y:8.3f}{z:8.3f}{1.0:6.2f}{0.0:6.2f}          {atom[0]:>2}"
            )
    last = len(s) - 1
    lines.append(
        f"TER   {serial + 1:>5}      {_ONE_TO_THREE.get(s.sequence[last], 'UNK'):>3} {chain}{int(s.seq_index[last]):>4}{s.insertion_codes[last] or ' '}"
    )
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("ascii")


def read_pdb(path: Union[str, Path], chain: Optional[str] = None) -> BackboneStructure:
    """Read a backbone from a PDB file, see :py:func:`parse_pdb_backbone`."""
    path = Path(path)
    return parse_pdb_backbone(path.read_bytes(), chain=chain, source=path.name)


def save_pdb(s: BackboneStructure, path: Union[str, Path]):
    """Write a backbone to a PDB file, see :py:func:`write_pdb`."""
    Path(path).write_bytes(write_pdb(s))
    logger.debug("Wrote %d residues to %s", len(s), path)
