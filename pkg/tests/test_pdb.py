"""PDB backbone reading and writing."""
import numpy as np
import pytest

from backbone_refine.pdb import EmptyStructure, ParseError, parse_pdb_backbone, read_pdb, save_pdb, write_pdb
from backbone_refine.structure import BackboneStructure
from backbone_refine.synthetic import make_synthetic


def atom_line(serial, name, resname, chain, resseq, x, y, z, altloc=" ", icode=" ", record="ATOM  "):
    return (
        f"{record}{serial:>5} {name:<4}{altloc}{resname:>3} {chain}{resseq:>4}{icode}   "
        f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           {name[0]}"
    )


def residue_lines(start_serial, resname, resseq, offset, chain="A", skip=(), icode=" "):
    lines = []
    atoms = {"N": (-0.572, 1.337, 0.0), "CA": (0.0, 0.0, 0.0), "C": (1.517, 0.0, 0.0), "O": (2.141, -1.061, 0.0)}
    serial = start_serial
    for name, (x, y, z) in atoms.items():
        if name in skip:
            continue
        lines.append(atom_line(serial, name, resname, chain, resseq, x + offset, y, z, icode=icode))
        serial += 1
    return lines


@pytest.fixture
def snippet() -> str:
    """Three residue backbone with a side chain atom and a water."""
    lines = ["HEADER    TEST"]
    lines += residue_lines(1, "ALA", 1, 0.0)
    lines.append(atom_line(5, "CB", "ALA", "A", 1, 0.5, -0.8, 1.2))
    lines += residue_lines(6, "GLY", 2, 3.8)
    lines += residue_lines(10, "SER", 3, 7.6)
    lines.append(atom_line(14, "O", "HOH", "A", 101, 9.0, 9.0, 9.0, record="HETATM"))
    lines.append("END")
    return "\n".join(lines) + "\n"


def test_parse_snippet(snippet):
    """Three complete residues with coordinates copied from the fields."""
    s = parse_pdb_backbone(snippet)
    assert len(s) == 3
    assert s.sequence == "AGS"
    assert s.seq_index.tolist() == [1, 2, 3]
    assert s.chain_id == "A"
    assert s.dropped_count == 0
    assert s.coords[1, 1].tolist() == pytest.approx([3.8, 0.0, 0.0])
    assert s.coords[2, 0].tolist() == pytest.approx([7.028, 1.337, 0.0])


def test_parse_drops_incomplete_residue():
    """Residue without O is dropped and counted."""
    lines = residue_lines(1, "ALA", 1, 0.0) + residue_lines(5, "GLY", 2, 3.8, skip=("O",)) + residue_lines(8, "SER", 3, 7.6)
    s = parse_pdb_backbone("\n".join(lines))
    assert len(s) == 2
    assert s.dropped_count == 1
    assert s.seq_index.tolist() == [1, 3]


def test_parse_bytes(snippet):
    """Byte input is accepted."""
    assert len(parse_pdb_backbone(snippet.encode("ascii"))) == 3


def test_parse_selects_chain():
    """Only the requested chain is read, default the first one."""
    lines = residue_lines(1, "ALA", 1, 0.0, chain="A") + residue_lines(5, "GLY", 1, 10.0, chain="B") + residue_lines(9, "SER", 2, 13.8, chain="B")
    assert len(parse_pdb_backbone("\n".join(lines))) == 1
    b = parse_pdb_backbone("\n".join(lines), chain="B")
    assert len(b) == 2
    assert b.chain_id == "B"
    assert b.sequence == "GS"


def test_parse_altloc():
    """Alternate location A is kept, B is skipped."""
    lines = residue_lines(1, "ALA", 1, 0.0)
    lines.insert(2, atom_line(99, "CA", "ALA", "A", 1, 5.0, 5.0, 5.0, altloc="B"))
    lines[1] = lines[1][:16] + "A" + lines[1][17:]
    s = parse_pdb_backbone("\n".join(lines))
    assert s.coords[0, 1].tolist() == pytest.approx([0.0, 0.0, 0.0])


def test_parse_insertion_codes():
    """Insertion codes order residues after their plain number."""
    lines = residue_lines(1, "ALA", 10, 0.0) + residue_lines(5, "GLY", 10, 3.8, icode="A") + residue_lines(9, "SER", 11, 7.6)
    s = parse_pdb_backbone("\n".join(lines))
    assert s.insertion_codes == ("", "A", "")
    assert s.seq_index.tolist() == [10, 10, 11]


def test_parse_first_model_only():
    """Records after ENDMDL are ignored."""
    lines = ["MODEL        1"] + residue_lines(1, "ALA", 1, 0.0) + ["ENDMDL", "MODEL        2"] + residue_lines(5, "GLY", 2, 3.8)
    assert len(parse_pdb_backbone("\n".join(lines))) == 1


def test_parse_malformed():
    """Garbage in a coordinate column is a parse error."""
    line = atom_line(1, "N", "ALA", "A", 1, 0.0, 0.0, 0.0)
    broken = line[:30] + "   abc  " + line[38:]
    with pytest.raises(ParseError):
        parse_pdb_backbone(broken)


def test_parse_short_line():
    """Truncated ATOM records are a parse error."""
    with pytest.raises(ParseError):
        parse_pdb_backbone(atom_line(1, "N", "ALA", "A", 1, 0.0, 0.0, 0.0)[:40])


def test_parse_decreasing_numbers():
    """Residue numbers must increase."""
    lines = residue_lines(1, "ALA", 5, 0.0) + residue_lines(5, "GLY", 4, 3.8)
    with pytest.raises(ParseError):
        parse_pdb_backbone("\n".join(lines))


def test_parse_empty():
    """No complete residue at all."""
    with pytest.raises(EmptyStructure):
        parse_pdb_backbone("HEADER    NOTHING\nEND\n")
    with pytest.raises(EmptyStructure):
        parse_pdb_backbone("\n".join(residue_lines(1, "ALA", 1, 0.0, skip=("C",))))


def test_write_single_residue():
    """One residue gives four ATOM lines, TER and END."""
    s = make_synthetic("helix", 2, rng_seed=0)
    one = BackboneStructure.build(s.coords[:1], s.sequence[:1])
    lines = write_pdb(one).decode("ascii").splitlines()
    assert [line[:6] for line in lines] == ["ATOM  "] * 4 + ["TER   ", "END"]
    assert lines[0][54:60] == "  1.00"
    assert lines[0][60:66] == "  0.00"


def test_write_parse_roundtrip(tmp_path):
    """Writing and reading back keeps coordinates to 3 decimals."""
    s = make_synthetic("extended", 20, rng_seed=3)
    path = tmp_path / "strand.pdb"
    save_pdb(s, path)
    back = read_pdb(path)
    assert back.sequence == s.sequence
    assert back.source == "strand.pdb"
    assert np.max(np.abs(back.coords - s.coords)) <= 0.0005 + 1e-9
    assert write_pdb(back) == write_pdb(s)
