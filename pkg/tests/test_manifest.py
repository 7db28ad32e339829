"""Decoy pairs and dataset manifests."""
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backbone_refine import config
from backbone_refine.manifest import Manifest, ManifestError, Split, load_manifest, parse_manifest
from backbone_refine.pdb import save_pdb
from backbone_refine.structure import DecoyPair, PairMismatch
from backbone_refine.synthetic import make_synthetic


@pytest.fixture
def dataset(tmp_path):
    """Three targets on disk, two with decoys."""
    refs = tmp_path / "refs"
    decoys = tmp_path / "decoys"
    refs.mkdir()
    decoys.mkdir()
    entries = []
    for i, split in enumerate(["train", "val", "test"]):
        s = make_synthetic("helix", 8, rng_seed=i)
        save_pdb(s, refs / f"t{i}.pdb")
        entry = {"target_id": f"t{i}", "reference_path": f"refs/t{i}.pdb", "split": split}
        if i < 2:
            save_pdb(make_synthetic("helix", 8, rng_seed=i, jitter=5.0), decoys / f"t{i}.pdb")
            entry["decoy_path"] = f"decoys/t{i}.pdb"
        entries.append(entry)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"version": 1, "entries": entries}))
    return path


def test_load_resolves_paths(dataset):
    """Every path resolves relative to the manifest directory."""
    m = load_manifest(dataset)
    assert len(m) == 3
    assert all(e.reference_path.is_absolute() and e.reference_path.exists() for e in m)
    assert [e.split for e in m] == [Split.train, Split.val, Split.test]
    assert m.entries[2].decoy_path is None


def test_pairs_and_references(dataset):
    """Decoy pairs skip reference-only entries."""
    m = load_manifest(dataset)
    pairs = list(m.pairs())
    assert [p.target_id for p in pairs] == ["t0", "t1"]
    assert len(m.references(Split.test)) == 1
    assert [e.target_id for e in m.select("val")] == ["t1"]


def test_empty_manifest(tmp_path):
    """An empty list is a valid empty manifest."""
    path = tmp_path / "manifest.json"
    path.write_text("[]")
    assert len(load_manifest(path)) == 0


def test_duplicate_target_id(tmp_path):
    """Duplicate ids are rejected."""
    data = [
        {"target_id": "a", "reference_path": "x.pdb"},
        {"target_id": "a", "reference_path": "y.pdb"},
    ]
    with pytest.raises(ManifestError):
        parse_manifest(data, tmp_path)


def test_reused_path(tmp_path):
    """Two entries may not point at the same file."""
    data = [
        {"target_id": "a", "reference_path": "x.pdb"},
        {"target_id": "b", "reference_path": "x.pdb"},
    ]
    with pytest.raises(ManifestError):
        parse_manifest(data, tmp_path)


def test_bad_split_and_keys(tmp_path):
    """Unknown splits and keys are rejected."""
    with pytest.raises(ManifestError):
        parse_manifest([{"target_id": "a", "reference_path": "x.pdb", "split": "holdout"}], tmp_path)
    with pytest.raises(ManifestError):
        parse_manifest([{"target_id": "a", "reference_path": "x.pdb", "colour": "red"}], tmp_path)


def test_missing_files_listed(dataset, tmp_path):
    """Validation names every entry with a missing file."""
    (tmp_path / "refs" / "t0.pdb").unlink()
    (tmp_path / "decoys" / "t1.pdb").unlink()
    with pytest.raises(ManifestError) as e:
        load_manifest(dataset)
    assert "t0" in str(e.value) and "t1" in str(e.value)


def test_unreadable_manifest(tmp_path):
    """Broken JSON is a manifest error."""
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_save_roundtrip(dataset, tmp_path):
    """Saving elsewhere rewrites paths relative to the new location."""
    m = load_manifest(dataset)
    out = tmp_path / "copy" / "manifest.json"
    out.parent.mkdir()
    m.save(out)
    doc = json.loads(out.read_text())
    assert doc["entries"][0]["reference_path"] == "../refs/t0.pdb"
    again = load_manifest(out)
    assert [e.reference_path for e in again] == [e.reference_path for e in m]
    assert isinstance(again, Manifest)


def test_decoy_pair_length_mismatch():
    """Pairs need the same residue count."""
    with pytest.raises(PairMismatch):
        DecoyPair(make_synthetic("helix", 8, rng_seed=0), make_synthetic("helix", 9, rng_seed=0))


@given(st.integers(0, 11), st.sampled_from(list(config.AMINO_ACIDS)))
@settings(max_examples=50, deadline=None)
def test_decoy_pair_rejects_mutation(position, letter):
    """Any point mutation of the sequence breaks the pair."""
    ref = make_synthetic("helix", 12, rng_seed=4)
    if ref.sequence[position] == letter:
        return
    sequence = ref.sequence[:position] + letter + ref.sequence[position + 1 :]
    decoy = type(ref).build(ref.coords, sequence)
    with pytest.raises(PairMismatch):
        DecoyPair(decoy, ref, "mutant")


def test_decoy_pair_from_files(dataset, tmp_path):
    """Pairs load straight from PDB files."""
    pair = DecoyPair.from_files(str(tmp_path / "decoys" / "t0.pdb"), str(tmp_path / "refs" / "t0.pdb"), "t0")
    assert len(pair.decoy) == len(pair.reference) == 8
