"""Decoy/reference dataset manifests.

A manifest is a JSON document listing targets:

.. code-block:: json

    {
        "version": 1,
        "entries": [
            {"target_id": "helix-000", "decoy_path": "decoys/helix-000.pdb",
             "reference_path": "refs/helix-000.pdb", "split": "train"}
        ]
    }

Paths are relative to the manifest's directory. A bare list of entries is
accepted too. ``decoy_path`` may be null for reference-only corpora and
``refined_path`` is filled in by the ``refine`` command.
"""
import enum
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Union

from backbone_refine.pdb import read_pdb
from backbone_refine.structure import BackboneStructure, DecoyPair

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1

_ENTRY_KEYS = {"target_id", "decoy_path", "reference_path", "refined_path", "split"}


class ManifestError(Exception):
    """Manifest document is malformed or points to missing files."""


class Split(enum.Enum):
    """Dataset split of a manifest entry."""

    train = "train"
    val = "val"
    test = "test"


@dataclass(frozen=True)
class ManifestEntry:
    """One target. Paths are absolute once loaded."""

    target_id: str
    reference_path: Path
    split: Split = Split.train
    decoy_path: Optional[Path] = None
    refined_path: Optional[Path] = None

    def paths(self) -> List[Path]:
        return [p for p in (self.decoy_path, self.reference_path, self.refined_path) if p is not None]

    def to_dict(self, base: Path) -> dict:
        def rel(p: Optional[Path]) -> Optional[str]:
            return None if p is None else Path(os.path.relpath(p, base)).as_posix()

        return {
            "target_id": self.target_id,
            "decoy_path": rel(self.decoy_path),
            "reference_path": rel(self.reference_path),
            "refined_path": rel(self.refined_path),
            "split": self.split.value,
        }

    @classmethod
    def from_dict(cls, data: dict, base: Path) -> "ManifestEntry":
        unknown = set(data) - _ENTRY_KEYS
        if unknown:
            raise ManifestError(f"Unknown manifest entry keys {sorted(unknown)} in {data.get('target_id')!r}")
        try:
            target_id = data["target_id"]
            reference = data["reference_path"]
        except KeyError as e:
            raise ManifestError(f"Manifest entry is missing {e}: {data}") from e
        try:
            split = Split(data.get("split", "train"))
        except ValueError as e:
            raise ManifestError(f"{target_id}: split must be one of train, val, test, got {data.get('split')!r}") from e

        def resolve(p: Optional[str]) -> Optional[Path]:
            return None if p is None else (base / p).resolve()

        return ManifestEntry(
            target_id=str(target_id),
            reference_path=resolve(reference),
            split=split,
            decoy_path=resolve(data.get("decoy_path")),
            refined_path=resolve(data.get("refined_path")),
        )


@dataclass
class Manifest:
    """Ordered list of targets.

    Example:

    .. code-block:: python

        manifest = load_manifest("data/manifest.json")
        for pair in manifest.pairs(Split.val):
            print(pair.target_id, len(pair.decoy))
    """

    entries: List[ManifestEntry] = field(default_factory=list)

    #: Directory relative paths are resolved against
    base_dir: Path = field(default_factory=Path.cwd)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def select(self, split: Optional[Union[Split, str]] = None) -> List[ManifestEntry]:
        """Entries of one split, all entries when `split` is None."""
        if split is None:
            return list(self.entries)
        split = Split(split)
        return [e for e in self.entries if e.split == split]

    def check_consistency(self):
        """Check ids are unique and no path is used twice.

        :raise ManifestError: Listing every offending entry
        """
        problems = []
        seen_ids = set()
        seen_paths = {}
        for e in self.entries:
            if e.target_id in seen_ids:
                problems.append(f"{e.target_id}: duplicate target_id")
            seen_ids.add(e.target_id)
            for p in e.paths():
                if p in seen_paths:
                    problems.append(f"{e.target_id}: path {p} already used by {seen_paths[p]}")
                else:
                    seen_paths[p] = e.target_id
        if problems:
            raise ManifestError("Invalid manifest: " + "; ".join(problems))

    def validate(self, check_refined: bool = False):
        """Check the manifest against the filesystem.

        :param check_refined: Also require refined structures to exist
        :raise ManifestError: Listing every entry with a missing file
        """
        self.check_consistency()
        missing = []
        for e in self.entries:
            paths = [e.reference_path] + ([e.decoy_path] if e.decoy_path else [])
            if check_refined:
                if e.refined_path is None:
                    missing.append(f"{e.target_id}: no refined_path")
                    continue
                paths.append(e.refined_path)
            for p in paths:
                if not p.exists():
                    missing.append(f"{e.target_id}: {p}")
        if missing:
            raise ManifestError(f"{len(missing)} missing manifest files: " + "; ".join(missing))

    def references(self, split: Optional[Union[Split, str]] = None) -> List[BackboneStructure]:
        """Read the reference structures of a split."""
        return [read_pdb(e.reference_path) for e in self.select(split)]

    def pairs(self, split: Optional[Union[Split, str]] = None) -> Iterator[DecoyPair]:
        """Read decoy/reference pairs of a split.

        Reference-only entries are skipped with a warning.
        """
        for e in self.select(split):
            if e.decoy_path is None:
                logger.warning("%s has no decoy, skipped", e.target_id)
                continue
            yield DecoyPair(read_pdb(e.decoy_path), read_pdb(e.reference_path), e.target_id)

    def to_dict(self, base: Optional[Path] = None) -> dict:
        base = Path(base or self.base_dir).resolve()
        return {"version": MANIFEST_VERSION, "entries": [e.to_dict(base) for e in self.entries]}

    def save(self, path: Union[str, Path]):
        """Write the manifest with paths relative to its own directory."""
        path = Path(path)
        doc = self.to_dict(path.parent)
        path.write_text(json.dumps(doc, indent=2) + "\n")
        logger.info("Wrote manifest %s with %d entries", path, len(self.entries))


def parse_manifest(data: Union[list, dict], base_dir: Path) -> Manifest:
    """Build a manifest from a decoded JSON document.

    :raise ManifestError: On malformed documents or duplicate ids/paths
    """
    if isinstance(data, dict):
        version = data.get("version", MANIFEST_VERSION)
        if version != MANIFEST_VERSION:
            raise ManifestError(f"Unsupported manifest version {version}")
        data = data.get("entries", [])
    if not isinstance(data, list):
        raise ManifestError(f"Manifest must be a list of entries, got {type(data).__name__}")
    base_dir = Path(base_dir).resolve()
    manifest = Manifest([ManifestEntry.from_dict(d, base_dir) for d in data], base_dir)
    manifest.check_consistency()
    return manifest


def load_manifest(path: Union[str, Path], validate: bool = True) -> Manifest:
    """Read a manifest JSON file.

    :param path: Manifest file
    :param validate: Check that every referenced file exists
    :raise ManifestError: Unreadable, malformed or inconsistent manifest
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, ValueError) as e:
        raise ManifestError(f"Cannot read manifest {path}: {e}") from e
    manifest = parse_manifest(data, path.parent)
    if validate:
        manifest.validate()
    logger.info("Loaded manifest %s, %d entries", path, len(manifest))
    return manifest
