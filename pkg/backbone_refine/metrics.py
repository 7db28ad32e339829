"""Structure quality metrics.

- :py:func:`kabsch`: optimal superposition and RMSD over a residue subset

- :py:func:`gdt`: GDT-TS and GDT-HA with a window-seeded iterative superposition search

- :py:func:`lddt`: superposition-free local distance difference test over all backbone atoms

- :py:func:`report` and :py:func:`delta`: per-pair scores and refined-minus-starting deltas

All scores are percentages in [0, 100].
"""
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from backbone_refine import config
from backbone_refine.geometry import Frame, apply, atom_coords_from_frames, frames_from_backbone
from backbone_refine.losses import fape_local_mse
from backbone_refine.structure import BackboneStructure, DecoyPair

logger = logging.getLogger(__name__)


class DegenerateSubset(Exception):
    """Superposition subset is collinear or coincident."""


class TooShort(Exception):
    """Structure has too few residues for the metric."""


@dataclass(frozen=True)
class MetricReport:
    """Quality of a structure against its reference."""

    lddt: float
    gdt_ts: float
    gdt_ha: float

    #: CA RMSD after optimal superposition, Å
    rmsd: float

    #: Frame aligned point error on template atoms, Å
    fape: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DeltaReport:
    """Refined minus starting scores, signed percentage points."""

    delta_gdt_ts: float
    delta_gdt_ha: float
    delta_lddt: float

    def to_dict(self) -> dict:
        return asdict(self)


def kabsch(
    pred: np.ndarray,
    ref: np.ndarray,
    subset: Optional[Sequence[int]] = None,
) -> Tuple[Frame, float]:
    """Least-squares rigid superposition of `pred` onto `ref`.

    SVD of the covariance with the reflection correction, so the rotation
    always has det = +1.

    :param pred: (N, 3) points to move
    :param ref: (N, 3) target points
    :param subset: Indices to fit and measure on, default all, at least 3
    :return: Transform taking `pred` onto `ref` and the RMSD over the subset
    :raise DegenerateSubset: If the subset points are collinear or coincident
    """
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    assert pred.shape == ref.shape, f"Point sets differ in shape: {pred.shape} vs {ref.shape}"
    idx = np.arange(len(pred)) if subset is None else np.asarray(subset, dtype=int)
    assert len(idx) >= 3, f"Superposition needs at least 3 points, got {len(idx)}"
    p = pred[idx]
    q = ref[idx]
    p_mean = p.mean(axis=0)
    q_mean = q.mean(axis=0)
    pc = p - p_mean
    qc = q - q_mean

    for points in (pc, qc):
        sv = np.linalg.svd(points, compute_uv=False)
        if sv[1] < config.KABSCH_DEGENERATE:
            raise DegenerateSubset(f"Superposition subset of {len(idx)} points is collinear or coincident")

    u, _, vt = np.linalg.svd(pc.T @ qc)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    frame = Frame(rot, q_mean - rot @ p_mean)
    rmsd = float(np.sqrt(np.mean(np.sum((apply(frame, p) - q) ** 2, axis=-1))))
    return frame, rmsd


def _seed_windows(n: int) -> Sequence[np.ndarray]:
    seeds = []
    for length in config.GDT_SEED_WINDOWS:
        if length < n:
            seeds.extend(np.arange(start, start + length) for start in range(n - length + 1))
    seeds.append(np.arange(n))
    return seeds


def gdt_fractions(pred: np.ndarray, ref: np.ndarray) -> Dict[float, float]:
    """Best achieved fraction of CA atoms within each GDT threshold.

    Every contiguous window of 4, 8 and 16 residues and the full chain
    seeds a superposition. For each seed and threshold d, the structure is
    repeatedly superposed on the residues within d of the reference (the 3
    closest when fewer qualify) until the inlier set stops changing or 10
    iterations pass. Every superposition tried updates the best fraction of
    every threshold, so the reported fractions are always achieved ones.

    :param pred: (N, 3) CA coordinates
    :param ref: (N, 3) reference CA coordinates
    """
    thresholds = sorted(set(config.GDT_TS_THRESHOLDS) | set(config.GDT_HA_THRESHOLDS))
    limits = np.array(thresholds)
    n = len(pred)
    best = np.zeros(len(thresholds))
    superpositions = 0

    for seed in _seed_windows(n):
        for d in thresholds:
            subset = seed
            for _ in range(config.GDT_MAX_ITERATIONS):
                try:
                    frame, _ = kabsch(pred, ref, subset)
                except DegenerateSubset:
                    break
                superpositions += 1
                dist = np.linalg.norm(apply(frame, pred) - ref, axis=-1)
                best = np.maximum(best, (dist[:, None] <= limits[None, :]).sum(axis=0) / n)
                inliers = np.flatnonzero(dist <= d)
                if len(inliers) < 3:
                    inliers = np.sort(np.argsort(dist, kind="stable")[:3])
                if len(inliers) == len(subset) and np.array_equal(inliers, subset):
                    break
                subset = inliers

    logger.debug("GDT search over %d residues tried %d superpositions", n, superpositions)
    return dict(zip(thresholds, best.tolist()))


def gdt(pred: BackboneStructure, ref: BackboneStructure) -> Tuple[float, float]:
    """GDT-TS and GDT-HA of the CA trace.

    :return: (gdt_ts, gdt_ha), 100 × mean best fraction over {1, 2, 4, 8} Å and {0.5, 1, 2, 4} Å
    :raise TooShort: Below 4 residues
    """
    assert len(pred) == len(ref), f"Residue counts differ: {len(pred)} vs {len(ref)}"
    if len(pred) < 4:
        raise TooShort(f"GDT needs at least 4 residues, got {len(pred)}")
    fractions = gdt_fractions(pred.ca(), ref.ca())
    ts = 100.0 * float(np.mean([fractions[d] for d in config.GDT_TS_THRESHOLDS]))
    ha = 100.0 * float(np.mean([fractions[d] for d in config.GDT_HA_THRESHOLDS]))
    return ts, ha


def lddt(pred: BackboneStructure, ref: BackboneStructure) -> float:
    """Local distance difference test over N, CA, C and O.

    Scores every pair of atoms from different residues whose reference
    distance is below 15 Å; a pair is preserved at threshold t when its
    distance changed by less than t. The result is 100 × the mean over
    t ∈ {0.5, 1, 2, 4} Å of the fraction of preserved pairs. No
    stereochemistry checks. A structure whose atoms are all further apart
    than the inclusion radius scores 100.

    :raise TooShort: Below 2 residues
    """
    assert len(pred) == len(ref), f"Residue counts differ: {len(pred)} vs {len(ref)}"
    if len(pred) < 2:
        raise TooShort(f"lDDT needs at least 2 residues, got {len(pred)}")
    p = pred.coords.reshape(-1, 3)
    r = ref.coords.reshape(-1, 3)
    owner = np.repeat(np.arange(len(pred)), pred.coords.shape[1])

    d_ref = np.linalg.norm(r[:, None, :] - r[None, :, :], axis=-1)
    d_pred = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    upper = np.triu(np.ones_like(d_ref, dtype=bool), k=1)
    included = upper & (owner[:, None] != owner[None, :]) & (d_ref < config.LDDT_INCLUSION_RADIUS)
    if not included.any():
        logger.debug("lDDT: no atom pairs within the inclusion radius")
        return 100.0
    diff = np.abs(d_pred[included] - d_ref[included])
    scores = [np.mean(diff < t) for t in config.LDDT_THRESHOLDS]
    return 100.0 * float(np.mean(scores))


def frame_fape(pred: BackboneStructure, ref: BackboneStructure) -> float:
    """FAPE between the residue frames of two structures, both rebuilt from the ideal template."""
    pred_frames = frames_from_backbone(pred)
    ref_frames = frames_from_backbone(ref)
    return fape_local_mse(
        pred_frames,
        atom_coords_from_frames(pred_frames),
        ref_frames,
        atom_coords_from_frames(ref_frames),
    )


def score(pred: BackboneStructure, ref: BackboneStructure) -> MetricReport:
    """All metrics of `pred` against `ref`."""
    _, rmsd = kabsch(pred.ca(), ref.ca())
    ts, ha = gdt(pred, ref)
    return MetricReport(
        lddt=lddt(pred, ref),
        gdt_ts=ts,
        gdt_ha=ha,
        rmsd=rmsd,
        fape=frame_fape(pred, ref),
    )


def report(pair: DecoyPair) -> MetricReport:
    """Metrics of the pair's decoy against its reference."""
    return score(pair.decoy, pair.reference)


def delta(start: MetricReport, refined: MetricReport) -> DeltaReport:
    """Component-wise refined − starting."""
    return DeltaReport(
        delta_gdt_ts=refined.gdt_ts - start.gdt_ts,
        delta_gdt_ha=refined.gdt_ha - start.gdt_ha,
        delta_lddt=refined.lddt - start.lddt,
    )
