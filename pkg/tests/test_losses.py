"""Training objectives and their gradients."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backbone_refine.diffusion.forward import NoiseRecord
from backbone_refine.geometry import Frame, FrameSet, atom_coords_from_frames, frames_from_backbone, so3_exp, transform_frames
from backbone_refine.losses import (
    BondSpec,
    LengthMismatch,
    LossWeights,
    bond_loss,
    bond_loss_grad,
    combine,
    fape_local_mse,
    fape_local_mse_grad,
    score_matching_loss,
    score_matching_loss_grad,
)
from backbone_refine.synthetic import make_synthetic
from backbone_refine.utils import make_rng


@pytest.fixture
def helix():
    """12 residue helix with its frames."""
    s = make_synthetic("helix", 12, rng_seed=2)
    return frames_from_backbone(s), s


def random_frames(rng, n) -> FrameSet:
    return FrameSet(so3_exp(rng.normal(size=(n, 3))), rng.normal(scale=5.0, size=(n, 3)))


def test_fape_identical_is_zero(helix):
    """A structure compared with itself has no error."""
    p, s = helix
    assert fape_local_mse(p, s, p, s) == 0.0


def test_fape_two_residue_hand_case():
    """Shifting residue 2 by 1 Å gives 8 unit pairs out of 16."""
    truth = FrameSet(np.tile(np.eye(3), (2, 1, 1)), np.array([[0.0, 0.0, 0.0], [3.8, 0.0, 0.0]]))
    pred = FrameSet(truth.rot, np.array([[0.0, 0.0, 0.0], [4.8, 0.0, 0.0]]))
    loss = fape_local_mse(pred, atom_coords_from_frames(pred), truth, atom_coords_from_frames(truth))
    assert loss == pytest.approx(0.5, abs=1e-12)
    own = fape_local_mse(pred, atom_coords_from_frames(pred), truth, atom_coords_from_frames(truth), own_residue_only=True)
    assert own == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_fape_rigid_invariance(seed):
    """Global rigid motions of the prediction leave the error unchanged."""
    rng = make_rng(seed)
    s = make_synthetic("helix", 10, rng_seed=seed % 1000)
    truth = frames_from_backbone(s)
    pred = FrameSet(truth.rot @ so3_exp(rng.normal(scale=0.2, size=(10, 3))), truth.trans + rng.normal(size=(10, 3)))
    pred_atoms = atom_coords_from_frames(pred)
    base = fape_local_mse(pred, pred_atoms, truth, s)
    g = Frame(so3_exp(rng.uniform(-1.8, 1.8, size=3)), rng.uniform(-100, 100, size=3))
    moved = transform_frames(g, pred)
    moved_atoms = pred_atoms @ g.rot.T + g.trans
    assert fape_local_mse(moved, moved_atoms, truth, s) == pytest.approx(base, abs=1e-9)
    assert fape_local_mse(truth, s, pred, pred_atoms) == pytest.approx(base, abs=1e-9)
    assert base > 0


def test_fape_clamp(helix):
    """Clamping caps each pair term."""
    p, s = helix
    far = FrameSet(p.rot, p.trans + np.arange(12)[:, None] * np.array([5.0, 0.0, 0.0]))
    atoms = atom_coords_from_frames(far)
    assert fape_local_mse(far, atoms, p, s, clamp=1.0) <= 1.0
    assert fape_local_mse(far, atoms, p, s, clamp=1.0) < fape_local_mse(far, atoms, p, s)


def test_fape_length_mismatch(helix):
    """Different residue counts are rejected."""
    p, s = helix
    short = FrameSet(p.rot[:5], p.trans[:5])
    with pytest.raises(LengthMismatch):
        fape_local_mse(short, s.coords[:5], p, s)


@pytest.mark.parametrize("own_residue_only", [False, True])
def test_fape_gradient_matches_finite_differences(own_residue_only):
    """Analytic FAPE gradient against central differences."""
    rng = make_rng(11)
    truth = random_frames(rng, 8)
    truth_atoms = atom_coords_from_frames(truth)
    rot = np.array(truth.rot @ so3_exp(rng.normal(scale=0.3, size=(8, 3))))
    trans = truth.trans + rng.normal(size=(8, 3))
    atoms = atom_coords_from_frames(FrameSet(rot, trans)) + rng.normal(scale=0.3, size=(8, 4, 3))

    def loss(rot, trans, atoms):
        return fape_local_mse(FrameSet(rot, trans), atoms, truth, truth_atoms, own_residue_only=own_residue_only)

    args = {"rot": rot, "trans": trans, "atoms": atoms}
    g = fape_local_mse_grad(FrameSet(rot, trans), atoms, truth, truth_atoms, own_residue_only=own_residue_only)
    h = 1e-4
    for name, analytic in [("rot", g.rot), ("trans", g.trans), ("atoms", g.atoms)]:
        x = args[name]
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            plus = x.copy()
            minus = x.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric[idx] = (loss(**{**args, name: plus}) - loss(**{**args, name: minus})) / (2 * h)
        err = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
        assert err < 1e-4, name


def test_bond_loss_ideal_helix():
    """Built helices have ideal peptide bonds."""
    assert bond_loss(make_synthetic("helix", 20, rng_seed=0)) == 0.0


def test_bond_loss_hand_case():
    """One bond 0.5 Å too long with r = 0.1 costs 0.4."""
    spec = BondSpec()
    coords = np.zeros((2, 4, 3))
    coords[0, 2] = [0.0, 0.0, 0.0]
    coords[1, 0] = [spec.l_lit + 0.5, 0.0, 0.0]
    assert bond_loss(coords, BondSpec(r=0.1)) == pytest.approx(0.4)


def test_bond_loss_loop_oracle():
    """Vectorised hinge equals a plain loop over the seven bonds."""
    coords = make_rng(12).normal(scale=2.0, size=(8, 4, 3))
    spec = BondSpec()
    total = 0.0
    for i in range(7):
        length = np.linalg.norm(coords[i + 1, 0] - coords[i, 2])
        total += max(abs(length - spec.l_lit) - spec.r, 0.0)
    assert bond_loss(coords, spec) == pytest.approx(total / 7, abs=1e-12)


def test_bond_loss_rigid_invariance():
    """Bond lengths do not see global motions."""
    rng = make_rng(13)
    coords = rng.normal(scale=2.0, size=(8, 4, 3))
    rot = so3_exp(rng.normal(size=3))
    moved = coords @ rot.T + np.array([50.0, -20.0, 3.0])
    assert bond_loss(moved) == pytest.approx(bond_loss(coords), abs=1e-12)


def test_bond_loss_gradient_matches_finite_differences():
    """Analytic bond gradient against central differences."""
    coords = make_rng(14).normal(scale=2.0, size=(8, 4, 3))
    analytic = bond_loss_grad(coords)
    numeric = np.zeros_like(coords)
    h = 1e-4
    for idx in np.ndindex(coords.shape):
        plus = coords.copy()
        minus = coords.copy()
        plus[idx] += h
        minus[idx] -= h
        numeric[idx] = (bond_loss(plus) - bond_loss(minus)) / (2 * h)
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-4


def test_score_matching():
    """Perfect prediction is free, a zero prediction costs the mean squared noise."""
    eps = make_rng(15).standard_normal((6, 3))
    assert score_matching_loss(eps, eps) == 0.0
    expected = sum(float(np.dot(e, e)) for e in eps) / 6
    assert score_matching_loss(np.zeros((6, 3)), eps) == pytest.approx(expected)
    assert score_matching_loss(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]])) == 1.0


def test_score_matching_accepts_record():
    """A noise record stands in for its translation noise."""
    eps = make_rng(16).standard_normal((4, 3))
    record = NoiseRecord(eps=eps, rot_noise=np.tile(np.eye(3), (4, 1, 1)), timestep=3, center=np.zeros(3))
    assert score_matching_loss(np.zeros((4, 3)), record) == pytest.approx(score_matching_loss(np.zeros((4, 3)), eps))
    with pytest.raises(LengthMismatch):
        score_matching_loss(np.zeros((3, 3)), record)


def test_score_matching_gradient():
    """Gradient is 2(ε̂ − ε)/N."""
    rng = make_rng(17)
    eps = rng.standard_normal((5, 3))
    pred = rng.standard_normal((5, 3))
    h = 1e-6
    plus = pred.copy()
    plus[2, 1] += h
    numeric = (score_matching_loss(plus, eps) - score_matching_loss(pred, eps)) / h
    assert score_matching_loss_grad(pred, eps)[2, 1] == pytest.approx(numeric, rel=1e-4)


def test_combine():
    """Weighted totals."""
    assert combine(2.0, 4.0, 8.0, LossWeights(1.0, 0.0, 0.0)).total == 2.0
    assert combine(0.0, 0.0, 0.0).total == 0.0
    assert combine(2.0, 4.0, 8.0, LossWeights(0.5, 0.25, 0.25)).total == pytest.approx(4.0, abs=1e-12)


def test_loss_weights_validated():
    """Negative or all-zero weights are refused."""
    with pytest.raises(AssertionError):
        LossWeights(-1.0, 0.0, 0.0)
    with pytest.raises(AssertionError):
        LossWeights(0.0, 0.0, 0.0)
