"""Rigid-frame algebra on SE(3).

Rotations are plain 3×3 matrices, rotation vectors are axis·angle
3-vectors. Every function here accepts leading batch dimensions:
a :py:class:`Frame` holds one transform, a :py:class:`FrameSet` holds one
transform per residue, and :py:func:`compose`, :py:func:`invert`,
:py:func:`apply` and :py:func:`to_local` broadcast between them.

Residue frames follow the N/CA/C Gram-Schmidt convention: origin at CA,
x-axis along CA→C, N in the xy-plane with positive y.

Example:

.. code-block:: python

    structure = make_synthetic("helix", 16, rng_seed=1)
    frames = frames_from_backbone(structure)
    rebuilt = atoms_from_frames(frames, like=structure)
    assert np.allclose(rebuilt.coords[:, :3], structure.coords[:, :3])
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from backbone_refine import config
from backbone_refine.structure import BackboneStructure

logger = logging.getLogger(__name__)


class DegenerateResidue(Exception):
    """Residue N, CA and C are collinear or coincident, no frame can be built."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix [v]× of a (..., 3) vector."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :py:func:`hat` for the antisymmetric part of a (..., 3, 3) matrix."""
    m = np.asarray(m, dtype=float)
    return 0.5 * np.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        axis=-1,
    )


def so3_exp(v: np.ndarray) -> np.ndarray:
    """Rotation vector to rotation matrix (Rodrigues).

    Total function: the zero vector maps to the identity, small angles use
    the Taylor expansions of the Rodrigues coefficients.

    :param v: (..., 3) rotation vectors in radians
    :return: (..., 3, 3) rotation matrices
    """
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)[..., None, None]
    small = theta < config.SO3_SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    theta2 = theta**2
    a = np.where(small, 1.0 - theta2 / 6.0 + theta2**2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0 + theta2**2 / 720.0, (1.0 - np.cos(safe)) / safe**2)
    k = hat(v)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to principal-branch rotation vector, |v| ∈ [0, π].

    Three numerical regimes:

    - near identity the first order series of θ / (2 sin θ) avoids 0/0

    - near θ = π the axis is the dominant eigenvector of the symmetric part
      of `r`, signed by the antisymmetric part; at exactly π the sign is
      canonicalised so that the first non-zero axis component is positive

    - everywhere else the closed form

    :param r: (..., 3, 3) rotation matrices
    :return: (..., 3) rotation vectors
    """
    r = np.asarray(r, dtype=float)
    w = 2.0 * vee(r)  # = 2 sin(θ) axis
    sin_theta = 0.5 * np.linalg.norm(w, axis=-1)
    cos_theta = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin_theta, cos_theta)

    small = theta < config.SO3_SMALL_ANGLE
    near_pi = (math.pi - theta) < config.SO3_NEAR_PI
    regular = ~(small | near_pi)

    out = np.zeros(r.shape[:-2] + (3,))
    if np.any(regular):
        scale = theta[regular] / (2.0 * np.sin(theta[regular]))
        out[regular] = scale[..., None] * w[regular]
    if np.any(small):
        t2 = theta[small] ** 2
        out[small] = (0.5 + t2 / 12.0)[..., None] * w[small]
    if np.any(near_pi):
        sym = 0.5 * (r[near_pi] + np.swapaxes(r[near_pi], -1, -2))
        _, vectors = np.linalg.eigh(sym)
        axis = vectors[..., :, -1]
        signed = np.einsum("...i,...i->...", axis, w[near_pi])
        first = np.argmax(np.abs(axis) > 1e-12, axis=-1)
        canonical = np.take_along_axis(axis, first[..., None], axis=-1)[..., 0]
        flip = np.where(np.abs(signed) > 1e-12, np.sign(signed), np.sign(canonical))
        out[near_pi] = (flip * theta[near_pi])[..., None] * axis
    return out


def so3_exp_derivative(v: np.ndarray) -> np.ndarray:
    """Derivative of :py:func:`so3_exp` with respect to each vector component.

    Uses the closed form ∂R/∂vₖ = (vₖ[v]× + [v × (I − R)eₖ]×) R / θ², and the
    third order expansion of the exponential series below the small angle
    threshold.

    :param v: (..., 3) rotation vectors
    :return: (..., 3, 3, 3) array, index ``[..., k, :, :]`` is ∂R/∂vₖ
    """
    v = np.asarray(v, dtype=float)
    basis = hat(np.eye(3))  # (3, 3, 3), basis[k] = [e_k]×
    theta = np.linalg.norm(v, axis=-1)
    k = hat(v)[..., None, :, :]
    out = np.zeros(v.shape[:-1] + (3, 3, 3))

    small = theta < config.SO3_SMALL_ANGLE
    if np.any(small):
        ks = k[small]
        kk = ks @ ks
        out[small] = (
            basis
            + 0.5 * (basis @ ks + ks @ basis)
            + (basis @ kk + ks @ basis @ ks + kk @ basis) / 6.0
        )
    big = ~small
    if np.any(big):
        vb = v[big]
        rot = so3_exp(vb)
        i_minus_r = np.eye(3) - rot  # (M, 3, 3)
        # column k of (I - R) is (I - R) e_k
        cols = np.swapaxes(i_minus_r, -1, -2)  # (M, 3, 3), [m, k, :]
        crossed = np.cross(vb[:, None, :], cols)  # (M, 3, 3)
        term = vb[:, :, None, None] * hat(vb)[:, None, :, :] + hat(crossed)
        out[big] = (term @ rot[:, None, :, :]) / (theta[big] ** 2)[:, None, None, None]
    return out


def rotation_angle(r: np.ndarray) -> np.ndarray:
    """Rotation angle in [0, π] of (..., 3, 3) matrices."""
    return np.linalg.norm(so3_log(r), axis=-1)


def geodesic_flow(gamma: float, r: np.ndarray) -> np.ndarray:
    """Move from the identity towards `r` by fraction `gamma` along the geodesic.

    ``exp(gamma * log(r))``; the end points are returned exactly.

    :param gamma: Flow amount in [0, 1]
    :param r: (..., 3, 3) rotations
    """
    assert 0.0 <= gamma <= 1.0, f"Geodesic flow amount must be in [0, 1], got {gamma}"
    r = np.asarray(r, dtype=float)
    if gamma == 1.0:
        return r.copy()
    if gamma == 0.0:
        return np.broadcast_to(np.eye(3), r.shape).copy()
    return so3_exp(gamma * so3_log(r))


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Project (..., 3, 3) matrices to the nearest rotation (SVD, det = +1)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    fix = np.ones(u.shape[:-1])
    fix[..., -1] = d
    return (u * fix[..., None, :]) @ vt


@dataclass(frozen=True, eq=False)
class Frame:
    """A rigid transform x ↦ rot·x + trans.

    Arrays may carry leading batch dimensions; :py:class:`FrameSet` is the
    one-transform-per-residue case. Arrays are read-only after construction.
    """

    #: (..., 3, 3) rotation
    rot: np.ndarray

    #: (..., 3) translation in Å
    trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot", _readonly(self.rot))
        object.__setattr__(self, "trans", _readonly(self.trans))
        assert self.rot.shape[-2:] == (3, 3), f"Bad rotation shape {self.rot.shape}"
        assert self.trans.shape[-1] == 3, f"Bad translation shape {self.trans.shape}"
        assert np.all(np.isfinite(self.trans)), "Frame translation is not finite"

    @classmethod
    def identity(cls) -> "Frame":
        return Frame(np.eye(3), np.zeros(3))

    def to_homogeneous(self) -> np.ndarray:
        """(..., 4, 4) homogeneous matrix."""
        out = np.zeros(self.rot.shape[:-2] + (4, 4))
        out[..., :3, :3] = self.rot
        out[..., :3, 3] = self.trans
        out[..., 3, 3] = 1.0
        return out


@dataclass(frozen=True, eq=False)
class FrameSet(Frame):
    """Ordered per-residue frames, index order equals residue order.

    ``rot`` is (N_res, 3, 3), ``trans`` is (N_res, 3).
    """

    def __post_init__(self):
        super().__post_init__()
        assert self.rot.ndim == 3 and self.trans.ndim == 2, f"FrameSet needs (N, 3, 3) and (N, 3), got {self.rot.shape} {self.trans.shape}"
        assert len(self.rot) == len(self.trans) >= 1, "FrameSet needs at least one frame"

    def __len__(self) -> int:
        return len(self.trans)

    def __getitem__(self, i: int) -> Frame:
        return Frame(self.rot[i], self.trans[i])

    def __iter__(self) -> Iterator[Frame]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def identity(cls, n: int = 1) -> "FrameSet":
        return FrameSet(np.tile(np.eye(3), (n, 1, 1)), np.zeros((n, 3)))

    @classmethod
    def from_frames(cls, frames: Sequence[Frame]) -> "FrameSet":
        return FrameSet(np.stack([f.rot for f in frames]), np.stack([f.trans for f in frames]))


FrameLike = Union[Frame, FrameSet]


def _wrap(rot: np.ndarray, trans: np.ndarray) -> FrameLike:
    if rot.ndim == 3:
        return FrameSet(rot, trans)
    return Frame(rot, trans)


def compose(a: FrameLike, b: FrameLike) -> FrameLike:
    """Composition a∘b: (a.rot·b.rot, a.rot·b.trans + a.trans)."""
    rot = a.rot @ b.rot
    trans = np.einsum("...ij,...j->...i", a.rot, b.trans) + a.trans
    return _wrap(rot, trans)


def invert(f: FrameLike) -> FrameLike:
    """Inverse transform (rotᵀ, −rotᵀ·trans)."""
    rot_t = np.swapaxes(f.rot, -1, -2)
    return _wrap(rot_t, -np.einsum("...ij,...j->...i", rot_t, f.trans))


def apply(f: FrameLike, x: np.ndarray) -> np.ndarray:
    """Map local coordinates to global: rot·x + trans."""
    return np.einsum("...ij,...j->...i", f.rot, np.asarray(x, dtype=float)) + f.trans


def to_local(f: FrameLike, x: np.ndarray) -> np.ndarray:
    """Express global points in the frame: rotᵀ(x − trans)."""
    return np.einsum("...ji,...j->...i", f.rot, np.asarray(x, dtype=float) - f.trans)


def transform_frames(g: Frame, p: FrameSet) -> FrameSet:
    """Global rigid motion g·𝒫, every frame becomes compose(g, Fᵢ)."""
    return compose(g, p)


@dataclass(frozen=True, eq=False)
class IdealTemplate:
    """Idealised backbone atom positions in the residue's local frame."""

    #: (4, 3) coordinates in :py:data:`backbone_refine.config.BACKBONE_ATOMS` order, CA at origin
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _readonly(self.coords))
        assert self.coords.shape == (4, 3)
        assert np.all(self.coords[1] == 0.0), "Template CA must sit at the origin"

    def __getitem__(self, atom: str) -> np.ndarray:
        return self.coords[config.BACKBONE_ATOMS.index(atom)]

    def as_array(self) -> np.ndarray:
        return self.coords

    @classmethod
    def default(cls) -> "IdealTemplate":
        """Template from the literature geometry in :py:mod:`backbone_refine.config`."""
        c = np.array(config.TEMPLATE_C)
        # O in the frame plane, on the far side from N
        angle = math.radians(180.0 - config.CA_C_O_ANGLE)
        o = c + config.C_O_BOND * np.array([math.cos(angle), -math.sin(angle), 0.0])
        return IdealTemplate(np.array([config.TEMPLATE_N, config.TEMPLATE_CA, config.TEMPLATE_C, o]))


_default_template: Optional[IdealTemplate] = None


def default_template() -> IdealTemplate:
    """Process-wide default :py:class:`IdealTemplate`."""
    global _default_template
    if _default_template is None:
        _default_template = IdealTemplate.default()
    return _default_template


def frames_from_backbone(s: Union[BackboneStructure, np.ndarray]) -> FrameSet:
    """Build per-residue frames from N, CA and C positions.

    Translation is the CA position; rotation columns are the Gram-Schmidt
    orthonormalisation of (C − CA) and (N − CA) completed by their cross
    product.

    :param s: Structure or (N_res, ≥3, 3) coordinate array in N, CA, C order
    :raise DegenerateResidue: If N, CA, C of any residue are (near) collinear or coincident
    """
    coords = s.coords if isinstance(s, BackboneStructure) else np.asarray(s, dtype=float)
    n, ca, c = coords[:, 0], coords[:, 1], coords[:, 2]
    if not np.all(np.isfinite(coords[:, :3])):
        raise DegenerateResidue("Non-finite N/CA/C coordinates")

    u = c - ca
    w = n - ca
    u_len = np.linalg.norm(u, axis=-1)
    w_len = np.linalg.norm(w, axis=-1)
    close = (u_len <= 0.1) | (w_len <= 0.1)
    if np.any(close):
        raise DegenerateResidue(f"Backbone atoms closer than 0.1 Å at residue positions {np.flatnonzero(close).tolist()}")

    e1 = u / u_len[:, None]
    w_unit = w / w_len[:, None]
    sine = np.linalg.norm(np.cross(e1, w_unit), axis=-1)
    bad = sine < 1e-6
    if np.any(bad):
        raise DegenerateResidue(f"Collinear N/CA/C at residue positions {np.flatnonzero(bad).tolist()}")

    v = w - np.sum(w * e1, axis=-1, keepdims=True) * e1
    e2 = v / np.linalg.norm(v, axis=-1, keepdims=True)
    e3 = np.cross(e1, e2)
    rot = np.stack([e1, e2, e3], axis=-1)
    return FrameSet(rot, ca)


def atom_coords_from_frames(p: FrameSet, tpl: Optional[IdealTemplate] = None) -> np.ndarray:
    """(N_res, 4, 3) atom coordinates 𝒪ᵢ·x_lit + tᵢ."""
    tpl = tpl or default_template()
    return np.einsum("nij,aj->nai", p.rot, tpl.coords) + p.trans[:, None, :]


def atoms_from_frames(
    p: FrameSet,
    tpl: Optional[IdealTemplate] = None,
    like: Optional[BackboneStructure] = None,
    sequence: Optional[str] = None,
) -> BackboneStructure:
    """Reconstruct a backbone by placing the ideal template in every frame.

    :param p: Frames
    :param tpl: Template, default :py:func:`default_template`
    :param like: Copy residue numbering, sequence and chain from this structure
    :param sequence: Sequence when no `like` structure is given, default poly-alanine
    """
    coords = atom_coords_from_frames(p, tpl)
    if like is not None:
        assert len(like) == len(p), f"Template structure has {len(like)} residues, frames {len(p)}"
        return like.with_coords(coords)
    return BackboneStructure.build(coords, sequence=sequence or "A" * len(p))
