"""Per-residue MLP refiner with analytic gradients.

The network maps each residue's pooled invariant features
(:py:mod:`backbone_refine.model.features`) through two SiLU hidden layers
to six outputs, squashed by scaled tanh heads:

- rotation vector, each component within ±π/(2√3) so |rotvec| ≤ π/2
- local translation, each component within ±10/√3 Å so |t_local| ≤ 10 Å

The update is ΔOᵢ = exp(rotvec) and Δtᵢ = Oᵢ·t_local: invariant outputs
transported by the residue's own frame, so the refiner is equivariant by
construction.

Gradients are written out by hand: :py:func:`backward` takes the loss
gradient with respect to a :py:class:`~backbone_refine.refinement.FrameUpdate`
and returns parameter gradients, the input features are constants.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy.special import expit
from scipy.stats import truncnorm

from backbone_refine import config
from backbone_refine.geometry import FrameSet, so3_exp, so3_exp_derivative
from backbone_refine.model.features import POOLED_DIMS, ResidueFeatures, featurize
from backbone_refine.refinement import FrameUpdate, RefineContext

logger = logging.getLogger(__name__)

#: Per-component bound of the rotation vector head
ROTVEC_SCALE = config.MAX_ROTVEC_NORM / math.sqrt(3)

#: Per-component bound of the local translation head
TRANSLATION_SCALE = config.MAX_LOCAL_TRANSLATION / math.sqrt(3)

#: (name, input width, output width) of each dense layer
LAYERS = (
    ("layer1", POOLED_DIMS, config.HIDDEN_WIDTH),
    ("layer2", config.HIDDEN_WIDTH, config.HIDDEN_WIDTH),
    ("head", config.HIDDEN_WIDTH, 6),
)


def parameter_shapes() -> Dict[str, Tuple[int, ...]]:
    """Name to shape of every parameter array."""
    shapes = {}
    for name, n_in, n_out in LAYERS:
        shapes[f"{name}.weight"] = (n_in, n_out)
        shapes[f"{name}.bias"] = (n_out,)
    return shapes


@dataclass
class ToyRefinerParams:
    """Named parameter arrays of the network."""

    arrays: Dict[str, np.ndarray]

    def __post_init__(self):
        shapes = parameter_shapes()
        assert set(self.arrays) == set(shapes), f"Expected parameters {sorted(shapes)}, got {sorted(self.arrays)}"
        for name, shape in shapes.items():
            assert self.arrays[name].shape == shape, f"{name}: expected {shape}, got {self.arrays[name].shape}"

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "ToyRefinerParams":
        return ToyRefinerParams({k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())

    @classmethod
    def zeros(cls) -> "ToyRefinerParams":
        return ToyRefinerParams({k: np.zeros(s) for k, s in parameter_shapes().items()})

    @classmethod
    def init(cls, rng: np.random.Generator) -> "ToyRefinerParams":
        """LeCun fan-in truncated normal weights, zero biases.

        Samples are drawn within ±2 standard deviations and rescaled so the
        truncated distribution has variance 1/fan_in.
        """
        arrays = {}
        a, b = -2.0, 2.0
        for name, n_in, n_out in LAYERS:
            std = math.sqrt(1.0 / max(1, n_in)) / truncnorm.std(a=a, b=b, loc=0, scale=1)
            arrays[f"{name}.weight"] = truncnorm.rvs(a=a, b=b, loc=0, scale=std, size=(n_in, n_out), random_state=rng)
            arrays[f"{name}.bias"] = np.zeros(n_out)
        return ToyRefinerParams(arrays)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Intermediate values of one forward pass, consumed by :py:func:`backward`."""

    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    out: np.ndarray
    rotvec: np.ndarray
    t_local: np.ndarray

    #: (N, 3, 3) frame rotations the local translations were transported by
    rot: np.ndarray


def silu(z: np.ndarray) -> np.ndarray:
    return z * expit(z)


def silu_grad(z: np.ndarray) -> np.ndarray:
    s = expit(z)
    return s + z * s * (1.0 - s)


def forward_with_cache(params: ToyRefinerParams, feats: ResidueFeatures, p: FrameSet) -> Tuple[FrameUpdate, ForwardCache]:
    """Forward pass keeping what the backward pass needs."""
    assert len(feats) == len(p), f"Features for {len(feats)} residues, frames {len(p)}"
    x = feats.pooled()
    z1 = x @ params["layer1.weight"] + params["layer1.bias"]
    h1 = silu(z1)
    z2 = h1 @ params["layer2.weight"] + params["layer2.bias"]
    h2 = silu(z2)
    out = h2 @ params["head.weight"] + params["head.bias"]
    rotvec = ROTVEC_SCALE * np.tanh(out[:, :3])
    t_local = TRANSLATION_SCALE * np.tanh(out[:, 3:])
    update = FrameUpdate(so3_exp(rotvec), np.einsum("nij,nj->ni", p.rot, t_local))
    cache = ForwardCache(x, z1, h1, z2, h2, out, rotvec, t_local, np.array(p.rot))
    return update, cache


def forward(params: ToyRefinerParams, feats: ResidueFeatures, p: FrameSet) -> FrameUpdate:
    """Per-residue update ΔOᵢ = exp(rotvecᵢ), Δtᵢ = Oᵢ·t_localᵢ.

    Zero parameters give the identity update.
    """
    update, _ = forward_with_cache(params, feats, p)
    return update


def backward_from_cache(
    params: ToyRefinerParams,
    cache: ForwardCache,
    grad_rot: np.ndarray,
    grad_trans: np.ndarray,
    frozen: Iterable[str] = (),
) -> Dict[str, np.ndarray]:
    """Parameter gradients given ∂L/∂ΔO (N, 3, 3) and ∂L/∂Δt (N, 3).

    :param frozen: Layer names (``layer1``, ``layer2``, ``head``) whose gradients are zeroed
    """
    d_rotvec = np.einsum("nkij,nij->nk", so3_exp_derivative(cache.rotvec), grad_rot)
    d_t_local = np.einsum("nji,nj->ni", cache.rot, grad_trans)

    d_out = np.empty_like(cache.out)
    d_out[:, :3] = d_rotvec * ROTVEC_SCALE * (1.0 - np.tanh(cache.out[:, :3]) ** 2)
    d_out[:, 3:] = d_t_local * TRANSLATION_SCALE * (1.0 - np.tanh(cache.out[:, 3:]) ** 2)

    grads = {
        "head.weight": cache.h2.T @ d_out,
        "head.bias": d_out.sum(axis=0),
    }
    d_z2 = (d_out @ params["head.weight"].T) * silu_grad(cache.z2)
    grads["layer2.weight"] = cache.h1.T @ d_z2
    grads["layer2.bias"] = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ params["layer2.weight"].T) * silu_grad(cache.z1)
    grads["layer1.weight"] = cache.x.T @ d_z1
    grads["layer1.bias"] = d_z1.sum(axis=0)

    for layer in frozen:
        grads[f"{layer}.weight"] = np.zeros_like(grads[f"{layer}.weight"])
        grads[f"{layer}.bias"] = np.zeros_like(grads[f"{layer}.bias"])
    return grads


def backward(
    params: ToyRefinerParams,
    feats: ResidueFeatures,
    p: FrameSet,
    grad_rot: np.ndarray,
    grad_trans: np.ndarray,
    frozen: Iterable[str] = (),
) -> Dict[str, np.ndarray]:
    """Parameter gradients of a loss through :py:func:`forward`.

    Re-runs the forward pass on the same inputs.

    :param grad_rot: (N, 3, 3) ∂L/∂ΔOᵢ
    :param grad_trans: (N, 3) ∂L/∂Δtᵢ
    :param frozen: Layers to keep fixed, their gradient is exactly zero
    """
    _, cache = forward_with_cache(params, feats, p)
    return backward_from_cache(params, cache, grad_rot, grad_trans, frozen)


@dataclass(frozen=True)
class ModelRefiner:
    """:py:class:`~backbone_refine.refinement.Refiner` backed by trained parameters.

    Features are rebuilt from the current frames on every call.
    """

    params: ToyRefinerParams
    k: int = config.DEFAULT_K_NEIGHBOURS

    def propose(self, frames: FrameSet, context: RefineContext) -> FrameUpdate:
        feats = featurize(frames, context.sequence, context.timestep, self.k)
        return forward(self.params, feats, frames)


def zero_grads(shapes: Optional[Dict[str, Tuple[int, ...]]] = None) -> Dict[str, np.ndarray]:
    return {k: np.zeros(s) for k, s in (shapes or parameter_shapes()).items()}
