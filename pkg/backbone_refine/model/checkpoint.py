"""Parameter checkpoints.

A checkpoint is one JSON document with a shape manifest and the flat
parameter arrays. Python floats survive the JSON round trip bit-exactly.

.. code-block:: json

    {"format": "backbone-refine-checkpoint", "version": 1,
     "shapes": {"layer1.weight": [289, 64], "...": []},
     "params": {"layer1.weight": [0.01, "..."]},
     "meta": {"epochs": 20, "seed": 1}}
"""
import json
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from backbone_refine.model.network import ToyRefinerParams, parameter_shapes

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "backbone-refine-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Checkpoint is unreadable or does not match the network."""


def checkpoint_to_dict(params: ToyRefinerParams, meta: Optional[dict] = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "shapes": {k: list(v.shape) for k, v in params.arrays.items()},
        "params": {k: v.reshape(-1).tolist() for k, v in params.arrays.items()},
        "meta": meta or {},
    }


def checkpoint_from_dict(data: dict) -> Tuple[ToyRefinerParams, dict]:
    """:raise CheckpointError: On format, version or shape mismatch"""
    if data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"Not a checkpoint: format {data.get('format')!r}")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {data.get('version')}")
    expected = parameter_shapes()
    shapes = {k: tuple(v) for k, v in data.get("shapes", {}).items()}
    if shapes != expected:
        raise CheckpointError(f"Checkpoint shapes {shapes} do not match the network {expected}")
    try:
        arrays = {k: np.array(data["params"][k], dtype=float).reshape(s) for k, s in expected.items()}
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"Bad parameter arrays: {e}") from e
    return ToyRefinerParams(arrays), data.get("meta", {})


def save_checkpoint(params: ToyRefinerParams, path: Union[str, Path], meta: Optional[dict] = None):
    Path(path).write_text(json.dumps(checkpoint_to_dict(params, meta)) + "\n")
    logger.info("Saved %d parameters to %s", params.n_params(), path)


def load_checkpoint(path: Union[str, Path]) -> Tuple[ToyRefinerParams, dict]:
    """Read parameters and metadata.

    :raise CheckpointError: If the file is unreadable or does not match the network
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    return checkpoint_from_dict(data)
