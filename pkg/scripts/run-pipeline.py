"""Run the whole batch pipeline on synthetic data.

Generates synthetic helices and strands, corrupts them, trains the toy
refiner for a few epochs, refines the held-out decoys and prints the report.
Everything happens in a temporary directory.

.. code-block:: shell

    python scripts/run-pipeline.py

Set ``EPOCHS`` to train longer than the default 5 epochs.
"""
import logging
import os
import sys
import tempfile
from pathlib import Path

from backbone_refine.cli import main

logging.basicConfig(stream=sys.stdout, level=logging.INFO)

epochs = os.environ.get("EPOCHS", "5")

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    steps = [
        ["gen-synthetic", "--kind", "mixed", "--n-res", "24", "--count", "12", "--test-count", "4", "--out-dir", str(root / "data")],
        ["corrupt", "--manifest", str(root / "data" / "manifest.json"), "--timestep", "30", "--out-dir", str(root / "corrupted")],
        ["train", "--manifest", str(root / "data" / "manifest.json"), "--epochs", epochs, "--out", str(root / "model" / "checkpoint.json")],
        [
            "refine",
            "--checkpoint",
            str(root / "model" / "checkpoint.json"),
            "--split",
            "test",
            "--manifest",
            str(root / "corrupted" / "manifest.json"),
            "--out-dir",
            str(root / "refined"),
        ],
        ["eval", "--manifest", str(root / "refined" / "manifest.json")],
    ]
    for argv in steps:
        print(f"backbone-refine {' '.join(argv)}")
        code = main(argv + ["--log-level", "info"])
        if code != 0:
            sys.exit(code)
