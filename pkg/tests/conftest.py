from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from colorrecon.dataset import build_manifest, synth_fixture
from colorrecon.reconstruct import train_from_manifest

DATA = Path(__file__).parent / "data"


def sharma_pairs() -> list[tuple[int, tuple[float, ...], tuple[float, ...], float]]:
    """The 34 supplementary CIEDE2000 test pairs (Sharma, Wu & Dalal 2005)."""
    with open(DATA / "sharma_ciede2000.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        (
            int(r["pair"]),
            (float(r["L1"]), float(r["a1"]), float(r["b1"])),
            (float(r["L2"]), float(r["a2"]), float(r["b2"])),
            float(r["dE00"]),
        )
        for r in rows
    ]


def uniform(color, h: int = 16, w: int = 16) -> np.ndarray:
    return np.broadcast_to(np.asarray(color, dtype=np.uint8), (h, w, 3)).copy()


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """12/6/6 synthetic leaves at 64x64 with a trained model."""
    root = tmp_path_factory.mktemp("fixture")
    synth_fixture(root, seed=3, n_healthy_train=12, n_healthy_test=6, n_diseased_test=6, size=64)
    manifest = build_manifest(root, 12 / 18, "all", seed=3)
    return root, manifest, train_from_manifest(manifest)


FULL_SEED = 0


@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    """The 40/40/40, 128x128 fixture pushed through synth/split/train/score/eval/heatmap.

    Returns the working directory and the wall-clock seconds the pipeline took.
    """
    from colorrecon.cli import main

    work = tmp_path_factory.mktemp("full_run")
    t0 = time.perf_counter()
    run_pipeline(work, main, FULL_SEED)
    return work, time.perf_counter() - t0


def run_pipeline(work, main, seed):
    steps = [
        ["synth", "--out", str(work / "fx"), "--seed", str(seed)],
        ["split", "--root", str(work / "fx"), "--manifest", str(work / "out/manifest.json"),
         "--seed", str(seed)],
        ["train", "--manifest", str(work / "out/manifest.json"), "--model", str(work / "out/model.clkm"),
         "--jobs", "1"],
        ["score", "--manifest", str(work / "out/manifest.json"), "--model", str(work / "out/model.clkm"),
         "--out", str(work / "out/scores.csv"), "--jobs", "1"],
        ["eval", "--scores", str(work / "out/scores.csv"), "--out", str(work / "out/report.json")],
        ["heatmap", "--manifest", str(work / "out/manifest.json"), "--model", str(work / "out/model.clkm"),
         "--out", str(work / "out/heat"), "--composite", "--jobs", "1"],
    ]
    for argv in steps:
        code = main(argv)
        assert code == 0, f"{argv[0]} exited with {code}"
