"""Command-line front end: synth, split, train, score, eval, heatmap, bench.

Exit codes: 0 success, 1 unexpected failure, 2 invalid configuration or
arguments, 3 missing or unreadable input (manifest, model, images),
4 output cannot be written.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from colorrecon.config import ConfigError, RunConfig, resolve_config
from colorrecon.dataset import (
    DISEASED, DatasetError, Manifest, ManifestEntry, build_manifest, load_image,
    save_png, synth_fixture,
)
from colorrecon.evaluation import LabeledScore, evaluate, report_json
from colorrecon.reconstruct import (
    ChromaLookupModel, ModelError, load_external_pair,
    reconstruct, train_from_manifest,
)
from colorrecon.render import composite, render_heatmap
from colorrecon.scoring import (
    build_reference_histogram, ciede_score, diff_map, hist_score, l2_score,
    read_scores_csv, ssim_score, write_scores_csv,
)

log = logging.getLogger("colorrecon")

EXIT_FAILURE, EXIT_CONFIG, EXIT_INPUT, EXIT_OUTPUT = 1, 2, 3, 4


class StageError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _write_text_atomic(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise StageError(EXIT_OUTPUT, f"cannot write {path}: {exc}") from exc


def _require_manifest(cfg: RunConfig) -> Manifest:
    if not cfg.manifest:
        raise StageError(EXIT_CONFIG, "no manifest given (--manifest)")
    if not Path(cfg.manifest).is_file():
        raise StageError(EXIT_INPUT, f"manifest not found: {cfg.manifest}")
    try:
        return Manifest.load(cfg.manifest)
    except DatasetError as exc:
        raise StageError(EXIT_INPUT, str(exc)) from exc


def _require_model(cfg: RunConfig) -> ChromaLookupModel:
    if not cfg.model:
        raise StageError(EXIT_CONFIG, "no model given (--model)")
    if not Path(cfg.model).is_file():
        raise StageError(EXIT_INPUT, f"model not found: {cfg.model}")
    try:
        return ChromaLookupModel.load(cfg.model)
    except ModelError as exc:
        raise StageError(EXIT_INPUT, str(exc)) from exc


def _load(path: Path) -> np.ndarray:
    try:
        return load_image(path)
    except DatasetError as exc:
        raise StageError(EXIT_INPUT, str(exc)) from exc


def _pool_map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _label(entry: ManifestEntry) -> int:
    return 1 if entry.label == DISEASED else -1


def _external_path(directory: Path, entry: ManifestEntry) -> Path:
    rel = Path(entry.path)
    for suffix in (rel.suffix, ".png", ".jpg", ".jpeg"):
        cand = directory / rel.with_suffix(suffix)
        if cand.is_file():
            return cand
    raise StageError(EXIT_INPUT, f"no external reconstruction for {entry.path} under {directory}")


# -- commands ----------------------------------------------------------------

def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> None:
    try:
        synth_fixture(args.out, cfg.seed, args.n_train, args.n_test, args.n_diseased, args.size)
    except DatasetError as exc:
        raise StageError(EXIT_CONFIG, str(exc)) from exc
    except OSError as exc:
        raise StageError(EXIT_OUTPUT, f"cannot write fixture under {args.out}: {exc}") from exc
    frac = args.n_train / (args.n_train + args.n_test)
    print(f"fixture written to {args.out} (split with --fraction {frac:g})")


def cmd_split(args: argparse.Namespace, cfg: RunConfig) -> None:
    if not cfg.manifest:
        raise StageError(EXIT_CONFIG, "no output manifest path given (--manifest)")
    count = args.diseased_count if args.diseased_count == "all" else int(args.diseased_count)
    try:
        manifest = build_manifest(args.root, args.fraction, count, cfg.seed)
    except DatasetError as exc:
        raise StageError(EXIT_INPUT, str(exc)) from exc
    out = Path(cfg.manifest)
    _write_text_atomic(out, manifest.to_json(out))
    c = manifest.counts
    print(f"train healthy {c['healthy']['train']}, test healthy {c['healthy']['test']}, "
          f"test diseased {c['diseased']['test']} -> {out}")


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> None:
    manifest = _require_manifest(cfg)
    if not cfg.model:
        raise StageError(EXIT_CONFIG, "no output model path given (--model)")
    try:
        model = train_from_manifest(
            manifest, bins=cfg.bin_config, gray_mode=cfg.gray,
            background_threshold=cfg.mask_background, jobs=cfg.jobs,
        )
    except DatasetError as exc:
        raise StageError(EXIT_INPUT, str(exc)) from exc
    try:
        model.save(cfg.model)
    except OSError as exc:
        raise StageError(EXIT_OUTPUT, f"cannot write model {cfg.model}: {exc}") from exc
    print(f"model with {len(model.populated)} populated bins -> {cfg.model}")


def cmd_score(args: argparse.Namespace, cfg: RunConfig) -> None:
    manifest = _require_manifest(cfg)
    needs_recon = any(m != "hist" for m in cfg.methods)
    external = Path(args.external_dir) if args.external_dir else None
    model = _require_model(cfg) if needs_recon and external is None else None
    ref = None
    if "hist" in cfg.methods:
        ref = build_reference_histogram(_load(manifest.resolve(e)) for e in manifest.split("train"))
    dump_dir = Path(args.diffmap_dir) if args.diffmap_dir else None

    def score_one(entry: ManifestEntry) -> list[tuple[str, int, str, float]]:
        path = manifest.resolve(entry)
        label = _label(entry)
        rows = []
        if needs_recon:
            if external is not None:
                try:
                    pair = load_external_pair(path, _external_path(external, entry))
                except (DatasetError, ValueError) as exc:
                    raise StageError(EXIT_INPUT, str(exc)) from exc
            else:
                pair = reconstruct(model, _load(path), cfg.gray)
            original = pair.original
        else:
            original = _load(path)
        if "ciede2000" in cfg.methods:
            dmap = diff_map(pair, cfg.k)
            rows.append((entry.path, label, "ciede2000", ciede_score(dmap, normalize=cfg.normalize).value))
            if dump_dir is not None:
                target = dump_dir / Path(entry.path).with_suffix(".npy")
                try:
                    target.parent.mkdir(parents=True, exist_ok=True)
                    tmp = target.with_name(f".{target.stem}.tmp.npy")
                    np.save(tmp, dmap)
                    os.replace(tmp, target)
                except OSError as exc:
                    raise StageError(EXIT_OUTPUT, f"cannot write {target}: {exc}") from exc
        if "hist" in cfg.methods:
            rows.append((entry.path, label, "hist", hist_score(original, ref).value))
        if "l2" in cfg.methods:
            rows.append((entry.path, label, "l2", l2_score(pair).value))
        if "ssim" in cfg.methods:
            try:
                rows.append((entry.path, label, "ssim", ssim_score(pair).value))
            except ValueError as exc:
                raise StageError(EXIT_INPUT, f"{entry.path}: {exc}") from exc
        return rows

    results = _pool_map(score_one, manifest.split("test"), cfg.jobs)
    rows = [r for rs in results for r in rs]
    _write_text_atomic(Path(args.out), write_scores_csv(rows))
    print(f"{len(rows)} scores -> {args.out}")


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> None:
    try:
        rows = read_scores_csv(Path(args.scores).read_text(encoding="utf-8"))
    except OSError as exc:
        raise StageError(EXIT_INPUT, f"cannot read scores {args.scores}: {exc}") from exc
    except ValueError as exc:
        raise StageError(EXIT_INPUT, f"{args.scores}: {exc}") from exc
    by_method: dict[str, list[LabeledScore]] = defaultdict(list)
    for image_id, label, method, score in rows:
        by_method[method].append(LabeledScore(image_id, score, label))
    report = {}
    for method in sorted(by_method):
        try:
            report[method] = evaluate(by_method[method], args.top_k, args.bins, args.threshold)
        except ValueError as exc:
            raise StageError(EXIT_INPUT, f"{method}: {exc}") from exc
        r = report[method]
        print(f"{method:10s} AUC {r['auc']:.4f}  top-{r['top_k']['k']} "
              f"P {r['top_k']['precision']:.3f} R {r['top_k']['recall']:.3f} F1 {r['top_k']['f1']:.3f}")
    _write_text_atomic(Path(args.out), report_json(report))


def cmd_heatmap(args: argparse.Namespace, cfg: RunConfig) -> None:
    manifest = _require_manifest(cfg)
    model = _require_model(cfg)
    spec = cfg.colormap
    out = Path(args.out)

    def render_one(entry: ManifestEntry) -> None:
        pair = reconstruct(model, _load(manifest.resolve(entry)), cfg.gray)
        heat = render_heatmap(diff_map(pair, cfg.k), spec)
        img = composite(pair.original, pair.reconstructed, heat) if args.composite else heat
        target = out / Path(entry.path).with_suffix(".png")
        try:
            save_png(target, img)
        except OSError as exc:
            raise StageError(EXIT_OUTPUT, f"cannot write {target}: {exc}") from exc

    entries = manifest.split("test")
    _pool_map(render_one, entries, cfg.jobs)
    print(f"{len(entries)} heat maps -> {out}")


def bench_images(model: ChromaLookupModel, images: Sequence[np.ndarray], cfg: RunConfig) -> np.ndarray:
    """Seconds spent on reconstruction + diff map + score for each image."""
    times = np.empty(len(images))
    for i, img in enumerate(images):
        t0 = time.perf_counter()
        dmap = diff_map(reconstruct(model, img, cfg.gray), cfg.k)
        ciede_score(dmap, normalize=cfg.normalize)
        times[i] = time.perf_counter() - t0
    return times


def linear_cost_check(times: np.ndarray) -> dict[str, float]:
    """Fit cumulative time against image count; slope ~ per-image mean if cost is flat."""
    counts = np.arange(1, len(times) + 1)
    slope, intercept = np.polyfit(counts, np.cumsum(times), 1)
    mean = float(times.mean())
    return {
        "slope_ms": float(slope) * 1e3,
        "intercept_ms": float(intercept) * 1e3,
        "mean_ms": mean * 1e3,
        "relative_deviation": abs(float(slope) - mean) / mean,
    }


def cmd_bench(args: argparse.Namespace, cfg: RunConfig) -> None:
    manifest = _require_manifest(cfg)
    model = _require_model(cfg)
    groups: dict[str, list[np.ndarray]] = {"healthy": [], "diseased": []}
    for e in manifest.split("test"):
        if args.limit is None or len(groups[e.label]) < args.limit:
            groups[e.label].append(_load(manifest.resolve(e)))
    all_images = groups["healthy"] + groups["diseased"]
    if not all_images:
        raise StageError(EXIT_INPUT, "manifest has no test images to benchmark")
    model.fallback  # build the lookup table outside the timed region
    bench_images(model, all_images[:1], cfg)  # warm-up

    result: dict[str, object] = {}
    all_times = []
    for label, images in groups.items():
        times = bench_images(model, images, cfg)
        all_times.append(times)
        if len(times):
            std = float(times.std(ddof=1)) * 1e3 if len(times) > 1 else 0.0
            result[label] = {"n": len(times), "mean_ms": float(times.mean()) * 1e3,
                             "std_ms": std, "samples_ms": (times * 1e3).tolist()}
            print(f"{label:9s} {times.mean() * 1e3:8.2f} ± {std:.2f} ms  (n={len(times)})")
    times = np.concatenate(all_times)
    if len(times) >= 2:
        result["linearity"] = linear_cost_check(times)
        lin = result["linearity"]
        print(f"cumulative-time slope {lin['slope_ms']:.2f} ms/image vs mean {lin['mean_ms']:.2f} ms "
              f"(deviation {lin['relative_deviation']:.1%})")
    if args.out:
        _write_text_atomic(Path(args.out), json.dumps(result, indent=2) + "\n")


COMMANDS = {
    "synth": cmd_synth, "split": cmd_split, "train": cmd_train, "score": cmd_score,
    "eval": cmd_eval, "heatmap": cmd_heatmap, "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with a [run] section")
    common.add_argument("--manifest")
    common.add_argument("--model")
    common.add_argument("--gray", choices=("luma601", "lab_l"))
    common.add_argument("--normalize", choices=("sum", "mean"))
    common.add_argument("--mask-background", dest="mask_background", metavar="THRESHOLD|off")
    common.add_argument("--methods", help="comma-separated subset of ciede2000,hist,l2,ssim")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--colormap-range", dest="colormap_range", metavar="LO:HI|auto")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="colorrecon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic leaf fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=40)
    p.add_argument("--n-test", type=int, default=40)
    p.add_argument("--n-diseased", type=int, default=40)
    p.add_argument("--size", type=int, default=128)

    p = sub.add_parser("split", parents=[common], help="build a train/test manifest")
    p.add_argument("--root", required=True, help="directory holding healthy/ and diseased/")
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--diseased-count", default="all")

    sub.add_parser("train", parents=[common], help="fit the colorizer on the train split")

    p = sub.add_parser("score", parents=[common], help="score the test split")
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--external-dir", help="take reconstructions from this directory instead of the model")
    p.add_argument("--diffmap-dir", help="also dump each CIEDE2000 map as .npy")

    p = sub.add_parser("eval", parents=[common], help="evaluate a score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True, help="JSON report")
    p.add_argument("--top-k", type=int, help="default: number of anomalous images")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("heatmap", parents=[common], help="render CIEDE2000 heat maps")
    p.add_argument("--out", required=True)
    p.add_argument("--composite", action="store_true",
                   help="original | reconstruction | heatmap in one PNG")

    p = sub.add_parser("bench", parents=[common], help="time per-image anomaly scoring")
    p.add_argument("--limit", type=int, help="at most this many images per class")
    p.add_argument("--out", help="JSON with raw timings")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    stage = args.command
    try:
        try:
            cfg = resolve_config(args.config, vars(args))
        except ConfigError as exc:
            raise StageError(EXIT_CONFIG, f"invalid configuration: {exc}") from exc
        COMMANDS[stage](args, cfg)
    except StageError as exc:
        print(f"colorrecon {stage}: error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        log.debug("unhandled", exc_info=True)
        print(f"colorrecon {stage}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
