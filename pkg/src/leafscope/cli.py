"""``leafscope`` command line: segment, destem, extract, train, predict,
evaluate, ablate, report-seg and synth.

Data goes to files and stdout; diagnostics go to stderr. Every command exits
0 on success and 1 on failure (2 for usage errors).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

import numpy as np
from PIL import Image

from leafscope import config as configmod
from leafscope import corpus, features, learn, raster, segmentation

log = logging.getLogger("leafscope")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class CommandError(Exception):
    pass


# ---------------------------------------------------------------------------
# shared pipeline pieces


def leaf_features(img: np.ndarray, cfg: configmod.RunConfig) -> tuple[np.ndarray, segmentation.Segmentation]:
    """Segment, remove the stem and compute the 56 hand-crafted features of one image."""
    seg = segmentation.segment_leaf(img, cfg.segmentation)
    mask = segmentation.remove_stem(seg.mask, cfg.segmentation.opening_kernel)
    if not mask.any():
        raise features.FeatureError("mask", f"segmentation left no leaf ({seg.report.verdict.value})")
    gray = raster.to_grayscale(seg.resized)
    return features.extract_hcf(mask, gray, cfg.features), seg


def _record_image(manifest_path: str, record: corpus.SampleRecord) -> np.ndarray:
    img = raster.load_image(corpus.resolve_image(manifest_path, record))
    return raster.rotate_quarter(img, record.rotation // 90)


def _extract_job(args) -> tuple[str, np.ndarray | None, str | None]:
    manifest_path, record, cfg = args
    try:
        vec, _ = leaf_features(_record_image(manifest_path, record), cfg)
        return record.key, vec, None
    except (raster.ImageError, features.FeatureError, ValueError) as exc:
        return record.key, None, f"{record.image_path}: {exc}"


def _segment_job(args) -> tuple[str, str, str | None]:
    manifest_path, record, cfg = args
    try:
        seg = segmentation.segment_leaf(_record_image(manifest_path, record), cfg.segmentation)
        return record.key, seg.report.verdict.value, None
    except (raster.ImageError, ValueError) as exc:
        return record.key, "error", f"{record.image_path}: {exc}"


def _run_jobs(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=4))


def _save_mask(mask: np.ndarray, path: str) -> None:
    tmp = path + ".tmp"
    Image.fromarray(np.asarray(mask, dtype=bool)).save(tmp, format="PNG")
    os.replace(tmp, path)


def _save_rgb(img: np.ndarray, path: str) -> None:
    tmp = path + ".tmp"
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(tmp, format="PNG")
    os.replace(tmp, path)


def load_mask(path: str) -> np.ndarray:
    """Read a mask PNG: 1-bit, or 8-bit gray holding only 0 and 255."""
    if not os.path.exists(path):
        raise CommandError(f"{path}: file not found")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "1":
                return np.asarray(im, dtype=bool).copy()
            arr = np.asarray(im.convert("L") if im.mode in ("L", "P", "LA") else im)
    except OSError as exc:
        raise CommandError(f"{path}: cannot decode mask ({exc})") from exc
    if arr.ndim != 2 or not np.isin(arr, (0, 255)).all():
        raise CommandError(f"{path}: not a binary mask (expected 1-bit or 0/255 gray)")
    return arr == 255


def _list_images(inputs: Sequence[str]) -> list[str]:
    out = []
    for p in inputs:
        if os.path.isdir(p):
            out.extend(
                os.path.join(p, n) for n in sorted(os.listdir(p)) if n.lower().endswith(IMAGE_SUFFIXES)
            )
        else:
            out.append(p)
    return out


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _training_matrix(store: corpus.FeatureStore, records: list[corpus.SampleRecord]):
    try:
        x = store.matrix(r.key for r in records)
    except KeyError as exc:
        raise CommandError(f"feature file does not cover the manifest: {exc.args[0]}") from exc
    return x, [r.label for r in records]


def _select(x: np.ndarray, groups: str | None) -> np.ndarray:
    if not groups:
        return x
    if x.shape[1] != features.HCF_DIM:
        raise CommandError(f"--groups needs {features.HCF_DIM}-dim hand-crafted features, got {x.shape[1]}")
    return features.group_subset(x, groups)


def train_on(store, manifest, cfg, groups=None, history=None) -> learn.LinearModel:
    train = manifest.split("train")
    if not train:
        raise CommandError("manifest has no training records")
    x, y = _training_matrix(store, train)
    if len(set(y)) < 2:
        raise CommandError(f"training split has a single class: {y[0]!r}")
    return learn.train_ovr_svm(_select(x, groups), y, cfg.train, history=history)


def evaluate_on(model, store, manifest, groups=None) -> learn.Metrics:
    test = manifest.split("test")
    if not test:
        raise CommandError("manifest has an empty test split")
    x, y = _training_matrix(store, test)
    return learn.evaluate(model, _select(x, groups), y)


def format_metrics(m: learn.Metrics, method: str) -> str:
    n = int(m.confusion.sum())
    lines = [
        "method\ttop-1\ttop-5\tsamples",
        f"{method}\t{100 * m.top1:.2f}%\t{100 * m.top5:.2f}%\t{n}",
        "",
        "class\taccuracy\tcount",
    ]
    for i, label in enumerate(m.labels):
        count = int(m.confusion[i].sum())
        if count:
            acc = m.per_class_accuracy().get(label, 0.0)
            lines.append(f"{label}\t{100 * acc:.2f}%\t{count}")
    return "\n".join(lines) + "\n"


def confusion_tsv(m: learn.Metrics) -> str:
    predicted = m.labels[: m.confusion.shape[1]]
    lines = ["true\\predicted\t" + "\t".join(predicted)]
    for label, row in zip(m.labels, m.confusion):
        lines.append(label + "\t" + "\t".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def segmentation_table(verdicts: list[tuple[str, bool]]) -> str:
    """Per-species ``errors/total`` rows plus the overall accuracy line."""
    per: dict[str, list[int]] = {}
    for species, ok in verdicts:
        e = per.setdefault(species, [0, 0])
        e[0] += 0 if ok else 1
        e[1] += 1
    errors = sum(e for e, _ in per.values())
    total = sum(t for _, t in per.values())
    width = max([len("Species"), len("Total")] + [len(s) for s in per])
    lines = [f"{'Species':<{width}}\tError Rate"]
    for species, (e, t) in sorted(per.items(), key=lambda kv: (kv[1][1], kv[0])):
        lines.append(f"{species:<{width}}\t{e}/{t}")
    lines.append(f"{'Total':<{width}}\t{errors}/{total}")
    acc = 100.0 * (total - errors) / total if total else 0.0
    lines.append(f"Overall accuracy: {acc:.1f}%")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_segment(args, cfg) -> int:
    paths = _list_images(args.inputs)
    if not paths:
        raise CommandError("no input images")
    all_ok = True
    for path in paths:
        try:
            img = raster.load_image(path)
        except raster.ImageError as exc:
            print(f"error: {exc}", file=sys.stderr)
            all_ok = False
            continue
        seg = segmentation.segment_leaf(img, cfg.segmentation)
        out_dir = args.out_dir or os.path.dirname(os.path.abspath(path))
        os.makedirs(out_dir, exist_ok=True)
        name = _stem(path)
        _save_mask(seg.mask, os.path.join(out_dir, f"{name}.mask.png"))
        _save_rgb(seg.masked, os.path.join(out_dir, f"{name}.seg.png"))
        r = seg.report
        print(f"{path}\t{r.verdict.value}\tleaf={r.leaf_area_fraction:.4f}\tborder={r.border_leaf_fraction:.4f}")
        all_ok &= r.verdict is segmentation.Verdict.OK
    return 0 if all_ok else 1


def cmd_destem(args, cfg) -> int:
    mask = load_mask(args.mask)
    if not mask.any():
        print(f"warning: {args.mask}: mask is empty", file=sys.stderr)
    out = segmentation.remove_stem(mask, cfg.segmentation.opening_kernel)
    target = args.output or os.path.join(os.path.dirname(os.path.abspath(args.mask)), f"{_stem(args.mask)}.destem.png")
    _save_mask(out, target)
    print(target)
    return 0


def cmd_extract(args, cfg) -> int:
    manifest = corpus.load_manifest(args.manifest)
    deep = corpus.load_features(args.deep_features) if args.deep_features else None
    jobs = [(args.manifest, r, cfg) for r in manifest.records]
    results = _run_jobs(_extract_job, jobs, args.jobs)
    failures = [err for _, _, err in results if err]
    for err in failures:
        print(f"error: {err}", file=sys.stderr)
    if failures:
        return 1
    dim = features.HCF_DIM + (deep.dim if deep else 0)
    store = corpus.FeatureStore(dim)
    for record, (key, vec, _) in zip(manifest.records, results):
        if deep is not None:
            ref = record.deep_feature_id
            if ref is None or ref not in deep:
                raise CommandError(f"{record.image_path}: no deep feature row {ref!r}")
            vec = learn.fuse(deep[ref], vec)
        store.add(key, vec)
    corpus.save_features(store, args.output)
    log.info("wrote %d rows of dim %d to %s", len(store), dim, args.output)
    return 0


def cmd_train(args, cfg) -> int:
    store = corpus.load_features(args.features)
    manifest = corpus.load_manifest(args.manifest)
    history: list = []
    model = train_on(store, manifest, cfg, args.groups, history)
    learn.save_model(model, args.output)
    lines = ["epoch\tmean_loss\tlearning_rate"]
    lines += [f"{e}\t{loss:.9g}\t{lr:.3g}" for e, loss, lr in history]
    text = "\n".join(lines) + "\n"
    if args.log:
        corpus.atomic_write_text(args.log, text)
    for e, loss, lr in history:
        log.info("epoch %d loss %.6g lr %.3g", e, loss, lr)
    print(f"model: {len(model.class_labels)} classes, dim {model.feature_dim} -> {args.output}")
    return 0


def cmd_predict(args, cfg) -> int:
    model = learn.load_model(args.model)
    if args.image:
        vec, seg = leaf_features(raster.load_image(args.image), cfg)
        if args.deep_features:
            deep = corpus.load_features(args.deep_features)
            if args.deep_id not in deep:
                raise CommandError(f"--deep-id {args.deep_id!r} not in {args.deep_features}")
            vec = learn.fuse(deep[args.deep_id], vec)
    else:
        store = corpus.load_features(args.features)
        if args.id not in store:
            raise CommandError(f"feature id {args.id!r} not in {args.features}")
        vec = store[args.id]
    vec = _select(vec[None, :], args.groups)[0]
    if vec.shape[0] != model.feature_dim:
        raise CommandError(f"dimension mismatch: input has {vec.shape[0]} features, model expects {model.feature_dim}")
    for label, score in learn.predict_topk(model, vec, args.k).ranked:
        print(f"{label}\t{score:.6f}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    model = learn.load_model(args.model)
    store = corpus.load_features(args.features)
    manifest = corpus.load_manifest(args.manifest)
    metrics = evaluate_on(model, store, manifest, args.groups)
    sys.stdout.write(format_metrics(metrics, args.method))
    if args.confusion:
        corpus.atomic_write_text(args.confusion, confusion_tsv(metrics))
    return 0


def ablation_rows(store, manifest, cfg) -> list[tuple[str, int, learn.Metrics]]:
    if store.dim != features.HCF_DIM:
        raise CommandError(f"ablation needs {features.HCF_DIM}-dim hand-crafted features, got dim {store.dim}")
    rows = []
    for combo in cfg.ablation_groups:
        groups = "".join(features.parse_groups(combo))
        model = train_on(store, manifest, cfg, groups)
        metrics = evaluate_on(model, store, manifest, groups)
        rows.append((groups, int(features.group_indices(groups).size), metrics))
    return rows


def cmd_ablate(args, cfg) -> int:
    store = corpus.load_features(args.features)
    manifest = corpus.load_manifest(args.manifest)
    rows = ablation_rows(store, manifest, cfg)
    lines = ["groups\tdim\ttop-1\ttop-5"]
    lines += [f"{'+'.join(g)}\t{d}\t{m.top1:.6f}\t{m.top5:.6f}" for g, d, m in rows]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.output:
        corpus.atomic_write_text(args.output, text)
    return 0


def cmd_report_seg(args, cfg) -> int:
    manifest = corpus.load_manifest(args.manifest)
    jobs = [(args.manifest, r, cfg) for r in manifest.records]
    results = _run_jobs(_segment_job, jobs, args.jobs)
    verdicts = []
    for record, (_, verdict, err) in zip(manifest.records, results):
        if err:
            print(f"error: {err}", file=sys.stderr)
        verdicts.append((record.label, verdict == segmentation.Verdict.OK.value))
    sys.stdout.write(segmentation_table(verdicts))
    return 0


def synth_corpus(
    specs: Sequence[corpus.LeafSpec], count: int, out_dir: str, seed: int, size: int = 256
) -> corpus.Manifest:
    """Render ``count`` images per class, their masks, a tiers file and a split manifest."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"{out_dir}: cannot create output directory ({exc})") from exc
    if not os.access(out_dir, os.W_OK):
        raise CommandError(f"{out_dir}: output directory is not writable")
    records = []
    for ci, spec in enumerate(specs):
        os.makedirs(os.path.join(out_dir, "images", spec.name), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "masks", spec.name), exist_ok=True)
        for i in range(count):
            image_seed = int(np.random.SeedSequence([seed, ci, i]).generate_state(1)[0])
            img, gt = corpus.synth_leaf(spec, size=size, seed=image_seed)
            rel = f"images/{spec.name}/{spec.name}_{i:03d}.png"
            _save_rgb(img, os.path.join(out_dir, rel))
            _save_mask(gt, os.path.join(out_dir, "masks", spec.name, f"{spec.name}_{i:03d}.png"))
            records.append(corpus.SampleRecord(rel, spec.name))
    tiers = {s.name: corpus.Tier(s.tier) for s in specs}
    manifest = corpus.assign_split(corpus.Manifest(records), tiers, seed)
    corpus.save_manifest(manifest, os.path.join(out_dir, "manifest.tsv"))
    corpus.atomic_write_text(
        os.path.join(out_dir, "tiers.tsv"), "".join(f"{k}\t{v.value}\n" for k, v in tiers.items())
    )
    return manifest


def cmd_synth(args, cfg) -> int:
    specs = corpus.load_class_specs(args.spec) if args.spec else list(corpus.DEFAULT_CLASSES)
    manifest = synth_corpus(specs, args.count, args.output, cfg.seed, args.size or cfg.synth_size)
    print(
        f"{len(manifest)} images ({len(manifest.split('train'))} train, {len(manifest.split('test'))} test) "
        f"-> {os.path.join(args.output, 'manifest.tsv')}"
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable)"
    )
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leafscope", description="Leaf-based tree classification pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="background elimination -> <name>.mask.png, <name>.seg.png")
    p.add_argument("inputs", nargs="+", help="image files or directories")
    p.add_argument("--out-dir", help="output directory (default: next to each input)")
    _common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("destem", help="stem removal by morphological opening of a mask")
    p.add_argument("mask")
    p.add_argument("-o", "--output", help="output mask (default: <name>.destem.png)")
    _common(p)
    p.set_defaults(func=cmd_destem)

    p = sub.add_parser("extract", help="hand-crafted (optionally fused) feature file from a manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--deep-features", help="deep feature sidecar to fuse with")
    p.add_argument("--jobs", type=int, default=1)
    _common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the one-vs-rest linear SVM")
    p.add_argument("features")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True, help="model file")
    p.add_argument("--log", help="per-epoch training log (TSV)")
    p.add_argument("--groups", help="restrict 56-dim features to groups, e.g. ABD")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="ranked top-k classes for an image or a feature row")
    p.add_argument("model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image")
    src.add_argument("--features", help="feature file; pick the row with --id")
    p.add_argument("--id", help="feature row id (path#rotation)")
    p.add_argument("--deep-features", help="deep sidecar to fuse with an --image")
    p.add_argument("--deep-id")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--groups")
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="top-1/top-5 accuracy and confusion matrix on the test split")
    p.add_argument("model")
    p.add_argument("features")
    p.add_argument("manifest")
    p.add_argument("--confusion", help="write the confusion matrix TSV here")
    p.add_argument("--method", default="LSVM", help="row label of the report")
    p.add_argument("--groups")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="accuracy of each feature-group combination")
    p.add_argument("features")
    p.add_argument("manifest")
    p.add_argument("-o", "--output")
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report-seg", help="per-species background-elimination error rates")
    p.add_argument("manifest")
    p.add_argument("--jobs", type=int, default=1)
    _common(p)
    p.set_defaults(func=cmd_report_seg)

    p = sub.add_parser("synth", help="render a synthetic leaf corpus with manifest")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--spec", help="JSON list of leaf class specs (default: 8 built-in classes)")
    p.add_argument("--count", type=int, default=30, help="images per class")
    p.add_argument("--size", type=int)
    _common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        overrides = dict(kv.split("=", 1) for kv in args.set if "=" in kv)
        if len(overrides) != len(args.set):
            raise configmod.ConfigError("--set expects KEY=VALUE")
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = configmod.load(args.config, overrides)
        if args.command == "predict" and not args.image and not args.id:
            raise CommandError("--features needs --id")
        return args.func(args, cfg)
    except (CommandError, configmod.ConfigError, corpus.FormatError, raster.ImageError,
            features.FeatureError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
