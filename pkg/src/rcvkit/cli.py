"""Command-line pipeline: extract measures, fit concept vectors, score
relevance, test significance, and run the self-contained synthetic demo.

Subcommands compose through files only (NPY tensors, measure CSVs, ordered
manifests, JSON reports), so each stage is replayable and the demo's dumps
are indistinguishable from dumps exported off a real model. All randomness
derives from the single ``--seed`` flag; reports carry the seed and a config
hash, and rerunning with the same seed reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import morphomeasures as mm
from . import toynet as tn
from .rcvfit import ActivationSet, Rcv, fit_rcv, load_rcv, save_rcv
from .scoring import GradientSet, br_score, normalize_br, pearson, sensitivity, tcav_score
from .stats import (RepetitionConfig, evaluate_significance, run_repetitions,
                    run_rerun_repetitions, significance_csv)
from .tensorio import (MeasureTable, read_manifest, read_measures, read_tensor,
                       write_measures, write_tensor)

INPUT_LAYER = "input"

DEMO_DEFAULTS = {
    "n_train": 2000,
    "n_test": 300,
    "n_concept": 300,
    "epochs": 400,
    "lr": 0.3,
    "momentum": 0.9,
    "weight_decay": 3e-3,
    "layer_sizes": list(tn.DEFAULT_LAYER_SIZES),
    "score_layer": "h2",
    "n_repetitions": 30,
    "alpha": 0.01,
    "causal_slope": 30.0,
}


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _parse_layer_paths(pairs: list[str]) -> dict[str, Path]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise SystemExit(f"expected LAYER=PATH, got {pair!r}")
        layer, path = pair.split("=", 1)
        out[layer] = Path(path)
    return out


def _write_report(report: dict, out_dir: Path, stem: str = "report") -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


# --- static SVG rendering (deterministic, no plotting dependency) ---------

def _svg_header(width, height):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n')


def render_bar_svg(values: dict[str, float], path, title: str,
                   lo: float = -1.0, hi: float = 1.0) -> None:
    width, height, margin = 640, 360, 60
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    n = max(len(values), 1)
    bar_w = plot_w / (1.5 * n + 0.5)
    parts = [_svg_header(width, height),
             f'<text x="{width/2}" y="24" text-anchor="middle" '
             f'font-size="16">{title}</text>\n']
    def y_of(v):
        return margin + (hi - v) / (hi - lo) * plot_h
    parts.append(f'<line x1="{margin}" y1="{y_of(0)}" x2="{width-margin}" '
                 f'y2="{y_of(0)}" stroke="black"/>\n')
    for i, (name, v) in enumerate(values.items()):
        x = margin + (0.5 + 1.5 * i) * bar_w
        y0, y1 = sorted((y_of(0), y_of(v)))
        parts.append(f'<rect x="{x:.2f}" y="{y1:.2f}" width="{bar_w:.2f}" '
                     f'height="{max(y0-y1, 0.5):.2f}" '
                     f'fill="{"steelblue" if v >= 0 else "firebrick"}"/>\n')
        parts.append(f'<text x="{x+bar_w/2:.2f}" y="{height-margin+16}" '
                     f'text-anchor="middle" font-size="11">{name}</text>\n')
        parts.append(f'<text x="{x+bar_w/2:.2f}" y="{y1-4:.2f}" '
                     f'text-anchor="middle" font-size="10">{v:.2f}</text>\n')
    parts.append("</svg>\n")
    Path(path).write_text("".join(parts))


def render_lines_svg(series: dict[str, list[tuple[str, float]]], path,
                     title: str, lo: float = 0.0, hi: float = 1.0) -> None:
    width, height, margin = 640, 360, 60
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    palette = ["steelblue", "firebrick", "seagreen", "darkorange",
               "purple", "dimgray"]
    parts = [_svg_header(width, height),
             f'<text x="{width/2}" y="24" text-anchor="middle" '
             f'font-size="16">{title}</text>\n']
    layers = [x for x, _ in next(iter(series.values()))] if series else []
    nx = max(len(layers) - 1, 1)
    def xy(i, v):
        x = margin + i / nx * plot_w
        y = margin + (hi - min(max(v, lo), hi)) / (hi - lo) * plot_h
        return x, y
    for i, layer in enumerate(layers):
        x, _ = xy(i, 0)
        parts.append(f'<text x="{x:.2f}" y="{height-margin+16}" '
                     f'text-anchor="middle" font-size="11">{layer}</text>\n')
    for k, (name, points) in enumerate(series.items()):
        color = palette[k % len(palette)]
        coords = " ".join(f"{xy(i, v)[0]:.2f},{xy(i, v)[1]:.2f}"
                          for i, (_, v) in enumerate(points))
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>\n')
        parts.append(f'<text x="{width-margin+4}" '
                     f'y="{margin+14*(k+1)}" font-size="11" '
                     f'fill="{color}">{name}</text>\n')
    parts.append("</svg>\n")
    Path(path).write_text("".join(parts))


# --- subcommands ----------------------------------------------------------

def cmd_extract(args) -> int:
    from .tensorio import load_masked_images

    image_paths = [Path(p) for p in args.images]
    mask_paths = [Path(p) for p in args.masks]
    if len(image_paths) != len(mask_paths):
        raise SystemExit("need equally many --images and --masks")
    ids = read_manifest(args.ids) if args.ids else None
    patches = load_masked_images(image_paths, mask_paths, ids)
    rows = []
    for sid, img, mask in zip(patches.sample_ids, patches.images, patches.masks):
        try:
            measures = mm.patch_concept_measures(
                img, mask, levels=args.levels,
                exclude_border=args.exclude_border)
        except mm.EmptyMaskError:
            print(f"warning: {sid}: no nucleus instances, skipped",
                  file=sys.stderr)
            continue
        for concept in mm.CONCEPT_NAMES:
            rows.append((sid, concept, measures[concept]))
    write_measures(MeasureTable(rows), args.out)
    print(f"wrote {len(rows)} measure rows to {args.out}")
    return 0


def _fit_layers(acts_by_layer, manifest, table, concept_names,
                intercept, standardize):
    rcvs, r2_rows = {}, []
    for layer, phi in acts_by_layer.items():
        acts = ActivationSet(phi, manifest, layer)
        for name in concept_names:
            c = table.concept(name, manifest)
            rcv = fit_rcv(acts, c, intercept=intercept, standardize=standardize)
            rcvs[(layer, name)] = rcv
            r2_rows.append({"layer": layer, "concept": name,
                            "r_squared": rcv.r_squared})
    return rcvs, r2_rows


def cmd_fit(args) -> int:
    acts_paths = _parse_layer_paths(args.acts)
    manifest = read_manifest(args.manifest)
    table = read_measures(args.measures)
    concept_names = args.concepts or table.concepts
    acts_by_layer = {layer: read_tensor(p) for layer, p in acts_paths.items()}
    rcvs, r2_rows = _fit_layers(acts_by_layer, manifest, table, concept_names,
                                not args.no_intercept, args.standardize)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for (layer, name), rcv in rcvs.items():
        save_rcv(rcv, out_dir / f"rcv_{layer}_{name}")
    with open(out_dir / "rsquared.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["layer", "concept", "r_squared"])
        writer.writeheader()
        writer.writerows(r2_rows)
    print(f"fitted {len(rcvs)} concept vectors into {out_dir}")
    return 0


def _score_layer(grads: GradientSet, rcvs: dict[str, Rcv]):
    rows = []
    for name, rcv in rcvs.items():
        s = sensitivity(grads, rcv)
        scores = br_score(s, rcv.r_squared)
        rows.append({"layer": grads.layer_id, "concept": name,
                     "tcav": tcav_score(s), "br_raw": scores.br_raw,
                     "mean": scores.mean, "std": scores.std,
                     "r_squared": scores.r_squared, "n": scores.n,
                     "degenerate_std": scores.degenerate_std})
    normalized = normalize_br({r["concept"]: r["br_raw"] for r in rows})
    for r in rows:
        r["br_normalized"] = normalized[r["concept"]]
    return rows


def cmd_score(args) -> int:
    grads_paths = _parse_layer_paths(args.grads)
    manifest = read_manifest(args.manifest)
    rcv_dir = Path(args.rcv_dir)
    all_rows = []
    for layer, path in grads_paths.items():
        grads = GradientSet(read_tensor(path), manifest, layer)
        rcvs = {}
        for sidecar in sorted(rcv_dir.glob(f"rcv_{layer}_*.json")):
            rcv = load_rcv(sidecar.with_suffix(""))
            rcvs[rcv.concept_name] = rcv
        if not rcvs:
            raise SystemExit(f"no concept vectors for layer {layer!r} in {rcv_dir}")
        all_rows.extend(_score_layer(grads, rcvs))
    Path(args.out).write_text(json.dumps({"scores": all_rows}, indent=2,
                                         sort_keys=True) + "\n")
    print(f"scored {len(all_rows)} (layer, concept) pairs into {args.out}")
    return 0


def cmd_stats(args) -> int:
    (layer, acts_path), = _parse_layer_paths([args.acts]).items()
    (glayer, grads_path), = _parse_layer_paths([args.grads]).items()
    manifest = read_manifest(args.manifest)
    grad_manifest = read_manifest(args.grad_manifest)
    table = read_measures(args.measures)
    acts = ActivationSet(read_tensor(acts_path), manifest, layer)
    grads = GradientSet(read_tensor(grads_path), grad_manifest, glayer)
    concepts = {name: table.concept(name, manifest)
                for name in (args.concepts or table.concepts)}
    cfg = RepetitionConfig(n_repetitions=args.repetitions,
                           resample_fraction=args.resample_fraction,
                           seed=args.seed, alpha=args.alpha,
                           n_comparisons=args.n_comparisons)
    results = evaluate_significance(
        run_repetitions(acts, concepts, grads, cfg), cfg)
    block = [vars(r) for r in results]
    Path(args.out).write_text(json.dumps({"significance": block}, indent=2,
                                         sort_keys=True) + "\n")
    stem = Path(args.out)
    significance_csv(results, stem.with_suffix("")
                     .with_name(stem.stem + ".significance.csv"))
    print(f"wrote significance results for {len(concepts)} concepts to {args.out}")
    return 0


# --- demo: the end-to-end synthetic pipeline ------------------------------

def _derived_int(*keys) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0] % 2**31)


def _demo_world(cfg: dict, seed: int):
    spec = tn.SyntheticSpec(causal_slope=cfg["causal_slope"],
                            causal_intercept=-cfg["causal_slope"] * 0.2)
    train_data = tn.make_synthetic(spec, seed * 10 + 1, cfg["n_train"], "tr")
    return spec, train_data


def _demo_train_net(cfg: dict, train_data, net_seed: int):
    net = tn.init_net(tuple(cfg["layer_sizes"]), seed=net_seed)
    tn.train(net, train_data, epochs=cfg["epochs"], lr=cfg["lr"],
             momentum=cfg["momentum"], weight_decay=cfg["weight_decay"])
    return net


def _concept_measures_of(dataset, spec):
    table_rows = [(sid, name, float(v))
                  for name in spec.concepts
                  for sid, v in zip(dataset.sample_ids,
                                    dataset.concept_values[name])]
    return MeasureTable(table_rows)


def run_demo(seed: int, out_dir: Path, overrides: dict | None = None) -> int:
    cfg = dict(DEMO_DEFAULTS)
    cfg.update(overrides or {})
    out_dir = Path(out_dir)
    dumps = out_dir / "dumps"
    spec, train_data = _demo_world(cfg, seed)
    net = _demo_train_net(cfg, train_data, _derived_int(seed, 500))

    concept_data = tn.make_synthetic(spec, seed * 10 + 2, cfg["n_concept"], "c")
    test_data = tn.make_synthetic(spec, seed * 10 + 3, cfg["n_test"], "te")

    # stage: dump activations/gradients through the shared file formats
    tn.save_dumps(net, concept_data.inputs, concept_data.sample_ids, dumps,
                  "concept")
    tn.save_dumps(net, test_data.inputs, test_data.sample_ids, dumps, "test")
    write_tensor(concept_data.inputs, dumps / f"concept_acts_{INPUT_LAYER}.npy")
    table = _concept_measures_of(concept_data, spec)
    write_measures(table, dumps / "concept_measures.csv")

    # stage: read everything back so the pipeline sees only files
    manifest = read_manifest(dumps / "concept_manifest.txt")
    test_manifest = read_manifest(dumps / "test_manifest.txt")
    table = read_measures(dumps / "concept_measures.csv")
    sweep_layers = [INPUT_LAYER] + net.layer_ids
    acts_by_layer = {layer: read_tensor(dumps / f"concept_acts_{layer}.npy")
                     for layer in sweep_layers}

    concept_names = list(spec.concepts)
    rcvs, r2_rows = _fit_layers(acts_by_layer, manifest, table, concept_names,
                                True, False)
    rcv_dir = out_dir / "rcvs"
    rcv_dir.mkdir(parents=True, exist_ok=True)
    for (layer, name), rcv in rcvs.items():
        save_rcv(rcv, rcv_dir / f"rcv_{layer}_{name}")

    # stage: relevance scores at the configured layer
    score_layer = cfg["score_layer"]
    grads = GradientSet(read_tensor(dumps / f"test_grads_{score_layer}.npy"),
                        test_manifest, score_layer)
    score_rows = _score_layer(
        grads, {name: rcvs[(score_layer, name)] for name in concept_names})

    # stage: Pearson pre-analysis on the concept set's own predictions
    predictions = read_tensor(dumps / "concept_predictions.npy")
    pearson_rows = []
    for name in concept_names:
        rho, p = pearson(table.concept(name, manifest), predictions)
        pearson_rows.append({"concept": name, "rho": rho, "p_value": p})

    # stage: significance over independent reruns (retrain + fresh draws)
    rep_cfg = RepetitionConfig(n_repetitions=cfg["n_repetitions"],
                               seed=seed, alpha=cfg["alpha"],
                               n_comparisons=len(concept_names))

    def provider(r: int):
        ss = np.random.SeedSequence([seed, 7000 + r]).generate_state(3)
        rep_net = _demo_train_net(cfg, train_data, int(ss[0] % 2**31))
        rep_concept = tn.make_synthetic(spec, int(ss[1] % 2**31),
                                        cfg["n_concept"], "rc")
        rep_test = tn.make_synthetic(spec, int(ss[2] % 2**31),
                                     cfg["n_test"], "rt")
        _, rep_acts = tn.forward_batch(rep_net, rep_concept.inputs)
        rep_grads = tn.grad_batch(rep_net, rep_test.inputs)
        acts = ActivationSet(rep_acts[score_layer], rep_concept.sample_ids,
                             score_layer)
        rep_table = _concept_measures_of(rep_concept, spec)
        concepts = {name: rep_table.concept(name, rep_concept.sample_ids)
                    for name in concept_names}
        g = GradientSet(rep_grads[score_layer], rep_test.sample_ids,
                        score_layer)
        return acts, concepts, g

    rep_scores = run_rerun_repetitions(provider, rep_cfg)
    results = evaluate_significance(rep_scores, rep_cfg)

    meta = {
        "tool": "rcvkit",
        "version": __version__,
        "seed": seed,
        "config": cfg,
        "config_hash": _config_hash({"seed": seed, **cfg}),
        "causal_concept": spec.causal_concept,
        "causal_slope": spec.causal_slope,
        "score_layer": score_layer,
        "repetition_protocol": "rerun",
    }
    report = {
        "meta": meta,
        "pearson": pearson_rows,
        "rsquared": r2_rows,
        "scores": score_rows,
        "significance": [vars(r) for r in results],
    }
    report_path = _write_report(report, out_dir)

    # side outputs: plot-ready CSV + static SVG renderings
    with open(out_dir / "report.rsquared.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["layer", "concept", "r_squared"])
        writer.writeheader()
        writer.writerows(r2_rows)
    with open(out_dir / "report.scores.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "layer", "concept", "tcav", "br_raw", "br_normalized",
            "mean", "std", "r_squared", "n", "degenerate_std"])
        writer.writeheader()
        writer.writerows(score_rows)
    significance_csv(results, out_dir / "report.significance.csv")
    render_bar_svg({r["concept"]: r["br_normalized"] for r in score_rows},
                   out_dir / "report.scores.svg",
                   f"normalized Br at {score_layer}")
    r2_series = {name: [(layer, next(r["r_squared"] for r in r2_rows
                                     if r["layer"] == layer
                                     and r["concept"] == name))
                        for layer in sweep_layers]
                 for name in concept_names}
    render_lines_svg(r2_series, out_dir / "report.rsquared.svg",
                     "in-sample R^2 per layer")

    by_key = {(r.score_kind, r.concept_name): r for r in results}
    causal = by_key[("br", spec.causal_concept)]
    distractors = [r for (kind, name), r in by_key.items()
                   if kind == "br" and name != spec.causal_concept]
    causal_ok = (causal.reject_null
                 and np.sign(np.mean(causal.scores)) == np.sign(spec.causal_slope))
    distractor_ok = all(not r.reject_null for r in distractors)
    print(f"report: {report_path}")
    print(f"causal concept {spec.causal_concept!r}: "
          f"p={causal.p_value:.3g} reject={causal.reject_null}")
    for r in distractors:
        print(f"distractor {r.concept_name!r}: "
              f"p={r.p_value:.3g} reject={r.reject_null}")
    return 0 if (causal_ok and distractor_ok) else 1


def cmd_demo(args) -> int:
    overrides = {}
    if args.config:
        overrides.update(json.loads(Path(args.config).read_text()))
    if args.causal_slope is not None:
        overrides["causal_slope"] = args.causal_slope
    return run_demo(args.seed, Path(args.out_dir), overrides)


# --- argument parsing -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcv",
        description="Concept-direction relevance analysis pipeline")
    parser.add_argument("--seed", type=int, default=0,
                        help="master seed; all stage seeds derive from it")
    parser.add_argument("--out-dir", default="rcv_out",
                        help="output directory for reports and artifacts")
    parser.add_argument("--config", default=None,
                        help="JSON file with parameter overrides")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="concept measures from masked patches")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--masks", nargs="+", required=True)
    p.add_argument("--ids", default=None, help="manifest of sample ids")
    p.add_argument("--levels", type=int, default=mm.DEFAULT_LEVELS)
    p.add_argument("--exclude-border", action="store_true")
    p.add_argument("--out", required=True, help="output measures CSV")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit", help="fit concept vectors per layer/concept")
    p.add_argument("--acts", nargs="+", required=True, metavar="LAYER=NPY")
    p.add_argument("--manifest", required=True)
    p.add_argument("--measures", required=True)
    p.add_argument("--concepts", nargs="*", default=None)
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--standardize", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="sensitivities and relevance scores")
    p.add_argument("--grads", nargs="+", required=True, metavar="LAYER=NPY")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rcv-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("stats", help="repetition protocol + significance")
    p.add_argument("--acts", required=True, metavar="LAYER=NPY")
    p.add_argument("--manifest", required=True)
    p.add_argument("--measures", required=True)
    p.add_argument("--grads", required=True, metavar="LAYER=NPY")
    p.add_argument("--grad-manifest", required=True)
    p.add_argument("--concepts", nargs="*", default=None)
    p.add_argument("--repetitions", type=int, default=30)
    p.add_argument("--resample-fraction", type=float, default=0.8)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--n-comparisons", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("demo", help="end-to-end synthetic pipeline")
    p.add_argument("--causal-slope", type=float, default=None)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
