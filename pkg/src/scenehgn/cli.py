"""Command-line interface.

Subcommands: detect, regions, floor, energy, optimize, rvnn, metrics, synth,
render. Exit codes: 0 on success, 1 on validation failure, 2 on I/O or
parse errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from scenehgn import detect as dt
from scenehgn import energy as en
from scenehgn import metrics as mt
from scenehgn import optimize as opt
from scenehgn import regions as rg
from scenehgn import render as rd
from scenehgn import rvnn as rv
from scenehgn import synth
from scenehgn import floor as fl
from scenehgn import scene as sc


class _CliError(RuntimeError):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_scene(path):
    try:
        return sc.deserialize(Path(path).read_bytes())
    except (OSError, sc.SceneParseError) as exc:
        raise _CliError(f"cannot read scene {path}: {exc}", 2) from exc


def _write_scene(scene, path):
    Path(path).write_bytes(sc.serialize(scene))


def _load_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise _CliError(f"cannot read {what} {path}: {exc}", 2) from exc


def _require_valid(scene, quiet):
    problems = sc.validate(scene)
    if problems:
        if not quiet:
            for p in problems[:20]:
                print(str(p), file=sys.stderr)
        raise _CliError(f"scene failed validation with {len(problems)} violations", 1)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_detect(args):
    scene = _load_scene(args.scene)
    thresholds = dt.DetectionThresholds()
    if args.thresholds:
        thresholds = dt.DetectionThresholds.from_dict(_load_json(args.thresholds, "thresholds"))
    _require_valid(scene, args.quiet)
    detected = dt.detect_scene(scene, thresholds)
    _write_scene(detected, args.out)
    if args.explain:
        lines = []
        for edge in detected.edges.binary:
            if edge.type == "adjacency":
                lines.append(f"adjacency {edge.a} {edge.b}")
            else:
                resid = en.binary_symmetry_residual(edge, detected.objects)
                lines.append(f"{edge.type} {edge.a} {edge.b} residual={resid:.3e}")
        for edge in detected.edges.hyper:
            placements = [detected.objects[m].placement for m in edge.members]
            if edge.type == "nfold_rotation":
                resid = en.hyper_rotation_loss(placements, samples=256)
            else:
                resid = en.hyper_parallel_loss(placements)
            lines.append(f"{edge.type} [{','.join(edge.members)}] residual={resid:.3e}")
        print("\n".join(lines))
    if not args.quiet:
        print(
            f"detected {len(detected.edges.binary)} binary, "
            f"{len(detected.edges.hyper)} hyper edges -> {args.out}"
        )
    return 0


def _cmd_regions(args):
    scene = _load_scene(args.scene)
    label_map = None
    if args.label_map:
        label_map = _load_json(args.label_map, "label map")
    params = rg.ClusterParams(
        eps=args.eps, min_pts=args.min_pts, samples_per_object=args.samples
    )
    regions = rg.extract_regions(
        list(scene.objects.values()), params, label_map, seed=args.seed
    )
    if args.override:
        overrides = _load_json(args.override, "region override")
        by_id = {r.id: r for r in regions}
        for rid, doc in overrides.items():
            if rid in by_id and "region_type" in doc:
                by_id[rid].region_type = doc["region_type"]
    out = sc.SceneHierarchy(
        room_id=scene.room_id,
        floor=scene.floor,
        regions=regions,
        objects=scene.objects,
        edges=scene.edges,
        room_type=scene.room_type,
    )
    _require_valid(out, args.quiet)
    _write_scene(out, args.out)
    if not args.quiet:
        print(f"{len(regions)} regions -> {args.out}")
    return 0


def _cmd_floor(args):
    if args.action == "encode":
        doc = _load_json(args.input, "polygon")
        polygon = fl.FloorPolygon(np.asarray(doc, dtype=np.float64))
        try:
            ring = fl.register_ring(polygon)
        except fl.InvalidFloorError as exc:
            raise _CliError(str(exc), 1) from exc
        feats = fl.ring_to_features(ring, fl.reference_ring())
        fl.write_feature_file(args.out, feats)
        if not args.quiet:
            print(f"encoded {len(doc)}-gon -> {args.out}")
    else:
        try:
            feats = fl.read_feature_file(args.input)
        except (OSError, ValueError) as exc:
            raise _CliError(f"cannot read features: {exc}", 2) from exc
        anchor = np.asarray(args.anchor, dtype=np.float64)
        ring = fl.features_to_ring(feats, fl.reference_ring(), 0, anchor)
        Path(args.out).write_text(
            json.dumps([[float(x), float(z)] for x, z in ring.vertices])
        )
        if not args.quiet:
            print(f"decoded ring -> {args.out}")
    return 0


def _cmd_energy(args):
    scene = _load_scene(args.scene)
    _require_valid(scene, args.quiet)
    weights = en.EnergyWeights()
    if args.weights:
        weights = en.EnergyWeights(**_load_json(args.weights, "weights"))
    report = en.total_energy(scene, weights, samples=args.samples)
    doc = {
        "terms": report.terms,
        "total": report.total,
        "gradient": {k: [float(x) for x in v] for k, v in report.gradient.items()},
    }
    Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=1))
    if not args.quiet:
        print(f"total energy {report.total:.6g} -> {args.out}")
    return 0


def _cmd_optimize(args):
    scene = _load_scene(args.scene)
    _require_valid(scene, args.quiet)
    constraints = []
    if args.edits:
        for doc in _load_json(args.edits, "edits"):
            constraints.append(
                opt.EditConstraint(
                    object_id=doc["object"],
                    center=doc.get("center"),
                    scale=doc.get("scale"),
                    orientation=doc.get("orientation"),
                )
            )
    weights = en.EnergyWeights()
    if args.weights:
        weights = en.EnergyWeights(**_load_json(args.weights, "weights"))
    config = opt.OptimizerConfig(
        step_size=args.step, max_iterations=args.max_iter, tolerance=args.tol
    )
    refined, trace = opt.refine(scene, constraints, config, weights)
    _write_scene(refined, args.out)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(trace.columns)
            writer.writerows(trace.rows)
    if not args.quiet:
        for warning in trace.warnings:
            print(f"warning: {warning}", file=sys.stderr)
        energies = trace.energies()
        print(
            f"energy {energies[0]:.6g} -> {energies[-1]:.6g} "
            f"in {len(energies) - 1} iterations -> {args.out}"
        )
    return 0


def _cmd_rvnn(args):
    if args.action == "train":
        scenes = []
        for path in sorted(Path(args.corpus).glob("*.json")):
            if path.name == "ground_truth.json":
                continue
            scenes.append(_load_scene(path))
        if not scenes:
            raise _CliError(f"no scene files in {args.corpus}", 2)
        cfg = rv.ModelConfig()
        tcfg = rv.TrainConfig(epochs=args.epochs, seed=args.seed)
        params, curve = rv.train(scenes, cfg, tcfg, log_every=0 if args.quiet else max(1, args.epochs // 10))
        rv.save_checkpoint(args.out, params, cfg)
        if args.curve:
            with open(args.curve, "w", newline="") as fh:
                writer = csv.writer(fh)
                keys = sorted(curve[0])
                writer.writerow(["epoch"] + keys)
                for i, row in enumerate(curve):
                    writer.writerow([i] + [row[k] for k in keys])
        if not args.quiet:
            print(f"trained {args.epochs} epochs -> {args.out}")
        return 0

    params, cfg = rv.load_checkpoint(args.model)
    if args.action == "reconstruct":
        scene = _load_scene(args.scene)
        out = rv.reconstruct(scene, params, cfg, seed=args.seed)
    elif args.action == "complete":
        scene = _load_scene(args.scene)
        out = rv.complete(scene, params, cfg)
    elif args.action == "interpolate":
        scene_a = _load_scene(args.scene)
        scene_b = _load_scene(args.scene_b)
        out = rv.interpolate(scene_a, scene_b, args.t, params, cfg)
    elif args.action == "boxgen":
        doc = _load_json(args.boxes, "boxes")
        boxes = [
            sc.PlacementParams(b["center"], b["scale"], b.get("orientation", 0.0))
            for b in doc
        ]
        condition = np.zeros(cfg.condition_dim)
        floor = None
        if args.floor:
            poly = fl.FloorPolygon(np.asarray(_load_json(args.floor, "floor"), dtype=np.float64))
            condition = fl.polygon_condition(poly, cfg.condition_dim)
            floor = poly
        out = rv.box_layout_to_scene(boxes, condition, params, cfg, seed=args.seed, floor=floor)
    else:  # pragma: no cover - argparse restricts choices
        raise _CliError(f"unknown rvnn action {args.action}", 2)
    _write_scene(out, args.out)
    if not args.quiet:
        print(f"{args.action} -> {args.out}")
    return 0


def _load_corpus_dir(path):
    scenes = []
    for file in sorted(Path(path).glob("*.json")):
        if file.name == "ground_truth.json":
            continue
        scenes.append(_load_scene(file))
    if not scenes:
        raise _CliError(f"no scene files in {path}", 2)
    return scenes


def _cmd_metrics(args):
    corpus_a = _load_corpus_dir(args.corpus_a)
    corpus_b = _load_corpus_dir(args.corpus_b)
    warnings = []
    report = {
        "o1": mt.o1(corpus_a, corpus_b),
        "o2": mt.o2(corpus_a, corpus_b, warn=warnings.append),
        "o3": mt.o3(corpus_a, corpus_b, warn=warnings.append),
        "orientation_a": mt.orientation_score(corpus_a, args.orientation_formula),
        "orientation_b": mt.orientation_score(corpus_b, args.orientation_formula),
        "warnings": warnings,
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for pair_text in args.pair or []:
        cat_a, cat_b = pair_text.split(",")
        heat = mt.o4_heatmap(corpus_a, (cat_a, cat_b))
        (out_dir / f"o4_{cat_a}-{cat_b}.pgm").write_bytes(mt.heatmap_to_pgm(heat))
        np.save(out_dir / f"o4_{cat_a}-{cat_b}.npy", heat.grid)
        report.setdefault("o4_totals", {})[f"{cat_a}-{cat_b}"] = heat.total
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1))
    if not args.quiet:
        print(f"o1={report['o1']:.4f} o2={report['o2']:.4f} o3={report['o3']:.4f} -> {out_dir}")
    return 0


def _cmd_synth(args):
    templates = synth.default_templates()
    if args.template != "all" and args.template not in templates:
        raise _CliError(f"unknown template {args.template!r}", 2)
    chosen = (
        list(templates.values())
        if args.template == "all"
        else [templates[args.template]]
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    truths = {}
    for k in range(args.count):
        template = chosen[k % len(chosen)]
        scene, truth = synth.gen_scene(template, args.seed + k)
        if args.sigma_pos > 0 or args.sigma_yaw > 0:
            scene = synth.perturb(scene, args.sigma_pos, args.sigma_yaw, args.seed + k)
        name = f"{scene.room_id}.json"
        (out_dir / name).write_bytes(sc.serialize(scene))
        truths[name] = truth
    (out_dir / "ground_truth.json").write_text(json.dumps(truths, sort_keys=True, indent=1))
    if not args.quiet:
        print(f"wrote {args.count} scenes -> {out_dir}")
    return 0


def _cmd_render(args):
    scene = _load_scene(args.scene)
    try:
        rd.render_svg(scene, args.out)
    except OSError as exc:
        raise _CliError(f"cannot write {args.out}: {exc}", 2) from exc
    if not args.quiet:
        print(f"rendered -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scenehgn", description="hierarchical indoor-scene toolkit"
    )
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--config", default=None, help="optional JSON config file")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="populate edge sets of a scene")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--explain", action="store_true")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("regions", help="cluster objects into functional regions")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--min-pts", type=int, default=30)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--label-map", default=None)
    p.add_argument("--override", default=None)
    p.set_defaults(func=_cmd_regions)

    p = sub.add_parser("floor", help="floor boundary ring codec")
    p.add_argument("action", choices=["encode", "decode"])
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--anchor", type=float, nargs=2, default=(0.0, 0.0))
    p.set_defaults(func=_cmd_floor)

    p = sub.add_parser("energy", help="evaluate the relational energy")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--samples", type=int, default=sc.SURFACE_SAMPLE_COUNT)
    p.set_defaults(func=_cmd_energy)

    p = sub.add_parser("optimize", help="refine placements by energy descent")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.add_argument("--edits", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--trace", default=None)
    p.add_argument("--step", type=float, default=1e-2)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("rvnn", help="recursive scene VAE")
    p.add_argument("action", choices=["train", "reconstruct", "interpolate", "complete", "boxgen"])
    p.add_argument("--corpus", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--scene", default=None)
    p.add_argument("--scene-b", dest="scene_b", default=None)
    p.add_argument("--boxes", default=None)
    p.add_argument("--floor", default=None)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--curve", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rvnn)

    p = sub.add_parser("metrics", help="layout metrics between two corpora")
    p.add_argument("corpus_a")
    p.add_argument("corpus_b")
    p.add_argument("--out", required=True)
    p.add_argument("--pair", action="append", help="categoryA,categoryB heatmap pair")
    p.add_argument(
        "--orientation-formula",
        choices=["eight_peak", "literal"],
        default="eight_peak",
    )
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--template", default="all")
    p.add_argument("--sigma-pos", type=float, default=0.0)
    p.add_argument("--sigma-yaw", type=float, default=0.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("render", help="render a scene to SVG")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (sc.SceneParseError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
