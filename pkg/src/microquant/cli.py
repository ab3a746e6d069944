"""Command-line interface.

Exit status: 0 success, 1 usage error, 2 bad input data, 3 internal error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import boundary as bnd
from . import calibration as cal
from . import pipeline, prep, report, synth
from .defects import AnalysisConfig, box_iou_summary, defect_stats, quantify
from .errors import DataError, MicroquantError, StageError
from .metrics import evaluate_pixels
from .raster import (DEFECT_CLASSES, LabelMap, load_label_image, load_meta, load_score_stack, parse_class,
                     save_label_image, save_score_stack)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _globals() -> argparse.ArgumentParser:
    g = _Parser(add_help=False)
    g.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                   help="INI file with [run], [analysis], [hough], [ripley], [calibration] sections")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed (default 0)")
    g.add_argument("--out-dir", type=Path, default=argparse.SUPPRESS,
                   help="output directory (default ./microquant-out)")
    g.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress status messages")
    return g


def build_parser() -> argparse.ArgumentParser:
    g = _globals()
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="microquant", description="Segmentation metrics and microstructure quantification.",
                parents=[g], formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prep", parents=[g], formatter_class=fmt, help="split and chip a labeled image")
    s.add_argument("--image", type=Path, required=True)
    s.add_argument("--labels", type=Path, required=True)
    s.add_argument("--meta", type=Path, required=True)
    s.add_argument("--chip-size", type=int, default=prep.CHIP_SIZE)
    s.add_argument("--train-fraction", type=float, default=prep.TRAIN_FRACTION)

    s = sub.add_parser("eval-pixels", parents=[g], formatter_class=fmt, help="pixel metrics of a prediction")
    s.add_argument("--truth", type=Path, required=True)
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--meta", type=Path)
    s.add_argument("--out", type=Path, help="JSON output (default stdout)")

    s = sub.add_parser("quantify", parents=[g], formatter_class=fmt, help="defect table, stats, boundary tests")
    s.add_argument("--labels", type=Path, required=True)
    s.add_argument("--meta", type=Path, required=True)
    s.add_argument("--out", type=Path, help="per-defect CSV (default <out-dir>/defects.csv)")
    s.add_argument("--versus", type=Path, help="second label map for the two-sample boundary test")
    s.add_argument("--versus-meta", type=Path)
    s.add_argument("--area-threshold", type=float, help="minimum defect area in um^2 (default 0.001888)")

    s = sub.add_parser("boxiou", parents=[g], formatter_class=fmt, help="Box IoU of predicted defects")
    s.add_argument("--truth", type=Path, required=True)
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--meta", type=Path)
    s.add_argument("--out", type=Path)

    s = sub.add_parser("ripley", parents=[g], formatter_class=fmt, help="Ripley K/H curves with envelopes")
    s.add_argument("--labels", type=Path, required=True)
    s.add_argument("--meta", type=Path, required=True)
    s.add_argument("--classes", default="void,impurity,precipitate")
    s.add_argument("--sims", type=int)
    s.add_argument("--quantile", type=float)
    s.add_argument("--correction", choices=("translation", "none"))
    s.add_argument("--out", type=Path, help="curves CSV (default <out-dir>/ripley_curves.csv)")
    s.add_argument("--svg", type=Path, help="also write a verdict strip plot")

    s = sub.add_parser("prop-test", parents=[g], formatter_class=fmt, help="on-boundary proportion tests")
    s.add_argument("--on", type=int, required=True)
    s.add_argument("--total", type=int, required=True)
    s.add_argument("--on2", type=int)
    s.add_argument("--total2", type=int)
    s.add_argument("--no-continuity", action="store_true")

    s = sub.add_parser("calibrate", parents=[g], formatter_class=fmt, help="density-ratio calibration")
    csub = s.add_subparsers(dest="action", required=True, parser_class=_Parser)
    c = csub.add_parser("fit", parents=[g], formatter_class=fmt)
    c.add_argument("--scores", type=Path, required=True)
    c.add_argument("--truth", type=Path, required=True)
    c.add_argument("--k", type=int)
    c.add_argument("--out", type=Path, required=True)
    c = csub.add_parser("apply", parents=[g], formatter_class=fmt)
    c.add_argument("--model", type=Path, required=True)
    c.add_argument("--scores", type=Path, required=True)
    c.add_argument("--truth", type=Path)
    c.add_argument("--meta", type=Path)
    c.add_argument("--tau", type=float)
    c.add_argument("--out", type=Path)
    c.add_argument("--confidence-png", type=Path)

    s = sub.add_parser("synth", parents=[g], formatter_class=fmt, help="write a synthetic dataset")
    s.add_argument("--n-images", type=int, default=3)
    s.add_argument("--height", type=int, default=synth.DEFAULT_SHAPE[0])
    s.add_argument("--width", type=int, default=synth.DEFAULT_SHAPE[1])
    s.add_argument("--scores", action="store_true", help="also write validation/test score stacks")
    s.add_argument("--trials", type=int, default=cal.DEFAULT_TRIALS)

    s = sub.add_parser("report", parents=[g], formatter_class=fmt, help="full report over a dataset")
    s.add_argument("--dataset", type=Path, help="dataset directory (default: bundled 3-image set)")
    return p


class _Ctx:
    def __init__(self, args):
        self.args = args
        self.config = pipeline.load_config(getattr(args, "config", None),
                                           seed=getattr(args, "seed", None),
                                           out_dir=getattr(args, "out_dir", None))
        self.quiet = getattr(args, "quiet", False)

    def say(self, msg):
        if not self.quiet:
            print(msg, file=sys.stderr)

    def out_path(self, given, default_name) -> Path:
        if given is not None:
            given.parent.mkdir(parents=True, exist_ok=True)
            return given
        self.config.out_dir.mkdir(parents=True, exist_ok=True)
        return self.config.out_dir / default_name

    def emit_json(self, obj, path):
        text = report.dumps_json(obj)
        if path is None:
            sys.stdout.write(text)
        else:
            report.write_text(path, text)
            self.say(f"wrote {path}")


def _pixel_size(meta_path):
    return load_meta(meta_path).pixel_size if meta_path else 1.0


def cmd_prep(ctx, a):
    meta = load_meta(a.meta)
    labels = load_label_image(a.labels, pixel_size=meta.pixel_size)
    try:
        image = np.asarray(Image.open(a.image))
    except OSError as exc:
        raise DataError(f"cannot read image {a.image}: {exc}") from exc
    layout, chips = prep.prepare_chips(image, labels, a.chip_size, a.train_fraction, ctx.config.seed)
    out = ctx.config.out_dir
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(exist_ok=True)
    for ch in chips:
        name = f"{meta.image_id}_{ch.x}_{ch.y}_{ch.variant}_{ch.split}.png"
        Image.fromarray(ch.image).save(out / "images" / name)
        save_label_image(LabelMap(ch.labels, meta.pixel_size), path=out / "labels" / name)
    timg, tlab = prep.holdout_region(image, labels, layout)
    Image.fromarray(timg).save(out / f"{meta.image_id}_test_image.png")
    save_label_image(tlab, path=out / f"{meta.image_id}_test_labels.png")
    counts = {s: sum(c.split == s for c in chips) for s in ("train", "val")}
    manifest = {"image_id": meta.image_id, "seed": ctx.config.seed,
                "layout": {"trainval_width": layout.trainval_width, "test_offset_x": layout.test_offset_x,
                           "test_width": layout.test_width, "chip_size": layout.chip_size},
                "counts": {"chips": len(chips), **counts, "base_chips": sum(c.variant == 0 for c in chips)}}
    ctx.emit_json(manifest, out / "manifest.json")


def cmd_eval_pixels(ctx, a):
    ps = _pixel_size(a.meta)
    m = evaluate_pixels(load_label_image(a.truth, pixel_size=ps), load_label_image(a.pred, pixel_size=ps))
    ctx.emit_json(m.to_json() | {"seed": ctx.config.seed}, a.out)


def _analysis(ctx, a):
    cfg = ctx.config.analysis
    if getattr(a, "area_threshold", None) is not None:
        cfg = AnalysisConfig(a.area_threshold, cfg.kernel_half_width, cfg.iterations)
    return cfg


def _quantified(ctx, labels, cfg):
    defs = quantify(labels, cfg)
    _, traces = bnd.boundary_traces(labels, ctx.config.hough, ctx.config.seed)
    return {c: bnd.mark_on_boundary(v, traces, labels.mask(1)) for c, v in defs.items()}


def cmd_quantify(ctx, a):
    cfg = _analysis(ctx, a)
    meta = load_meta(a.meta)
    labels = load_label_image(a.labels, pixel_size=meta.pixel_size)
    defs = _quantified(ctx, labels, cfg)
    other = None
    if a.versus is not None:
        vm = load_meta(a.versus_meta) if a.versus_meta else meta
        other = _quantified(ctx, load_label_image(a.versus, pixel_size=vm.pixel_size), cfg)
    out = ctx.out_path(a.out, "defects.csv")
    rows = []
    for c, v in defs.items():
        for d in v:
            cx, cy = d.centroid
            rows.append({"class": c.label, "area_um2": d.area, "centroid_x_um": cx, "centroid_y_um": cy,
                         "bbox": " ".join(str(b) for b in d.bbox), "on_boundary": d.on_boundary})
    report.write_text(out, report.csv_text(("class", "area_um2", "centroid_x_um", "centroid_y_um", "bbox",
                                            "on_boundary"), rows))
    stats = {"image_id": meta.image_id, "seed": ctx.config.seed, "area_threshold_um2": cfg.area_threshold,
             "map_area_um2": labels.area_um2, "classes": {}}
    for c, v in defs.items():
        n_on, n = bnd.on_boundary_counts(v)
        entry = {"stats": defect_stats(v, labels.area_um2).to_json(), "n_on_boundary": n_on}
        if n:
            entry["one_sample"] = bnd.one_sample_prop_test(n_on, n).to_json()
            entry["one_sample_uncorrected"] = bnd.one_sample_prop_test(n_on, n, continuity=False).to_json()
        if other is not None:
            o_on, o_n = bnd.on_boundary_counts(other[c])
            entry["versus"] = {"n_on": o_on, "N": o_n}
            if n and o_n:
                entry["two_sample_p"] = bnd.two_sample_prop_test(n_on, n, o_on, o_n)
                entry["two_sample_p_uncorrected"] = bnd.two_sample_prop_test(n_on, n, o_on, o_n, False)
        stats["classes"][c.label] = entry
    ctx.say(f"wrote {out}")
    ctx.emit_json(stats, out.with_suffix(".json"))


def cmd_boxiou(ctx, a):
    cfg = _analysis(ctx, a)
    ps = _pixel_size(a.meta)
    t = quantify(load_label_image(a.truth, pixel_size=ps), cfg)
    p = quantify(load_label_image(a.pred, pixel_size=ps), cfg)
    ctx.emit_json(box_iou_summary(t, p) | {"seed": ctx.config.seed}, a.out)


def cmd_ripley(ctx, a):
    rs = ctx.config.ripley
    kw = {k: getattr(a, k) for k in ("sims", "quantile", "correction") if getattr(a, k) is not None}
    cfg = pipeline.replace(ctx.config, ripley=pipeline.replace(rs, **kw))
    classes = [parse_class(c.strip()) for c in a.classes.split(",") if c.strip()]
    if any(c not in DEFECT_CLASSES for c in classes):
        raise DataError("--classes must list defect classes")
    meta = load_meta(a.meta)
    labels = load_label_image(a.labels, pixel_size=meta.pixel_size)
    defs = quantify(labels, cfg.analysis)
    curves = pipeline.ripley_curves(defs, labels.width * meta.pixel_size, labels.height * meta.pixel_size,
                                    cfg, classes)
    out = ctx.out_path(a.out, "ripley_curves.csv")
    rows = [{"seed": cfg.seed, **row} for c in curves for row in c.rows()]
    report.write_text(out, report.csv_text(("seed", "combination", "radius_um", "k", "h", "env_lo", "env_hi",
                                            "verdict"), rows))
    ctx.say(f"wrote {out}")
    if a.svg is not None:
        report.write_text(a.svg, report.ripley_strip_svg(f"Ripley H verdicts, {meta.image_id}", curves))
        ctx.say(f"wrote {a.svg}")


def cmd_prop_test(ctx, a):
    cont = not a.no_continuity
    res = bnd.one_sample_prop_test(a.on, a.total, continuity=cont).to_json()
    if (a.on2 is None) != (a.total2 is None):
        raise UsageError("--on2 and --total2 go together")
    if a.on2 is not None:
        res["two_sample_p"] = bnd.two_sample_prop_test(a.on, a.total, a.on2, a.total2, cont)
        res["two_sample_significant"] = res["two_sample_p"] < bnd.ALPHA
    res["continuity"] = cont
    ctx.emit_json(res, None)


def cmd_calibrate(ctx, a):
    cs = ctx.config.calibration
    if a.action == "fit":
        scores = load_score_stack(a.scores)
        truth = load_label_image(a.truth)
        model = cal.fit_calibration(scores, truth, a.k or cs.k)
        a.out.parent.mkdir(parents=True, exist_ok=True)
        model.save(a.out)
        ctx.say(f"wrote {a.out} (n_all={model.n_all.tolist()}, n_correct={model.n_correct.tolist()})")
        return
    model = cal.CalibrationModel.load(a.model)
    scores = load_score_stack(a.scores)
    res = cal.apply_calibration(model, scores, _pixel_size(a.meta))
    tau = cs.tau if a.tau is None else a.tau
    out = {"seed": ctx.config.seed, "tau": tau, "trials_used": res.trials_used,
           "uncalibratable": [int(c) for c in res.uncalibratable],
           "mean_confidence": float(res.confidence.mean()),
           "retained_fraction": float(np.mean(res.confidence >= tau))}
    if a.truth is not None:
        truth = load_label_image(a.truth, pixel_size=res.predicted.pixel_size)
        out["unthresholded"] = evaluate_pixels(truth, res.predicted).to_json()
        out["thresholded"] = cal.thresholded_metrics(res.predicted, res.confidence, truth, tau).to_json()
    if a.confidence_png is not None:
        Image.fromarray(res.confidence_png()).save(a.confidence_png)
        ctx.say(f"wrote {a.confidence_png}")
    ctx.emit_json(out, a.out)


def cmd_synth(ctx, a):
    out = ctx.config.out_dir
    synth.write_dataset(out, a.n_images, ctx.config.seed, (a.height, a.width))
    if a.scores:
        for i in range(a.n_images):
            d = out / f"img{i + 1:02d}"
            pred = load_label_image(d / f"pred_{synth.MODELS[0]['model']}.png")
            save_score_stack(synth.synth_scores(pred, a.trials, seed=ctx.config.seed + i), d / "scores.mqss")
    ctx.say(f"wrote synthetic dataset to {out}")


def cmd_report(ctx, a):
    cfg = ctx.config
    if a.dataset is not None:
        cfg = pipeline.replace(cfg, dataset=a.dataset)
    bundle = pipeline.run_pipeline(cfg)
    ctx.say(f"report for {len(bundle.image_ids)} images written to {cfg.out_dir}")


COMMANDS = {"prep": cmd_prep, "eval-pixels": cmd_eval_pixels, "quantify": cmd_quantify, "boxiou": cmd_boxiou,
            "ripley": cmd_ripley, "prop-test": cmd_prop_test, "calibrate": cmd_calibrate, "synth": cmd_synth,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](_Ctx(args), args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"microquant: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, (DataError, OSError)) else EXIT_INTERNAL
    except (DataError, OSError) as exc:
        print(f"microquant: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MicroquantError as exc:
        print(f"microquant: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"microquant: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
