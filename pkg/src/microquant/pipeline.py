"""End-to-end run over a dataset directory: metrics, defects, boundaries, Ripley, reports."""
from __future__ import annotations

import configparser
import itertools
import json
import shutil
import tempfile
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import boundary as bnd
from . import report as rep
from .defects import AnalysisConfig, defect_stats, quantify, box_iou_summary
from .errors import DataError, MicroquantError, StageError
from .metrics import average_across_images, class_metrics, confusion, overall_score
from .raster import CLASS_NAMES, CONDITIONS, DEFECT_CLASSES, class_counts, load_label_image, load_meta
from .spatial import CORRECTIONS, N_RADII, PointPattern, default_radii, ripley_curve


@dataclass(frozen=True)
class RipleySettings:
    sims: int = 1000
    quantile: float = 0.99
    correction: str = "translation"
    n_radii: int = N_RADII

    def __post_init__(self):
        if self.sims < 1 or not 0.5 <= self.quantile < 1 or self.n_radii < 2:
            raise DataError("invalid ripley settings")
        if self.correction not in CORRECTIONS:
            raise DataError(f"correction must be one of {CORRECTIONS}")


@dataclass(frozen=True)
class CalibrationSettings:
    k: int = 10
    tau: float = 0.95
    trials: int = 10


@dataclass(frozen=True)
class RunConfig:
    dataset: Path | None = None
    out_dir: Path = Path("microquant-out")
    seed: int = 0
    analysis: AnalysisConfig = AnalysisConfig()
    hough: bnd.HoughParams = bnd.HoughParams()
    ripley: RipleySettings = RipleySettings()
    calibration: CalibrationSettings = CalibrationSettings()


_SECTIONS = {"analysis": AnalysisConfig, "hough": bnd.HoughParams,
             "ripley": RipleySettings, "calibration": CalibrationSettings}


def bundled_dataset() -> Path:
    return Path(str(resources.files("microquant") / "data" / "synth3"))


def load_config(path=None, **overrides) -> RunConfig:
    """Read an INI file with sections [run], [analysis], [hough], [ripley], [calibration]."""
    cfg = RunConfig()
    if path is not None:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        if not cp.read(path):
            raise DataError(f"cannot read config file {path}")
        unknown = set(cp.sections()) - set(_SECTIONS) - {"run"}
        if unknown:
            raise DataError(f"unknown config sections: {', '.join(sorted(unknown))}")
        kw = {}
        if cp.has_section("run"):
            run = cp["run"]
            for key in run:
                if key not in ("dataset", "out_dir", "seed"):
                    raise DataError(f"unknown key [run] {key}")
            if "dataset" in run:
                kw["dataset"] = Path(run["dataset"])
            if "out_dir" in run:
                kw["out_dir"] = Path(run["out_dir"])
            if "seed" in run:
                kw["seed"] = run.getint("seed")
        for name, cls in _SECTIONS.items():
            if cp.has_section(name):
                kw[name] = _section(cls, cp[name], name)
        cfg = replace(cfg, **kw)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides)


def _section(cls, sec, name):
    types = {f.name: f.type for f in fields(cls)}
    kw = {}
    for key, raw in sec.items():
        if key not in types:
            raise DataError(f"unknown key [{name}] {key}")
        t = types[key]
        try:
            kw[key] = int(raw) if t in ("int", int) else float(raw) if t in ("float", float) else raw
        except ValueError as exc:
            raise DataError(f"[{name}] {key}: {exc}") from exc
    return cls(**kw)


@dataclass
class ReportBundle:
    seed: int
    image_ids: list
    performance_by_image: list = field(default_factory=list)
    performance: list = field(default_factory=list)
    images: list = field(default_factory=list)
    pixel_proportions: list = field(default_factory=list)
    defect_table: list = field(default_factory=list)
    boundary_table: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"seed": self.seed, "image_ids": self.image_ids, "images": self.images,
                "performance": self.performance, "performance_by_image": self.performance_by_image,
                "pixel_proportions": self.pixel_proportions, "defect_stats": self.defect_table,
                "boundary_tests": self.boundary_table}


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, StageError):
            raise StageError(self.name, ev) from ev
        return False


def read_manifest(dataset: Path) -> dict:
    try:
        m = json.loads((dataset / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{dataset}: no manifest.json") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{dataset}/manifest.json: {exc}") from exc
    if not m.get("images"):
        raise DataError("manifest lists no images")
    return m


def analyze_image(dataset: Path, image_id: str, models, cfg: RunConfig) -> dict:
    d = dataset / image_id
    with _Stage(f"load:{image_id}"):
        meta = load_meta(d / "meta.json")
        truth = load_label_image(d / "truth.png", pixel_size=meta.pixel_size)
    rec = {"image_id": image_id, "condition": meta.condition, "pixel_size_um": meta.pixel_size,
           "area_um2": truth.area_um2, "width": truth.width, "height": truth.height}
    with _Stage(f"defects:{image_id}"):
        tdef = quantify(truth, cfg.analysis)
    perf = []
    with _Stage(f"metrics:{image_id}"):
        for m in models:
            pred = load_label_image(d / m["file"], pixel_size=meta.pixel_size)
            cm = class_metrics(confusion(truth, pred))
            box = box_iou_summary(tdef, quantify(pred, cfg.analysis))["macro"]
            row = {"image_id": image_id, "model": m["model"], "optimizer": m["optimizer"], "loss": m["loss"],
                   "precision": cm.macro["precision"], "recall": cm.macro["recall"],
                   "f_d": cm.macro["f_d"], "iou": cm.macro["iou"], **box}
            row["avg"] = overall_score(row["f_d"], row["iou"], row["box_a"])
            perf.append(row)
    with _Stage(f"boundary:{image_id}"):
        segs, traces = bnd.boundary_traces(truth, cfg.hough, cfg.seed)
        bmask = truth.mask(1)
        tdef = {c: bnd.mark_on_boundary(v, traces, bmask) for c, v in tdef.items()}
    rec["n_boundary_segments"] = len(segs)
    rec["proportions"] = class_counts(truth)[1]
    rec["defects"] = {c.label: {**defect_stats(v, truth.area_um2).to_json(),
                                "n_on_boundary": bnd.on_boundary_counts(v)[0]} for c, v in tdef.items()}
    with _Stage(f"ripley:{image_id}"):
        rec["_curves"] = ripley_curves(tdef, truth.width * meta.pixel_size, truth.height * meta.pixel_size, cfg)
    rec["_defects"] = tdef
    return rec, perf


def ripley_curves(defects_by_class: dict, width_um: float, height_um: float, cfg: RunConfig, classes=None):
    """Univariate curves for classes with >= 2 defects, bivariate for pairs with >= 1 each."""
    rs = cfg.ripley
    radii = default_radii(width_um, height_um, rs.n_radii)
    classes = list(DEFECT_CLASSES if classes is None else classes)
    pats = {}
    for c in classes:
        cents = np.array([d.centroid for d in defects_by_class.get(c, [])]).reshape(-1, 2)
        pats[c] = PointPattern.from_points(cents, width_um, height_um)
    out = []
    for c in classes:
        if pats[c].n >= 2:
            out.append(ripley_curve(pats[c], None, radii, rs.sims, rs.quantile, cfg.seed, rs.correction, c.label))
    for a, b in itertools.combinations(classes, 2):
        if pats[a].n >= 1 and pats[b].n >= 1:
            out.append(ripley_curve(pats[a], pats[b], radii, rs.sims, rs.quantile, cfg.seed, rs.correction,
                                    f"{a.label}-{b.label}"))
    return out


def build_bundle(dataset: Path, cfg: RunConfig) -> ReportBundle:
    manifest = read_manifest(dataset)
    ids = sorted(manifest["images"])
    models = manifest.get("models", [])
    bundle = ReportBundle(cfg.seed, ids)
    records = []
    for image_id in ids:
        rec, perf = analyze_image(dataset, image_id, models, cfg)
        records.append(rec)
        bundle.performance_by_image.extend(perf)
    with _Stage("aggregate"):
        for m in models:
            rows = [r for r in bundle.performance_by_image if r["model"] == m["model"]]
            means, _ = average_across_images([{k: r[k] for k in rep.METRIC_KEYS[:-1]} for r in rows])
            means["avg"] = overall_score(means["f_d"], means["iou"], means["box_a"])
            bundle.performance.append({k: m[k] for k in ("model", "optimizer", "loss")} | means)
        _aggregate_conditions(bundle, records)
        for r in records:
            bundle.curves[r["image_id"]] = r.pop("_curves")
            r.pop("_defects")
            r["ripley"] = {c.label: {v: int(np.sum(c.verdicts == v)) for v in ("clustered", "dispersed", "neither")}
                           for c in bundle.curves[r["image_id"]]}
        bundle.images = records
    return bundle


def _aggregate_conditions(bundle: ReportBundle, records):
    by_cond = {c: [r for r in records if r["condition"] == c] for c in CONDITIONS}
    for cond, recs in by_cond.items():
        if not recs:
            continue
        for name in CLASS_NAMES:
            mean, std, ci = bnd.proportion_summary([r["proportions"][name] for r in recs])
            bundle.pixel_proportions.append({"condition": cond, "class": name, "n_images": len(recs),
                                             "mean": mean, "std": std, "ci_half": ci})
        area = sum(r["area_um2"] for r in recs)
        for c in DEFECT_CLASSES:
            pooled = [d for r in recs for d in r["_defects"][c]]
            st = defect_stats(pooled, area)
            bundle.defect_table.append({"condition": cond, "class": c.label, "n": st.n, "mean_area": st.mean_area,
                                        "std_area": st.std_area, "ci_half": st.ci_half_width,
                                        "density": st.density})
    counts = {}
    for cond, recs in by_cond.items():
        for c in DEFECT_CLASSES:
            counts[cond, c] = bnd.on_boundary_counts(d for r in recs for d in r["_defects"][c])
    for c in DEFECT_CLASSES:
        (a_on, a_n), (b_on, b_n) = counts["irradiated", c], counts["unirradiated", c]
        p2 = bnd.two_sample_prop_test(a_on, a_n, b_on, b_n) if a_n and b_n else float("nan")
        for cond in CONDITIONS:
            n_on, n = counts[cond, c]
            if n == 0:
                continue
            t = bnd.one_sample_prop_test(n_on, n)
            bundle.boundary_table.append({"condition": cond, "class": c.label, "n_on": n_on, "n_in": n - n_on,
                                          "N": n, "proportion": t.proportion, "ci_half": t.ci_half_width,
                                          "p_one_sample": t.p_value, "significant_one_sample": t.significant,
                                          "p_two_sample": p2, "significant_two_sample": p2 < bnd.ALPHA})


def emit_tables(bundle: ReportBundle, out: Path) -> list:
    files = [
        rep.write_text(out / "performance.csv", rep.performance_csv(bundle.performance)),
        rep.write_text(out / "performance_by_image.csv", rep.performance_csv(bundle.performance_by_image, True)),
        rep.write_text(out / "pixel_proportions.csv",
                       rep.csv_text(("condition", "class", "n_images", "mean", "std", "ci_half"),
                                    bundle.pixel_proportions)),
        rep.write_text(out / "defect_stats.csv",
                       rep.csv_text(("condition", "class", "n", "mean_area", "std_area", "ci_half", "density"),
                                    bundle.defect_table)),
        rep.write_text(out / "boundary_tests.csv",
                       rep.csv_text(("condition", "class", "n_on", "n_in", "N", "proportion", "ci_half",
                                     "p_one_sample", "significant_one_sample", "p_two_sample",
                                     "significant_two_sample"), bundle.boundary_table)),
        rep.write_text(out / "ripley_curves.csv",
                       rep.csv_text(("image_id", "combination", "radius_um", "k", "h", "env_lo", "env_hi",
                                     "verdict"),
                                    [{"image_id": i, **row} for i in bundle.image_ids
                                     for c in bundle.curves.get(i, []) for row in c.rows()])),
        rep.write_text(out / "report.json", rep.dumps_json(bundle.to_json())),
    ]
    return files


def emit_plots(bundle: ReportBundle, out: Path) -> list:
    files = []
    defect_names = [c.label for c in DEFECT_CLASSES]

    def bars(rows, value, err, classes):
        got, notes = [], []
        for cond in CONDITIONS:
            for name in classes:
                hit = [r for r in rows if r["condition"] == cond and r["class"] == name]
                if not hit or (value != "mean" and hit[0].get("n", hit[0].get("N", 1)) == 0):
                    notes.append(f"{cond} {name}: no defects")
                    continue
                got.append((f"{cond[:5]} {name}", hit[0][value], hit[0][err] if err else float("nan")))
        return got, notes

    b, n = bars(bundle.pixel_proportions, "mean", "ci_half", defect_names)
    files.append(rep.write_text(out / "fig_pixel_proportions.svg",
                                rep.bar_chart_svg("Defect pixel proportion", b, "proportion", n)))
    b, n = bars(bundle.defect_table, "mean_area", "ci_half", defect_names)
    files.append(rep.write_text(out / "fig_defect_area.svg",
                                rep.bar_chart_svg("Mean defect area", b, "area (um^2)", n)))
    b, n = bars(bundle.defect_table, "density", None, defect_names)
    files.append(rep.write_text(out / "fig_defect_density.svg",
                                rep.bar_chart_svg("Defect density", b, "defects per um^2", n)))
    b, n = bars(bundle.boundary_table, "proportion", "ci_half", defect_names)
    files.append(rep.write_text(out / "fig_on_boundary.svg",
                                rep.bar_chart_svg("Defects on grain boundaries", b, "proportion", n)))
    for i in bundle.image_ids:
        files.append(rep.write_text(out / f"fig_ripley_{i}.svg",
                                    rep.ripley_strip_svg(f"Ripley H verdicts, {i}", bundle.curves.get(i, []))))
    return files


def run_pipeline(cfg: RunConfig) -> ReportBundle:
    """Run every stage and write outputs into ``cfg.out_dir``.

    Outputs are staged in a scratch directory and moved into place only
    after every stage succeeded, so a failure leaves no partial files.
    """
    dataset = Path(cfg.dataset) if cfg.dataset is not None else bundled_dataset()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        bundle = build_bundle(dataset, cfg)
        with _Stage("emit"):
            files = emit_tables(bundle, scratch) + emit_plots(bundle, scratch)
        for f in files:
            f.replace(out / f.name)
    except MicroquantError:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        raise StageError("pipeline", exc) from exc
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return bundle
