"""Command-line front end: simulate, render, eval, compare-sweep, volume-dump.

Every subcommand accepts ``--config run.json``. Values are layered as
defaults < config file < ``MPCVIEW_OUTPUT_DIR`` (output directory only) <
explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io, scenes
from .aggregate import DensityParams
from .errors import ConfigError, FormatError, RejectedInput
from .experiments import COLUMNS, case_from_frame, compare_sweep, evaluate_case, summarize
from .metrics import MetricReport, discontinuity_band, evaluate_view, flicker, psnr
from .pipeline import PhaseTimer, RenderOptions, render_view
from .render import temporal_average
from .simulator import Bundle, Motion, Scene, SensorModel, capture_sequence

log = logging.getLogger("mpcview")

OUTPUT_ENV = "MPCVIEW_OUTPUT_DIR"
SLANT_SUITE = "slant-sweep"
SUITE_FILE = "suite.json"


class UsageError(Exception):
    pass


# --- configuration --------------------------------------------------------

RENDER_KEYS = ("volume", "offsets", "sweep_planes", "sweep_step", "splat_radius", "highres",
               "highres_splat_radius", "window", "sampling", "fill")
DENSITY_KEYS = ("s", "tau", "min_views", "eps_occ")


def load_config(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path}: {e.msg} at byte {e.pos}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    return doc


def merged(args, config):
    """Flags that were given explicitly win over config values."""
    out = dict(config)
    density = dict(out.pop("density", {}) or {})
    render = dict(out.pop("render", {}) or {})
    for key, value in vars(args).items():
        if value is None or key in ("func", "config"):
            continue
        if key in DENSITY_KEYS:
            density[key] = value
        elif key in RENDER_KEYS:
            render[key] = value
        else:
            out[key] = value
    out["render"] = render
    out["density"] = density
    if "output" not in vars(args) or args.output is None:
        env = os.environ.get(OUTPUT_ENV)
        if env:
            out["output"] = env
    return out


def render_options(cfg) -> RenderOptions:
    r = dict(cfg.get("render", {}))
    for key in ("offsets", "fill"):
        if key in r:
            r[key] = tuple(float(x) for x in r[key])
    r["density"] = DensityParams(**cfg.get("density", {}))
    return RenderOptions.from_dict(r)


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _require(cfg, key, flag):
    if cfg.get(key) is None:
        raise UsageError(f"{flag} is required (or set {key!r} in the config file)")
    return cfg[key]


def _output_dir(cfg):
    out = Path(_require(cfg, "output", "--output"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create output directory {out}: {e.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _clean_number(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


# --- simulate -------------------------------------------------------------

def _scene_source(cfg):
    """(scene, rig, sensor, num_frames, motion) from a preset name or scene JSON."""
    source = _require(cfg, "scene", "--scene")
    width, height = int(cfg.get("width", scenes.WIDTH)), int(cfg.get("height", scenes.HEIGHT))
    seed = int(cfg.get("seed", 0))
    if isinstance(source, str) and source.startswith("preset:"):
        p = scenes.preset(source.split(":", 1)[1], width, height, seed)
        scene, rig, sensor, frames, motion = p.scene, p.rig, p.sensor, p.num_frames, p.motion
    else:
        doc = source if isinstance(source, dict) else load_config(source)
        scene = Scene.from_dict(doc)
        rig_doc = doc.get("rig")
        if rig_doc is None:
            rig = scenes.desk_rig(width=width, height=height)
        elif isinstance(rig_doc, str):
            base = Path(source).parent if isinstance(source, str) else Path(".")
            rig = io.read_rig(base / rig_doc)
        else:
            rig = io.rig_from_dict(rig_doc)
        sensor = SensorModel.from_dict(doc.get("sensor", {"preset": "default"}))
        frames = int(doc.get("num_frames", 1))
        m = doc.get("motion")
        motion = Motion(int(m["primitive"]), tuple(m["velocity"])) if m else None
    if cfg.get("sensor") is not None:
        s = cfg["sensor"]
        sensor = SensorModel.from_dict({"preset": s} if isinstance(s, str) else s)
    sensor = SensorModel.from_dict({**sensor.to_dict(), "seed": seed})
    if cfg.get("frames") is not None:
        frames = int(cfg["frames"])
    if frames < 1:
        raise UsageError("--frames must be at least 1")
    return scene, rig, sensor, frames, motion


def cmd_simulate(cfg):
    out = _output_dir(cfg)
    source = _require(cfg, "scene", "--scene")
    if source == f"preset:{SLANT_SUITE}":
        return _simulate_slant_suite(cfg, out)
    scene, rig, sensor, frames, motion = _scene_source(cfg)
    seq = capture_sequence(scene, rig, sensor, frames, motion)
    io.write_sequence(out, seq, {"scene": scene.to_dict(), "sensor": sensor.to_dict()})
    log.info("wrote %d frames x %d views to %s", frames, len(seq.input_cameras), out)
    return 0


def _simulate_slant_suite(cfg, out):
    angles = cfg.get("angles") or list(scenes.SLANT_ANGLES)
    width, height = int(cfg.get("width", scenes.WIDTH)), int(cfg.get("height", scenes.HEIGHT))
    for angle in angles:
        scene, rig = scenes.slant_case(angle, width, height)
        sub = dict(cfg, scene=f"preset:slant-{angle}")
        _, _, sensor, _, _ = _scene_source(sub)
        seq = capture_sequence(scene, rig, sensor, 1)
        io.write_sequence(out / f"angle_{angle:02d}", seq,
                          {"scene": scene.to_dict(), "sensor": sensor.to_dict(), "angle": angle})
    _write_json(out / SUITE_FILE, {"angles": list(angles)})
    log.info("wrote slant suite (%d angles) to %s", len(angles), out)
    return 0


# --- render ---------------------------------------------------------------

def _render_frame(task):
    root, t, options_dict, save_volumes, out = task
    options = RenderOptions.from_dict(options_dict)
    rig = io.read_rig(io.SequenceLayout(root).rig)
    inputs = [c for c in rig if c.role == "input"]
    targets = [c for c in rig if c.role != "input"]
    frame = io.read_frame(root, t, inputs, targets)
    bg = _read_background(root, inputs)
    depths = [frame.inputs.depths[c.id] for c in inputs]
    colors = [frame.inputs.colors[c.id] for c in inputs]
    results = []
    for g, novel in enumerate(targets):
        timer = PhaseTimer()
        start = time.perf_counter()
        r = render_view(inputs, depths, colors, novel, options,
                        bg and [bg.depths[c.id] for c in inputs], bg and [bg.colors[c.id] for c in inputs], timer)
        fdir = Path(out) / "frames" / str(t)
        fdir.mkdir(parents=True, exist_ok=True)
        io.write_pfm(fdir / f"weight_{g}.pfm", r.blend.weight_map)
        io.write_pfm(fdir / f"depth_{g}.pfm", r.blend.peak_depth)
        if r.image_highres is not None:
            io.write_ppm(fdir / f"render_{g}_highres.ppm", np.clip(r.image_highres, 0, 1))
            io.write_pfm(fdir / f"weight_{g}_highres.pfm", r.blend_highres.weight_map)
        if save_volumes:
            io.write_volume(fdir / f"volume_{g}.mpcv", r.volume)
            io.write_volume(fdir / f"features_{g}.fcv", r.features)
            io.write_volume(fdir / f"costs_{g}.fcv", r.costs)
            io.write_volume(fdir / f"density_{g}.fcv", r.density)
        gt = frame.groundtruth.colors.get(novel.id)
        score = psnr(r.image, gt) if gt is not None else None
        results.append({"camera": novel.id, "image": r.image, "timing": dict(timer.totals),
                        "seconds": time.perf_counter() - start, "psnr": score})
    return t, results


def _read_background(root, inputs):
    lay = io.SequenceLayout(root)
    if not lay.background(0, "pfm").exists():
        return None
    bg = Bundle()
    for k, cam in enumerate(inputs):
        bg.depths[cam.id] = io.read_pfm(lay.background(k, "pfm")).astype(np.float64)
        bg.colors[cam.id] = io.read_ppm(lay.background(k, "ppm"))
    return bg


def _pool_map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def cmd_render(cfg):
    root = Path(_require(cfg, "sequence", "--sequence"))
    options = render_options(cfg)
    out = _output_dir(cfg)
    meta = io.read_meta(root)
    n = int(meta.get("num_frames", 0))
    frames = cfg.get("frames_subset") or list(range(n))
    io.read_sequence(root, frames=[])  # validates rig, meta and directory layout
    tasks = [(str(root), t, options.to_dict(), bool(cfg.get("save_volumes")), str(out)) for t in frames]
    results = dict(_pool_map(_render_frame, tasks, int(cfg.get("jobs", 1))))

    cams = [r["camera"] for r in results[frames[0]]] if frames else []
    timing_rows = []
    for g, cam in enumerate(cams):
        images = [results[t][g]["image"] for t in frames]
        if options.window > 1:
            images = temporal_average(images, options.window)
        for t, img in zip(frames, images):
            fdir = out / "frames" / str(t)
            io.write_ppm(fdir / f"render_{g}.ppm", np.clip(img, 0, 1))
            io.write_pfm(fdir / f"render_{g}.pfm", img.astype(np.float32))
            res = results[t][g]
            row = {"frame": t, "camera": cam, "total": res["seconds"], **res["timing"]}
            timing_rows.append(row)
            log.info("frame %d %s: %.2fs (%s)%s", t, cam, res["seconds"],
                     ", ".join(f"{k} {v:.2f}s" for k, v in res["timing"].items()),
                     "" if res["psnr"] is None else f", PSNR {res['psnr']:.2f} dB")
    _write_timing(out, timing_rows)
    _write_json(out / "run_config.json", {"sequence": str(root), "render": _options_doc(options),
                                          "density": options.density.to_dict(), "frames": frames})
    return 0


def _options_doc(options):
    d = options.to_dict()
    d.pop("density")
    return d


def _write_timing(out, rows):
    if not rows:
        return
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(out / "timing.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    totals = {}
    for r in rows:
        for k, v in r.items():
            if k not in ("frame", "camera", "total"):
                totals[k] = totals.get(k, 0.0) + v
    from .plotting import plot_timing
    plot_timing(totals, out / "timing.png")


# --- eval -----------------------------------------------------------------

def cmd_eval(cfg):
    root = Path(_require(cfg, "sequence", "--sequence"))
    renders = Path(_require(cfg, "renders", "--renders"))
    out = _output_dir(cfg)
    seq = io.read_sequence(root)
    targets = seq.target_cameras
    if not targets:
        raise UsageError("sequence has no ground-truth cameras")
    report = MetricReport()
    rows = []
    images = {cam.id: [] for cam in targets}
    gts = {cam.id: [] for cam in targets}
    for fr in seq.frames:
        fdir = renders / "frames" / str(fr.t)
        for g, cam in enumerate(targets):
            if cam.id not in fr.groundtruth.colors:
                raise UsageError(f"frame {fr.t}: ground truth for {cam.id!r} is missing")
            path = fdir / f"render_{g}.pfm"
            if not path.exists():
                raise UsageError(f"frame {fr.t}: render {path} is missing")
            img = io.read_pfm(path).astype(np.float64)
            # compare at the float32 precision renders are stored with
            gt = fr.groundtruth.colors[cam.id].astype(np.float32).astype(np.float64)
            weight = io.read_pfm(fdir / f"weight_{g}.pfm") if (fdir / f"weight_{g}.pfm").exists() else None
            depth = io.read_pfm(fdir / f"depth_{g}.pfm") if (fdir / f"depth_{g}.pfm").exists() else None
            gt_depth = fr.groundtruth.depths.get(cam.id)
            band = discontinuity_band(gt_depth) if gt_depth is not None else None
            r = evaluate_view(img, gt, weight, depth, gt_depth, band, frame=fr.t, camera=cam.id)
            report.entries += r.entries
            row = {"frame": fr.t, "camera": cam.id}
            row.update({f"{e['metric']}_{e['mask']}": _clean_number(e["value"]) for e in r.entries})
            rows.append(row)
            images[cam.id].append(img)
            gts[cam.id].append(gt)
    # temporal stability on pixels whose ground truth never changes
    if len(seq.frames) >= 2:
        for cam in targets:
            stack = np.stack(gts[cam.id])
            static = np.all(stack == stack[0], axis=(0, 3))
            if static.any():
                report.add("flicker", flicker(images[cam.id], static), "static", camera=cam.id)
    _aggregate(report, targets)

    report.write_json(out / "report.json")
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(out / "report.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    from .plotting import plot_metric_series
    plot_metric_series(report.entries, "psnr", out / "psnr.png")
    for e in report.entries:
        if e.get("camera") == "mean":
            log.info("%s (%s): %s", e["metric"], e["mask"], _clean_number(e["value"]))
    return 0


def _aggregate(report, targets):
    """Per metric and mask: mean over frames, then over ground-truth cameras."""
    groups = {}
    for e in list(report.entries):
        if "frame" not in e:
            continue
        groups.setdefault((e["metric"], e["mask"]), {}).setdefault(e["camera"], []).append(e["value"])
    for (metric, mask), per_cam in groups.items():
        cam_means = [float(np.mean(v)) for v in per_cam.values()]
        report.add(metric, float(np.mean(cam_means)), mask, camera="mean")
    flick = [e["value"] for e in report.entries if e["metric"] == "flicker"]
    if flick:
        report.add("flicker", float(np.mean(flick)), "static", camera="mean")


# --- compare-sweep --------------------------------------------------------

def cmd_compare_sweep(cfg):
    out = _output_dir(cfg)
    options = render_options(cfg)
    jobs = int(cfg.get("jobs", 1))
    suite = cfg.get("sequence")
    if suite:
        rows = _compare_from_suite(Path(suite), options, jobs, cfg.get("angles"))
    else:
        sensor = SensorModel.from_dict({"preset": cfg.get("sensor") or "default"}) \
            if not isinstance(cfg.get("sensor"), dict) else SensorModel.from_dict(cfg["sensor"])
        rows = compare_sweep(cfg.get("angles") or scenes.SLANT_ANGLES, sensor, options, jobs,
                             int(cfg.get("width", scenes.WIDTH)), int(cfg.get("height", scenes.HEIGHT)))
    with open(out / "coverage.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _clean_number(r[k]) for k in COLUMNS})
    summary = {"nearest": summarize(rows), "extent": summarize(rows, column="extent_coverage")}
    _write_json(out / "summary.json", summary)
    from .plotting import plot_coverage
    plot_coverage(rows, out / "coverage.png")
    for r in rows:
        log.info("%2d deg: coverage mpc %.3f sweep %.3f | extent mpc %.3f sweep %.3f | PSNR mpc %.2f sweep %.2f",
                 r["angle"], r["coverage_mpc"], r["coverage_sweep"], r["extent_coverage_mpc"],
                 r["extent_coverage_sweep"], r["psnr_mpc"], r["psnr_sweep"])
    ok = summary["nearest"]["ordering"]
    print(f"MPC >= sweep coverage at every angle: {'yes' if ok else 'no'}"
          + ("" if ok else f" (fails at {summary['nearest']['failing_angles']})"))
    return 1 if cfg.get("strict") and not ok else 0


def _suite_case(task):
    path, angle, options_dict = task
    seq = io.read_sequence(path)
    novel = seq.target_cameras[0]
    case = case_from_frame(angle, seq.input_cameras, seq.frames[0], novel)
    return evaluate_case(case, RenderOptions.from_dict(options_dict))


def _compare_from_suite(root, options, jobs, angles=None):
    if not (root / SUITE_FILE).exists():
        raise UsageError(f"{root} is not a slant suite (no {SUITE_FILE})")
    suite = json.loads((root / SUITE_FILE).read_text())
    angles = angles or suite["angles"]
    tasks = [(str(root / f"angle_{a:02d}"), a, options.to_dict()) for a in angles]
    return _pool_map(_suite_case, tasks, jobs)


# --- volume-dump ----------------------------------------------------------

def cmd_volume_dump(cfg):
    path = Path(_require(cfg, "volume_file", "--volume-file"))
    vol = io.read_volume(path)
    info = {"file": str(path), "type": type(vol).__name__}
    if hasattr(vol, "depths"):
        d = vol.layers
        ok = vol.layer_valid
        info.update(shape=list(vol.depths.shape), offsets=list(vol.offsets), valid_fraction=float(ok.mean()),
                    depth_range=[float(d[ok].min()), float(d[ok].max())] if ok.any() else None)
        data = d
    else:
        info.update(shape=list(vol.values.shape), min=float(vol.values.min()), max=float(vol.values.max()))
        data = vol.values
    print(json.dumps(info, indent=2))
    layer = cfg.get("layer")
    if layer is not None:
        if not 0 <= layer < data.shape[0]:
            raise UsageError(f"--layer must lie in [0, {data.shape[0]})")
        out = _output_dir(cfg)
        sl = data[layer]
        io.write_pfm(out / f"{path.stem}_layer{layer}.pfm", sl if sl.ndim == 2 or sl.shape[-1] == 3 else sl[..., 0])
    return 0


# --- entry point ----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="mpcview", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, output=True):
        sp.add_argument("--config", help="JSON run configuration; explicit flags override it")
        sp.add_argument("--jobs", type=int, help="worker processes (output does not depend on it)")
        if output:
            sp.add_argument("-o", "--output", help=f"output directory (env {OUTPUT_ENV} overrides the config value)")

    def render_flags(sp):
        sp.add_argument("--volume", choices=("mpc", "sweep"))
        sp.add_argument("--offsets", type=_floats, help="MPC offsets in meters, e.g. -0.01,0,0.01")
        sp.add_argument("--sweep-planes", type=int)
        sp.add_argument("--sweep-step", type=float)
        sp.add_argument("--splat-radius", type=int)
        sp.add_argument("--highres", action="store_true", default=None)
        sp.add_argument("--window", type=int, help="temporal averaging window (odd)")
        sp.add_argument("--sampling", choices=("bilinear", "nearest"))
        sp.add_argument("--s", type=float, help="density scale")
        sp.add_argument("--tau", type=float, help="density cost scale")
        sp.add_argument("--min-views", type=int)
        sp.add_argument("--eps-occ", type=float, help="occlusion tolerance in meters")

    s = sub.add_parser("simulate", help="render a synthetic RGBD sequence")
    common(s)
    s.add_argument("--scene", help="scene JSON file or preset:<name> " f"({', '.join(scenes.PRESET_NAMES)})")
    s.add_argument("--frames", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--sensor", help="sensor preset name (identity, default, strong)")
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--angles", type=_ints, help="slant-suite angles in degrees")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("render", help="render every ground-truth view of a sequence")
    common(r)
    r.add_argument("--sequence")
    r.add_argument("--frames-subset", type=_ints, help="only render these frame indices")
    r.add_argument("--save-volumes", action="store_true", default=None)
    render_flags(r)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="score renders against ground truth")
    common(e)
    e.add_argument("--sequence")
    e.add_argument("--renders")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare-sweep", help="MPC versus novel-view sweep on the slant suite")
    common(c)
    c.add_argument("--sequence", help="slant suite written by 'simulate --scene preset:slant-sweep'")
    c.add_argument("--angles", type=_ints)
    c.add_argument("--sensor", help="sensor preset when simulating in memory")
    c.add_argument("--width", type=int)
    c.add_argument("--height", type=int)
    c.add_argument("--strict", action="store_true", default=None, help="exit 1 if the coverage ordering fails")
    render_flags(c)
    c.set_defaults(func=cmd_compare_sweep)

    d = sub.add_parser("volume-dump", help="summarize a volume file")
    common(d)
    d.add_argument("volume_file", nargs="?")
    d.add_argument("--layer", type=int, help="export this layer as PFM into the output directory")
    d.set_defaults(func=cmd_volume_dump)
    return p


def _args_without_defaults(args):
    # Unset flags stay None so config values are not clobbered.
    return argparse.Namespace(**{k: v for k, v in vars(args).items() if k not in ("verbose", "command")})


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    func = args.func
    try:
        cfg = merged(_args_without_defaults(args), load_config(args.config))
        if cfg.get("jobs") is not None and int(cfg["jobs"]) < 1:
            raise UsageError("--jobs must be at least 1")
        return func(cfg)
    except UsageError as e:
        parser.exit(2, f"mpcview {args.command}: error: {e}\n")
    except (ConfigError, RejectedInput, FormatError, OSError) as e:
        log.error("%s failed: %s", args.command, e)
        _cleanup_partial(cfg if "cfg" in locals() else {}, args.command)
        return 1


def _cleanup_partial(cfg, command):
    # A failed run leaves a marker instead of silently half-written outputs.
    out = cfg.get("output")
    if out and Path(out).is_dir():
        (Path(out) / "FAILED").write_text(f"{command} did not complete\n")


if __name__ == "__main__":
    sys.exit(main())
