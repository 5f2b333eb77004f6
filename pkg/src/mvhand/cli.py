"""Command line entry point: ``mvhand <subcommand> ...``.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure.
``MVHAND_SEED`` overrides the default seed of data generation and training.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import align, checkpoint, config, losses, metrics, model, synthdata, trainer
from . import diffcore as dc
from . import triangulate as tri
from .camera import load_rig

log = logging.getLogger("mvhand")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
SEED_ENV = "MVHAND_SEED"
MODES = ("single", "interact", "fusion")

# one entry per ablation row: (section, field) pairs switched off
SWITCHES = {
    "vsf": [("model", "use_vsf")],
    "cva": [("model", "use_cva")],
    "g1": [("model", "use_g1")],
    "g2": [("model", "use_g2")],
    "g3": [("model", "use_g3")],
    "dcvi": [("model", "use_dcvi")],
    "l_c2d": [("loss", "use_c2d")],
    "l_cf": [("loss", "use_cf")],
    "l_c": [("loss", "use_c2d"), ("loss", "use_cf")],
    "l_d": [("loss", "use_d")],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def _env_seed():
    seed = os.environ.get(SEED_ENV)
    if seed is None:
        return None
    try:
        return int(seed)
    except ValueError:
        raise config.ConfigError(f"{SEED_ENV}: expected an integer, got {seed!r}") from None


def _load_cfg(path, overrides=()):
    """Defaults, then the env seed, then the config file, then ``--set`` overrides."""
    d = config.ExperimentConfig().to_dict()
    seed = _env_seed()
    if seed is not None:
        d["data"]["seed"] = d["train"]["seed"] = seed
    if path is not None:
        for section, values in config.read_config_file(_existing(path, "config")).items():
            if section not in d or not isinstance(values, dict):
                raise config.ConfigError(f"{section}: unknown config section")
            d[section].update(values)
    for item in overrides:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects section.field=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        d.setdefault(section, {})[name] = value
    return config.ExperimentConfig.from_dict(d)


def _existing(path, what):
    if path is None or not Path(path).exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _args_hash(args, *files):
    """Hash of the parsed arguments and input file contents, for outputs without an experiment config."""
    h = hashlib.sha256(json.dumps({k: str(v) for k, v in sorted(vars(args).items()) if k != "func"}).encode())
    for f in files:
        if f is not None:
            h.update(Path(f).read_bytes())
    return h.hexdigest()[:16]


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _write_rows(path, columns, rows, config_hash):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _dataset_for(cfg, data_path):
    if data_path is not None:
        return synthdata.load_dataset(_existing(data_path, "dataset"))
    return synthdata.generate_dataset(cfg.rig, cfg.noise, cfg.data.num_samples, cfg.data.seed)


# ------------------------------------------------------------------ reports


def evaluation_report(pred, data, cfg, views, mode):
    """Metric report for one inference run. ``pred`` covers exactly the ``views`` subset of ``data``."""
    gt = data.gt_camera_frame()[:, views]
    per_mode = {
        "single": (pred.single, gt),
        "interact": (pred.refined, gt),
        "fusion": (pred.fused[:, None], gt[:, :1]),
    }
    table = {m: metrics.batch_nmpjpe(p.reshape(-1, 21, 3), g.reshape(-1, 21, 3)) for m, (p, g) in per_mode.items()}
    p, g = per_mode[mode]
    detail = metrics.summarize(p.reshape(-1, 21, 3), g.reshape(-1, 21, 3))
    twod = pred.single2d if mode == "single" else pred.refined2d
    return {
        "config_hash": cfg.hash(),
        "mode": mode,
        "views": [int(v) for v in views],
        "num_samples": int(len(data)),
        "nmpjpe_table": table,
        "metrics": detail,
        "pixel_error": metrics.pixel_error(twod, data.gt2d[:, views]),
        "label_pixel_error": metrics.pixel_error(data.labels[:, views], data.gt2d[:, views]),
    }


def _eval_split(data, cfg, split):
    if split == "all":
        return data
    tr, te = data.split(cfg.data.holdout_fraction)
    return data.subset(te if split == "test" else tr)


def run_eval(params, cfg, data, views=None, mode="fusion", split="test"):
    data = _eval_split(data, cfg, split)
    V = data.num_views
    views = list(range(V)) if views is None else list(views)
    sub = data.select_views(views)
    cams = sub.cams if cfg.train.use_extrinsics else None
    pred = model.predict(params, sub.labels, sub.conf, cfg.model, cams)
    return evaluation_report(pred, data, cfg, views, mode)


# ------------------------------------------------------------------ subcommands


def cmd_gen_data(args):
    cfg = _load_cfg(args.config, args.set)
    ds = synthdata.generate_dataset(cfg.rig, cfg.noise, cfg.data.num_samples, cfg.data.seed)
    synthdata.save_dataset(ds, args.out)
    log.info("wrote %d timesteps x %d views to %s", len(ds), ds.num_views, args.out)
    return EXIT_OK


def _train_and_save(cfg, data, out, dump_graph=None):
    if dump_graph:
        _dump_graph(cfg, data, dump_graph)
    res, test = trainer.run(cfg, data)
    out = Path(out)
    checkpoint.save_checkpoint(res.params, out, cfg.hash(), {"config": cfg.to_dict(), "steps": res.steps})
    trainer.write_csv(res.metric_log, trainer.METRIC_COLUMNS, out.with_suffix(".metrics.csv"))
    trainer.write_csv(res.step_log, trainer.STEP_COLUMNS, out.with_suffix(".steps.csv"))
    return res, test


def _dump_graph(cfg, data, path):
    """Loss graph of the first training batch in the first non-warmup phase."""
    b = min(cfg.train.batch_timesteps, len(data))
    p = model.new_params(cfg.model, cfg.train.seed).leaves()
    phase = losses.FULL if cfg.train.main_epochs and not cfg.train.warmup_only else losses.WARMUP
    total, _, _ = trainer.compute_losses(p, data.labels[:b], data.conf[:b], cfg, phase, 0, data.cams)
    Path(path).write_text(dc.graph_to_json(total))


def cmd_train(args):
    cfg = _load_cfg(args.config, args.set)
    data = synthdata.load_dataset(_existing(args.data, "dataset"))
    res, _ = _train_and_save(cfg, data, args.out, args.dump_graph)
    if res.metric_log:
        last = res.metric_log[-1]
        log.info("final: single %.2f interact %.2f fusion %.2f mm", last["single_nmpjpe"],
                 last["refined_nmpjpe"], last["fused_nmpjpe"])
    return EXIT_OK


def _load_ckpt(path):
    params, header = checkpoint.load_checkpoint(_existing(path, "checkpoint"))
    cfg = config.ExperimentConfig.from_dict(header["extra"]["config"])
    return params, cfg


def _parse_views(spec, V):
    if spec is None:
        return None
    if "," in spec:
        views = [int(v) for v in spec.split(",")]
    else:
        n = int(spec)
        if not 1 <= n <= V:
            raise UsageError(f"--views must be in 1..{V}")
        views = list(range(n))
    if not views or any(not 0 <= v < V for v in views) or len(set(views)) != len(views):
        raise UsageError(f"--views: invalid view list {spec!r} for {V} views")
    return views


def cmd_eval(args):
    params, cfg = _load_ckpt(args.ckpt)
    data = synthdata.load_dataset(_existing(args.data, "dataset"))
    views = _parse_views(args.views, data.num_views)
    _write_json(run_eval(params, cfg, data, views, args.mode, args.split), args.out)
    return EXIT_OK


def cmd_ablate(args):
    if args.switch not in SWITCHES:
        raise UsageError(f"--switch must be one of {', '.join(SWITCHES)}")
    cfg = _load_cfg(args.config, args.set)
    off = {}
    for section, name in SWITCHES[args.switch]:
        off.setdefault(section, {})[name] = False
    ablated = config.replace(cfg, **off)
    data = _dataset_for(cfg, args.data)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = [("ablated", ablated)] + ([("full", cfg)] if args.baseline else [])
    report = {"switch": args.switch, "config_hash": ablated.hash()}
    for name, c in runs:
        res, test = _train_and_save(c, data, out_dir / f"{name}.ckpt")
        table = run_eval(res.params, c, test, split="all")["nmpjpe_table"]
        report[name] = {"config_hash": c.hash(), "nmpjpe_table": table}
    _write_json(report, out_dir / "report.json")
    _write_json(report, None)
    return EXIT_OK


def _points_2d(rows, V):
    ts = sorted({int(r["t"]) for r in rows})
    index = {t: i for i, t in enumerate(ts)}
    K = 1 + max(int(r["joint"]) for r in rows)
    pts = np.full((len(ts), K, V, 2), np.nan)
    for r in rows:
        v = int(r["view"])
        if not 0 <= v < V:
            raise UsageError(f"view {v} outside the {V}-camera rig")
        pts[index[int(r["t"])], int(r["joint"]), v] = (float(r["u"]), float(r["v"]))
    return ts, pts


def _points_3d(rows):
    ts = sorted({int(r.get("t", 0)) for r in rows})
    index = {t: i for i, t in enumerate(ts)}
    K = 1 + max(int(r["joint"]) for r in rows)
    X = np.full((len(ts), K, 3), np.nan)
    for r in rows:
        X[index[int(r.get("t", 0))], int(r["joint"])] = (float(r["x"]), float(r["y"]), float(r["z"]))
    return ts, X


def cmd_triangulate(args):
    cams = load_rig(_existing(args.rig, "rig"))
    ts, pts = _points_2d(_read_rows(_existing(args.preds, "predictions")), len(cams))
    if np.isnan(pts).any():
        raise UsageError("predictions must cover every (t, joint, view)")
    N, K = pts.shape[:2]
    if args.method == "dlt":
        X = tri.dlt_many(pts.reshape(N * K, len(cams), 2), cams).reshape(N, K, 3)
    elif args.method == "ransac":
        seed = args.seed if args.seed is not None else (_env_seed() or 0)
        X = np.stack([np.stack([tri.ransac_triangulate(pts[n, k], cams, args.threshold, args.iterations,
                                                       seed=seed)[0] for k in range(K)]) for n in range(N)])
    else:
        if args.skeleton is None:
            raise UsageError("--method opt-center needs --skeleton")
        sts, skel = _points_3d(_read_rows(_existing(args.skeleton, "skeleton")))
        if len(sts) == 1:
            skel = np.repeat(skel, N, axis=0)
        elif sts != ts:
            raise UsageError("--skeleton timesteps do not match --preds")
        X = np.empty((N, K, 3))
        for n in range(N):
            fit = tri.opt_center(skel[n], pts[n].transpose(1, 0, 2), cams)
            X[n] = fit.center + skel[n] - skel[n, 0]
    h = _args_hash(args, args.preds, args.rig, args.skeleton)
    rows = [(t, k, *X[n, k]) for n, t in enumerate(ts) for k in range(K)]
    _write_rows(args.out, ["t", "joint", "x", "y", "z"], rows, h)
    return EXIT_OK


def cmd_metrics(args):
    pts, pred = _points_3d(_read_rows(_existing(args.preds, "predictions")))
    gts, gt = _points_3d(_read_rows(_existing(args.gt, "ground truth")))
    if pts != gts or pred.shape != gt.shape:
        raise UsageError("predictions and ground truth must cover the same (t, joint) pairs")
    if np.isnan(pred).any() or np.isnan(gt).any():
        raise UsageError("missing joints in the input CSVs")
    h = _args_hash(args, args.preds, args.gt)
    report = {"config_hash": h, "num_samples": len(pts)}
    report.update(metrics.summarize(pred, gt))
    _write_json(report, args.out)
    if args.curve:
        errs = metrics.per_joint_errors(pred, gt).ravel()
        taus, pck = metrics.pck_curve(errs, args.max_threshold, args.steps)
        _write_rows(args.curve, ["threshold_mm", "pck"], zip(taus, pck), h)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser():
    p = _Parser(prog="mvhand", description="Multi-view collaborative hand pose toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp, required=False):
        sp.add_argument("--config", required=required, help="TOML or JSON experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                        help="override one config field (repeatable)")

    g = sub.add_parser("gen-data", help="generate a synthetic multi-view dataset")
    with_config(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train and write checkpoint plus metric and step CSVs")
    with_config(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path; CSVs are written next to it")
    t.add_argument("--dump-graph", metavar="JSON", help="write the first batch's loss graph as JSON")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="JSON metric report for a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--views", help="number of leading views, or a comma separated view list")
    e.add_argument("--mode", choices=MODES, default="fusion")
    e.add_argument("--split", choices=("test", "train", "all"), default="test")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("triangulate", help="calibrated 3D joints from per-view 2D predictions")
    r.add_argument("--method", choices=("dlt", "ransac", "opt-center"), required=True)
    r.add_argument("--preds", required=True, help="CSV with t,view,joint,u,v")
    r.add_argument("--rig", required=True, help="rig JSON")
    r.add_argument("--skeleton", help="CSV with [t,]joint,x,y,z root-relative world skeleton (opt-center)")
    r.add_argument("--threshold", type=float, default=2.0, help="RANSAC inlier threshold (px)")
    r.add_argument("--iterations", type=int, default=100)
    r.add_argument("--seed", type=int, help=f"RANSAC seed (default: ${SEED_ENV} or 0)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_triangulate)

    a = sub.add_parser("ablate", help="train and evaluate with one component switched off")
    with_config(a)
    a.add_argument("--switch", required=True, help=", ".join(SWITCHES))
    a.add_argument("--data", help="dataset file (default: generate from the config)")
    a.add_argument("--out-dir", default="ablation")
    a.add_argument("--baseline", action="store_true", help="also train the unablated model")
    a.set_defaults(func=cmd_ablate)

    m = sub.add_parser("metrics", help="3D metric report and PCK curve from CSVs")
    m.add_argument("--preds", required=True, help="CSV with t,joint,x,y,z (meters)")
    m.add_argument("--gt", required=True)
    m.add_argument("--out")
    m.add_argument("--curve", help="write the PCK curve CSV here")
    m.add_argument("--max-threshold", type=float, default=50.0)
    m.add_argument("--steps", type=int, default=100)
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, config.ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(e, (tri.TriangulationError, align.DegenerateError)) else EXIT_USAGE
    except (trainer.DivergenceError, tri.ConsensusError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
