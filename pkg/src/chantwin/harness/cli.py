"""``chantwin`` command line: scene tracing, datasets, training, evaluation and plots."""

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from ..errors import ParseError, ValidationError
from ..nn import checkpoint
from ..ray.cir import paths_to_cir
from ..ray.materials import MATERIALS_ENV
from ..ray.scene import load_demo_scene, load_scene
from ..ray.tracer import TraceConfig, trace_many
from ..twin import dataset as dsio
from ..twin.corrector import KINDS, evaluate_cases, train_corrector
from . import studies
from .config import SCENARIOS, ExperimentConfig, scenario_defaults
from .plot import emit_plot
from .results import ResultWriter

log = logging.getLogger("chantwin")

# reference values of the published measurement campaign, printed next to desk-scale results
PUBLISHED_CASES = (8.2392, -21.2773)


class ArtifactError(FileNotFoundError):
    """An input file the command needs does not exist."""


def _need(path):
    if path is None or not os.path.exists(path):
        raise ArtifactError(f"missing artifact: {path}")
    return path


def _write_text(path, text):
    dsio.atomic_write(path, text.encode())


def _digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def sidecar_path(ckpt):
    return ckpt + ".json"


def load_config(args):
    if getattr(args, "config", None):
        cfg = ExperimentConfig.load(_need(args.config))
    else:
        cfg = scenario_defaults(getattr(args, "scenario", None) or "ray_count_study", getattr(args, "desk", False))
    return cfg.override(getattr(args, "set", None) or [])


# --------------------------------------------------------------------------
# commands


def cmd_defaults(args):
    cfg = scenario_defaults(args.scenario, args.desk)
    text = cfg.dumps()
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_scene_trace(args):
    scene = load_scene(_need(args.scene)) if args.scene else load_demo_scene()
    rx = np.asarray([args.rx]) if args.rx else np.asarray([scene.rx])
    cfg = TraceConfig(ray_count=args.rays, max_reflections=args.max_reflections, seed=args.seed)
    paths = trace_many(scene, cfg, rx)[0]
    lines = ["delay_ns,power_db,phase_rad,azimuth_deg,elevation_deg,trace"]
    for i in range(len(paths)):
        a = paths.amplitude[i]
        trace = ";".join(f"{k}:{s}" for k, s in paths.trace(i)) or "los"
        lines.append(f"{paths.delay[i] * 1e9:.4f},{20 * np.log10(abs(a)):.3f},{np.angle(a):.4f},"
                     f"{np.degrees(paths.azimuth[i]):.3f},{np.degrees(paths.elevation[i]):.3f},{trace}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    if args.taps:
        res = paths_to_cir(paths, ExperimentConfig().array_config(), 30.72e6, args.taps)
        for t, row in enumerate(res.cir.taps):
            print(f"antenna {t}: " + " ".join(f"{abs(v):.3e}" for v in row), file=sys.stderr)


def cmd_dataset_build(args):
    cfg = load_config(args)
    out = args.out or cfg.dataset
    res = studies.build_corrector_dataset(cfg)
    dsio.save(res.dataset, out)
    np.save(out + ".kept.npy", res.kept)
    print(f"wrote {out}: {res.dataset.meta.realizations} realizations from {len(res.kept)} positions")


def cmd_dataset_scale(args):
    ds = dsio.load(_need(args.input))
    scaled, factor = dsio.scale_dataset(ds)
    dsio.save(scaled, args.output)
    if os.path.exists(args.input + ".kept.npy"):
        dsio.atomic_write(args.output + ".kept.npy", open(args.input + ".kept.npy", "rb").read())
    print(f"wrote {args.output}: scale factor {factor!r}")


def cmd_train(args):
    cfg = load_config(args)
    path = _need(args.dataset or cfg.dataset)
    ds = dsio.load(path)
    ccfg = cfg.corrector_config()
    out = args.out or (cfg.checkpoint if args.kind == "encoder_decoder" else cfg.mlp_checkpoint)
    res = train_corrector(ds, ccfg, args.kind)
    dsio.atomic_write(out, checkpoint.dumps(res.model))
    train_positions = np.nonzero(dsio.split_mask(ds.meta.seed, ds.meta.samples, ds.meta.split))[0]
    side = {"kind": args.kind, "dataset_sha256": _digest(path), "split_seed": ds.meta.seed,
            "split": ds.meta.split, "samples": ds.meta.samples, "train_positions": train_positions.tolist(),
            "scale_factor": ds.meta.scale_factor, "best_epoch": res.best_epoch, "stopped": res.stopped}
    _write_text(sidecar_path(out), json.dumps(side, sort_keys=True) + "\n")
    log_lines = ["epoch,train_mse,validation_mse"] + [f"{e.epoch},{e.train_mse!r},{e.validation_mse!r}"
                                                      for e in res.history]
    _write_text(out + ".log.csv", "\n".join(log_lines) + "\n")
    print(f"wrote {out}: best epoch {res.best_epoch}, {res.stopped}")


def check_leakage(ds, side):
    """Raise if any evaluation position was used for training."""
    test = np.nonzero(~dsio.split_mask(ds.meta.seed, ds.meta.samples, ds.meta.split))[0]
    overlap = np.intersect1d(test, np.asarray(side.get("train_positions", []), dtype=np.int64))
    if overlap.size:
        raise ValidationError(f"split leakage: {overlap.size} held-out positions were used for training "
                              f"(first {overlap[:5].tolist()})")


def nmse_report(ds_path, ckpt_path):
    ds = dsio.load(_need(ds_path))
    model = checkpoint.load(_need(ckpt_path))
    side_path = sidecar_path(ckpt_path)
    if os.path.exists(side_path):
        with open(side_path) as fh:
            side = json.load(fh)
        if side.get("dataset_sha256") != _digest(ds_path):
            log.warning("checkpoint was trained on a different dataset file; checking positions only")
        check_leakage(ds, side)
    else:
        log.warning("no training record next to %s; leakage cannot be checked", ckpt_path)
    return evaluate_cases(ds, model)


def format_report(rep):
    csv = ("case,nmse_db,ratio_db,published_db,realizations\n"
           f"case1,{rep.case1!r},{rep.case1_ratio_db!r},{PUBLISHED_CASES[0]!r},{rep.realizations}\n"
           f"case2,{rep.case2!r},{rep.case2_ratio_db!r},{PUBLISHED_CASES[1]!r},{rep.realizations}\n")
    table = (f"{'':8}{'NMSE (dB)':>12}{'published':>12}\n"
             f"{'Case 1':8}{rep.case1:12.4f}{PUBLISHED_CASES[0]:12.4f}\n"
             f"{'Case 2':8}{rep.case2:12.4f}{PUBLISHED_CASES[1]:12.4f}\n"
             f"({rep.realizations} held-out realizations; published values come from measured channels)\n")
    return csv, table


def cmd_eval_nmse(args):
    cfg = load_config(args)
    rep = nmse_report(args.dataset or cfg.dataset, args.checkpoint or cfg.checkpoint)
    csv, table = format_report(rep)
    if args.out:
        _write_text(args.out, csv)
    sys.stdout.write(table)


def _corrector(ckpt):
    """Model plus the dataset scale factor recorded when it was trained."""
    model = checkpoint.load(_need(ckpt))
    with open(_need(sidecar_path(ckpt))) as fh:
        return model, float(json.load(fh)["scale_factor"])


def sweep_channels(cfg):
    """Channel set for ``cfg.scenario``; the corrector study needs trained checkpoints."""
    base = studies.base_scene(cfg)
    if cfg.scenario != "corrector_study":
        return studies.build_channels(cfg, base.route_points(cfg.positions), base=base)
    kept = np.load(_need(cfg.dataset + ".kept.npy"))
    correctors = {"corrected": _corrector(cfg.checkpoint)}
    if cfg.mlp_checkpoint and os.path.exists(cfg.mlp_checkpoint):
        correctors["corrected-mlp"] = _corrector(cfg.mlp_checkpoint)
    return studies.build_channels(cfg, studies.held_out_positions(cfg, kept, base), correctors, base)


def cmd_eval_ber(args):
    cfg = load_config(args)
    channels = sweep_channels(cfg)
    for name, v in channels.nmse_db().items():
        print(f"NMSE {name}: {v:.3f} dB")
    writer = ResultWriter(args.out or cfg.output)
    rows = studies.run_ber_sweep(cfg, channels, writer)
    print(f"{len(rows)} new rows in {writer.path}")


def cmd_plot(args):
    with open(_need(args.csv)) as fh:
        svg = emit_plot(fh.read(), args.title)
    _write_text(args.out, svg)


# --------------------------------------------------------------------------
# parser


def _add_config(p):
    p.add_argument("--config", help="JSON experiment config (see `chantwin defaults`)")
    p.add_argument("--scenario", choices=SCENARIOS, help="start from this scenario's defaults when no config is given")
    p.add_argument("--desk", action="store_true", help="use the reduced tier ladder with the scenario defaults")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (JSON value)")


def build_parser():
    ap = argparse.ArgumentParser(prog="chantwin", description=__doc__,
                                 epilog=f"Materials registry: ${MATERIALS_ENV} overrides the bundled file.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("defaults", help="print a scenario's default config as JSON")
    p.add_argument("--scenario", choices=SCENARIOS, default="ray_count_study")
    p.add_argument("--desk", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_defaults)

    scene = sub.add_parser("scene", help="scene utilities").add_subparsers(dest="scene_command", required=True)
    p = scene.add_parser("trace", help="trace one tx-rx link and list the paths")
    p.add_argument("--scene", help="scene file; the bundled demo scene when omitted")
    p.add_argument("--rx", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--rays", type=int, default=100000)
    p.add_argument("--max-reflections", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--taps", type=int, default=0, help="also print per-antenna tap magnitudes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_scene_trace)

    data = sub.add_parser("dataset", help="paired CIR datasets").add_subparsers(dest="dataset_command",
                                                                              required=True)
    p = data.add_parser("build", help="trace twin and oracle truth over the dataset positions")
    _add_config(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dataset_build)
    p = data.add_parser("scale", help="apply the global max-abs scaling")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_dataset_scale)

    p = sub.add_parser("train", help="train a corrector on a scaled dataset")
    _add_config(p)
    p.add_argument("--dataset")
    p.add_argument("--kind", choices=KINDS, default="encoder_decoder")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluation").add_subparsers(dest="eval_command", required=True)
    p = ev.add_parser("nmse", help="Case 1 / Case 2 NMSE on the held-out split")
    _add_config(p)
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="CSV output")
    p.set_defaults(func=cmd_eval_nmse)
    p = ev.add_parser("ber", help="BER sweep for the configured scenario")
    _add_config(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_ber)

    p = sub.add_parser("plot", help="SVG chart of a results CSV")
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="BER vs SNR")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ArtifactError, ValidationError, ParseError) as exc:
        print(f"chantwin: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
