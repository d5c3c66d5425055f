"""Command-line entry point: ``radarsense <command> ...``.

Commands: generate, train, calibrate, evaluate, infer, experiment.
A checkpoint directory holds ``radyolo.rsnn``, ``wavelet.rsnn`` and their
``*.calib.json`` calibration sidecars.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import capture_io
from .evaluation import (EXPERIMENTS, Example, ExperimentSpec, ModelConfig, compute_metrics,
                         evaluate_detector, flow1_only, run_experiment, save_experiment,
                         slice_tables, ExperimentResult, build_experiment)
from .radyolo import (RadYoloModel, calibrate, load_calibration, save_calibration,
                      train_radyolo)
from .spectro_pre import annotate_grid, make_spectrogram
from .wavelet_cnn import (WaveletModel, calibrate_tw, load_wavelet_calibration,
                          save_wavelet_calibration, train_waveletcnn)
from .wavelet_pre import make_wavelet_stack

log = logging.getLogger("radarsense")

RADYOLO_CKPT = "radyolo.rsnn"
WAVELET_CKPT = "wavelet.rsnn"


def _calib_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.stem + ".calib.json")


def _read_split(data_dir: Path, split: str):
    """(capture, annotation) pairs stored by ``generate``, in file order."""
    files = sorted((data_dir / split).glob("*.meta"))
    if not files:
        raise SystemExit(f"no captures under {data_dir / split}")
    for f in files:
        cap, ann, _ = capture_io.read_capture(f)
        yield cap, ann


def cmd_generate(args) -> int:
    spec = ExperimentSpec(args.experiment, args.scale, args.test_total, seed=args.seed)
    train, test = build_experiment(spec)
    out = Path(args.out)
    for split, examples in (("train", train), ("test", test)):
        for e in examples:
            cap, ann = e.synthesize()
            capture_io.write_capture(out / split / f"{e.index:06d}", cap, ann,
                                     extra={"example": e.to_dict()})
    (out / "manifest.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    print(f"wrote {len(train)} train and {len(test)} test captures to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    data = Path(args.data)
    if args.flow == "radyolo":
        pairs = [(make_spectrogram(c), annotate_grid(a)) for c, a in _read_split(data, "train")]
        model = train_radyolo(pairs, cfg.loss, cfg.radyolo_epochs, cfg.seed, lr=cfg.radyolo_lr,
                              batch_size=cfg.radyolo_batch_size, arch=cfg.radyolo_arch,
                              lr_final=cfg.radyolo_lr_final)
    else:
        pairs = [(make_wavelet_stack(c), a.has_radar) for c, a in _read_split(data, "train")]
        model = train_waveletcnn(pairs, cfg.wavelet_epochs, cfg.seed, lr=cfg.wavelet_lr,
                                 batch_size=cfg.wavelet_batch_size, arch=cfg.wavelet_arch)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    print(f"saved {args.flow} checkpoint to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    from .nn_core import checkpoint

    ckpt = Path(args.ckpt)
    flow = checkpoint.read_header(ckpt)["meta"].get("flow")
    data = Path(args.data)
    if flow == "radyolo":
        model = RadYoloModel.load(ckpt)
        pairs = [(make_spectrogram(c), annotate_grid(a)) for c, a in _read_split(data, "train")]
        stats = calibrate(model, pairs)
        save_calibration(_calib_path(ckpt), stats)
        print(json.dumps({"t_o": stats.t_o, "t_o_w": stats.t_o_w, **stats.to_dict()}))
    elif flow == "wavelet":
        model = WaveletModel.load(ckpt)
        pairs = [(make_wavelet_stack(c), a.has_radar) for c, a in _read_split(data, "train")]
        cal = calibrate_tw(model, pairs, args.g)
        save_wavelet_calibration(_calib_path(ckpt), cal)
        print(json.dumps(cal.to_dict()))
    else:
        raise SystemExit(f"{ckpt}: unknown checkpoint flow {flow!r}")
    return 0


def load_detector(ckpt_dir, with_flow2: bool = True):
    from .pipeline import Detector

    d = Path(ckpt_dir)
    ry = RadYoloModel.load(d / RADYOLO_CKPT)
    stats = load_calibration(_calib_path(d / RADYOLO_CKPT))
    wav = cal = None
    if with_flow2 and (d / WAVELET_CKPT).exists():
        wav = WaveletModel.load(d / WAVELET_CKPT)
        cal = load_wavelet_calibration(_calib_path(d / WAVELET_CKPT))
    return Detector(ry, stats, wav, cal)


def cmd_evaluate(args) -> int:
    det = load_detector(args.ckpt_dir)
    if args.data:
        data = Path(args.data)
        spec = ExperimentSpec.from_dict(json.loads((data / "manifest.json").read_text()))
        metas = sorted((data / "test").glob("*.meta"))
        test = [Example.from_dict(capture_io.read_capture(m)[2]["example"]) for m in metas]
    else:
        spec = ExperimentSpec(args.experiment, test_total=args.test_total, seed=args.seed)
        _, test = build_experiment(spec)
    decisions, truths = evaluate_detector(det, test)
    result = ExperimentResult(spec, det, decisions, truths, test)
    for system, decs in (("radyololet", decisions),
                         ("radyolo", [flow1_only(d) for d in decisions])):
        result.reports[system] = compute_metrics(decs, truths)
        result.tables[system] = slice_tables(decs, test, truths, spec)
    save_experiment(result, args.out)
    print(json.dumps(result.report.to_dict(), indent=2))
    return 0


def cmd_infer(args) -> int:
    from .pipeline import run_stream

    det = load_detector(args.ckpt_dir)
    path = Path(args.input)
    if path.with_suffix(".meta").exists():
        cap, _, _ = capture_io.read_capture(path)
    else:
        cap = capture_io.read_raw_iq(path, args.sample_rate)
    for d in run_stream(cap, det, use_flow2=det.has_flow2):
        print(json.dumps(d.to_dict(), sort_keys=True))
    return 0


def cmd_experiment(args) -> int:
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    spec = ExperimentSpec(args.experiment, args.scale, args.test_total, seed=args.seed)
    res = run_experiment(spec, cfg, out_dir=args.out)
    out = Path(args.out)
    res.detector.radyolo.save(out / RADYOLO_CKPT)
    save_calibration(_calib_path(out / RADYOLO_CKPT), res.detector.stats)
    if res.detector.has_flow2:
        res.detector.wavelet.save(out / WAVELET_CKPT)
        save_wavelet_calibration(_calib_path(out / WAVELET_CKPT), res.detector.wavelet_cal)
    print(json.dumps(res.report.to_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radarsense", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize an experiment's train/test captures")
    g.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    g.add_argument("--scale", type=int, default=100, help="training captures per stratum")
    g.add_argument("--test-total", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one flow's network on generated data")
    t.add_argument("--flow", choices=("radyolo", "wavelet"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON file of ModelConfig fields")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="compute thresholds and write the calibration sidecar")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--g", type=float, default=5.0, help="wavelet threshold percentile")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint directory on a test split")
    e.add_argument("--experiment", choices=EXPERIMENTS, default="E1")
    e.add_argument("--ckpt-dir", required=True)
    e.add_argument("--data", help="directory written by generate (default: synthesize)")
    e.add_argument("--test-total", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("infer", help="decide every 16 ms window of a capture")
    i.add_argument("--input", required=True, help=".iq file (with .meta sidecar, or raw)")
    i.add_argument("--ckpt-dir", required=True)
    i.add_argument("--sample-rate", type=float, default=10e6)
    i.set_defaults(func=cmd_infer)

    x = sub.add_parser("experiment", help="build, train, calibrate and evaluate in one go")
    x.add_argument("--experiment", choices=EXPERIMENTS, default="E1")
    x.add_argument("--scale", type=int, default=100)
    x.add_argument("--test-total", type=int, default=200)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--config")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
