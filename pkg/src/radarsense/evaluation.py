"""Experiment datasets, detection/estimation metrics and report tables."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .geometry import intersection_length, merge_intervals, union_length
from .radyolo import LossHyper, calibrate, train_radyolo
from .signal_synth import (BAND_HZ, INR_GRID_DB, SNR_GRID_DB, WINDOW_S, Annotation,
                           InterferenceKind, IQCapture, radar_band_edges, rng_for,
                           sample_interference_params, sample_radar_params, scale_and_mix,
                           synth_interference, synth_radar)
from .spectro_pre import annotate_grid, cell_of, make_spectrogram

log = logging.getLogger(__name__)

EXPERIMENTS = ("E1", "E2A", "E2B", "E3", "E4A", "E4B")
# experiments whose test sets are evaluated with another experiment's models
TRAINED_ON = {"E1": "E1", "E2A": "E1", "E2B": "E1", "E3": "E3", "E4A": "E3", "E4B": "E3"}
TRAIN_KINDS = {
    "E1": (InterferenceKind.QPSK_ON, InterferenceKind.QPSK_ON_OFF),
    "E3": (InterferenceKind.OFDM_FDD, InterferenceKind.OFDM_TDD),
}
TEST_KIND = {
    "E2A": InterferenceKind.QPSK_ON, "E2B": InterferenceKind.QPSK_ON_OFF,
    "E4A": InterferenceKind.OFDM_FDD, "E4B": InterferenceKind.OFDM_TDD,
}
TRAIN_STRATA = ("radar", "awgn", "interference", "radar+interference")
RADAR_TYPES = (1, 2, 3, 4, 5)


@dataclass
class ExperimentSpec:
    id: str = "E1"
    train_per_stratum: int = 100
    test_total: int = 200
    snr_grid: tuple = SNR_GRID_DB
    inr_grid: tuple = INR_GRID_DB
    seed: int = 0
    radar_types: tuple = RADAR_TYPES
    # optional restrictions of the radar examples in the test split
    test_radar_types: tuple | None = None
    test_snr_grid: tuple | None = None

    def __post_init__(self):
        if self.id not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.id!r}; expected one of {EXPERIMENTS}")
        if self.train_per_stratum <= 0 or self.test_total <= 0:
            raise ValueError("stratum counts must be positive")
        for name in ("snr_grid", "inr_grid", "radar_types"):
            val = tuple(getattr(self, name))
            if not val:
                raise ValueError(f"{name} must not be empty")
            setattr(self, name, val)
        for name in ("test_radar_types", "test_snr_grid"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, tuple(val))

    @property
    def base(self) -> str:
        return TRAINED_ON[self.id]

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)


@dataclass(frozen=True)
class Example:
    """Recipe for one labeled capture; :meth:`synthesize` is deterministic."""

    split: str
    index: int
    stratum: str
    seed: int
    radar_type: int | None = None
    snr_db: float | None = None
    kind: InterferenceKind | None = None
    inr_db: float | None = None

    @property
    def has_radar(self) -> bool:
        return self.radar_type is not None

    @property
    def has_interference(self) -> bool:
        return self.kind is not None

    def synthesize(self) -> tuple[IQCapture, Annotation]:
        radar = interf = None
        fc = None
        ann = Annotation()
        if self.has_radar:
            rp = sample_radar_params(self.radar_type, self.seed, WINDOW_S, snr_db=self.snr_db)
            radar, a = synth_radar(rp)
            fc = sum(radar_band_edges(rp)) / 2
            ann = ann.merged(a)
        if self.has_interference:
            ip = sample_interference_params(self.kind, self.seed, WINDOW_S, inr_db=self.inr_db)
            interf, a = synth_interference(ip, rng_seed=self.seed)
            ann = ann.merged(a)
        cap = scale_and_mix(radar, interf, self.snr_db, self.inr_db, self.seed,
                            radar_center_hz=fc)
        return cap, ann

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value if self.kind is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Example":
        d = dict(d)
        if d.get("kind") is not None:
            d["kind"] = InterferenceKind(d["kind"])
        return cls(**d)


_SPLIT_CODE = {"train": 1, "test": 2}


def _example(spec: ExperimentSpec, split: str, index: int, stratum: str, kinds,
             types, snrs) -> Example:
    rng = rng_for(spec.seed, _SPLIT_CODE[split], index)
    seed = int(rng.integers(0, 2**31 - 1))
    rtype = snr = kind = inr = None
    if "radar" in stratum:
        rtype = int(rng.choice(types))
        snr = float(rng.choice(snrs))
    if "interference" in stratum:
        kind = kinds[int(rng.integers(0, len(kinds)))]
        inr = float(rng.choice(spec.inr_grid))
    return Example(split, index, stratum, seed, rtype, snr, kind, inr)


def build_experiment(spec: ExperimentSpec) -> tuple[list[Example], list[Example]]:
    """(train, test) example recipes.

    Training always follows the base experiment (E1 for E2*, E3 for E4*):
    equal counts of radar, AWGN, interference and radar+interference, the
    interference kind drawn at random from the base experiment's pair. Test
    splits are exactly half radar: radar/AWGN for E1 and E3, radar+X / X
    for the interference experiments.
    """
    base = spec.base
    train = []
    idx = 0
    for stratum in TRAIN_STRATA:
        for _ in range(spec.train_per_stratum):
            train.append(_example(spec, "train", idx, stratum, TRAIN_KINDS[base],
                                  spec.radar_types, spec.snr_grid))
            idx += 1
    types = spec.test_radar_types or spec.radar_types
    snrs = spec.test_snr_grid or spec.snr_grid
    if spec.id in TEST_KIND:
        strata, kinds = ("radar+interference", "interference"), (TEST_KIND[spec.id],)
    else:
        strata, kinds = ("radar", "awgn"), TRAIN_KINDS[base]
    test = [_example(spec, "test", i, strata[i % 2], kinds, types, snrs)
            for i in range(spec.test_total)]
    return train, test


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsReport:
    n: int = 0
    n_radar: int = 0
    n_no_radar: int = 0
    n_interf: int = 0
    n_no_interf: int = 0
    p_c_R: float | None = None
    p_d_R: float | None = None
    p_f_R: float | None = None
    p_c_I: float | None = None
    p_d_I: float | None = None
    p_f_I: float | None = None
    n_est_R: int = 0
    b_M_R: float | None = None  # MHz
    b_E_R: float | None = None  # MHz
    n_P_R: float | None = None  # percent
    e_PW_R: float | None = None  # us
    n_pri_R: int = 0
    e_PI_R: float | None = None  # us
    n_est_I: int = 0
    t_M_I: float | None = None  # ms
    t_E_I: float | None = None  # ms

    def to_dict(self) -> dict:
        return asdict(self)


METRIC_FIELDS = [f.name for f in fields(MetricsReport)]


def _rate(num: int, den: int) -> float | None:
    return num / den if den else None


def _mean(vals) -> float | None:
    vals = list(vals)
    return float(np.mean(vals)) if vals else None


def radar_errors(est, ann: Annotation, window_s: float = WINDOW_S) -> dict:
    """Per-example parameter errors of a radar estimate against its truth."""
    p = ann.radar_truth
    half = BAND_HZ / 2
    f_lo, f_hi = radar_band_edges(p)
    truth = [((f_lo + half) / 1e6, (f_hi + half) / 1e6)]
    est_bands = [(a * BAND_HZ / 1e6, b * BAND_HZ / 1e6) for a, b in est.bands]
    inter = intersection_length(truth, est_bands)
    cells = set(est.cells)
    pulses = ann.radar_boxes
    hit = sum(1 for b in pulses if cell_of(b.y) in cells)
    out = {
        "b_M": union_length(truth) - inter,
        "b_E": union_length(est_bands) - inter,
        "n_P": 100.0 * hit / len(pulses) if pulses else 0.0,
        "e_PW": abs(est.pulse_width_frac * window_s - p.pulse_width_s) * 1e6,
        "e_PI": None,
    }
    if est.pulse_interval_frac is not None:
        out["e_PI"] = abs(est.pulse_interval_frac * window_s - p.pulse_interval_s) * 1e6
    return out


def interference_errors(est, ann: Annotation, window_s: float = WINDOW_S) -> dict:
    truth = merge_intervals((max(0.0, a), min(window_s, b))
                            for a, b in ann.interference_truth.on_off_pattern)
    if not ann.interference_truth.kind.gated and not truth:
        truth = [(0.0, window_s)]
    est_segs = merge_intervals(((y - h / 2) * window_s, (y + h / 2) * window_s)
                               for y, h in est.on_segments)
    inter = intersection_length(truth, est_segs)
    return {"t_M": (union_length(truth) - inter) * 1e3,
            "t_E": (union_length(est_segs) - inter) * 1e3}


def compute_metrics(decisions, truths, window_s: float = WINDOW_S) -> MetricsReport:
    """Detection rates over all examples and estimation errors over true positives.

    Parameter errors are averaged over examples where radar (interference)
    is present, detected, and an estimate exists; the pulse-interval error
    additionally needs an interval estimate (two or more detected pulses).
    """
    decisions, truths = list(decisions), list(truths)
    if len(decisions) != len(truths):
        raise ValueError(f"{len(decisions)} decisions for {len(truths)} truths")
    r = MetricsReport(n=len(truths))
    tp_r = tn_r = fp_r = tp_i = tn_i = fp_i = 0
    rad_err: list[dict] = []
    int_err: list[dict] = []
    for d, a in zip(decisions, truths):
        has_r, has_i = a.has_radar, a.has_interference
        r.n_radar += has_r
        r.n_interf += has_i
        if has_r:
            tp_r += d.radar_present
            if d.radar_present and d.radar_estimate is not None:
                rad_err.append(radar_errors(d.radar_estimate, a, window_s))
        else:
            tn_r += not d.radar_present
            fp_r += d.radar_present
        if has_i:
            tp_i += d.interference_present
            if d.interference_present and d.interference_estimate is not None:
                int_err.append(interference_errors(d.interference_estimate, a, window_s))
        else:
            tn_i += not d.interference_present
            fp_i += d.interference_present
    r.n_no_radar = r.n - r.n_radar
    r.n_no_interf = r.n - r.n_interf
    r.p_c_R = _rate(tp_r + tn_r, r.n)
    r.p_d_R = _rate(tp_r, r.n_radar)
    r.p_f_R = _rate(fp_r, r.n_no_radar)
    r.p_c_I = _rate(tp_i + tn_i, r.n)
    r.p_d_I = _rate(tp_i, r.n_interf)
    r.p_f_I = _rate(fp_i, r.n_no_interf)
    r.n_est_R = len(rad_err)
    r.b_M_R = _mean(e["b_M"] for e in rad_err)
    r.b_E_R = _mean(e["b_E"] for e in rad_err)
    r.n_P_R = _mean(e["n_P"] for e in rad_err)
    r.e_PW_R = _mean(e["e_PW"] for e in rad_err)
    pri = [e["e_PI"] for e in rad_err if e["e_PI"] is not None]
    r.n_pri_R = len(pri)
    r.e_PI_R = _mean(pri)
    r.n_est_I = len(int_err)
    r.t_M_I = _mean(e["t_M"] for e in int_err)
    r.t_E_I = _mean(e["t_E"] for e in int_err)
    return r


# ---------------------------------------------------------------------------
# report tables

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def _table(keys: list[str], rows: list[tuple[tuple, MetricsReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys + METRIC_FIELDS)
    for key, rep in rows:
        d = rep.to_dict()
        w.writerow([_fmt(k) for k in key] + [_fmt(d[f]) for f in METRIC_FIELDS])
    return buf.getvalue()


def slice_tables(decisions, examples, truths, spec: ExperimentSpec) -> dict[str, str]:
    """CSV text for the per-(type, SNR), per-type and per-INR slices and the overall row.

    Radar slices (type, SNR) hold the radar-bearing examples of that cell,
    so their false-positive rates are empty; the per-INR slice holds every
    interference-bearing example at that INR.
    """
    decisions, examples, truths = list(decisions), list(examples), list(truths)
    types = spec.test_radar_types or spec.radar_types
    snrs = spec.test_snr_grid or spec.snr_grid

    def subset(pred):
        idx = [i for i, e in enumerate(examples) if pred(e)]
        return compute_metrics([decisions[i] for i in idx], [truths[i] for i in idx])

    per_snr = [((t, s), subset(lambda e, t=t, s=s: e.radar_type == t and e.snr_db == s))
               for t in types for s in snrs]
    per_type = [((t,), subset(lambda e, t=t: e.radar_type == t)) for t in types]
    per_inr = [((i,), subset(lambda e, i=i: e.has_interference and e.inr_db == i))
               for i in spec.inr_grid]
    overall = [(("all",), compute_metrics(decisions, truths))]
    return {
        "per_snr.csv": _table(["radar_type", "snr_db"], per_snr),
        "per_type.csv": _table(["radar_type"], per_type),
        "per_inr.csv": _table(["inr_db"], per_inr),
        "overall.csv": _table(["slice"], overall),
    }


def write_reports(out_dir, prefix: str, tables: dict[str, str], summary: MetricsReport) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in tables.items():
        (out / f"{prefix}_{name}").write_text(text)
    (out / f"{prefix}_summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# end-to-end

@dataclass
class ModelConfig:
    """Every training and calibration hyperparameter of both flows."""

    seed: int = 0
    radyolo_epochs: int = 60
    radyolo_lr: float = 3e-3
    radyolo_batch_size: int = 8
    radyolo_lr_final: float | None = None  # cosine decay target; None keeps lr fixed
    lambda_coord: float = 5.0
    lambda_obj: float = 1.0
    lambda_nobj: float = 2.0
    lambda_class: float = 1.0
    wavelet_epochs: int = 30
    wavelet_lr: float = 3e-3
    wavelet_batch_size: int = 8
    wavelet_g: float = 5.0
    radyolo_arch: list | None = None
    wavelet_arch: list | None = None

    @property
    def loss(self) -> LossHyper:
        return LossHyper(self.lambda_coord, self.lambda_obj, self.lambda_nobj, self.lambda_class)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Featurized:
    example: Example
    annotation: Annotation
    spectrogram: object
    grid: object = None
    stack: object = None


def featurize(examples, *, grids: bool = True, stacks: bool = False) -> list[Featurized]:
    """Synthesize each example and compute its network features."""
    from .wavelet_pre import make_wavelet_stack

    out = []
    for e in examples:
        cap, ann = e.synthesize()
        out.append(Featurized(e, ann, make_spectrogram(cap),
                              annotate_grid(ann) if grids else None,
                              make_wavelet_stack(cap) if stacks else None))
    return out


def train_detector(train: list[Featurized], config: ModelConfig):
    """Train and calibrate both flows on featurized training data."""
    from .pipeline import Detector
    from .wavelet_cnn import calibrate_tw, train_waveletcnn

    pairs = [(f.spectrogram, f.grid) for f in train]
    ry = train_radyolo(pairs, config.loss, config.radyolo_epochs, config.seed,
                       lr=config.radyolo_lr, batch_size=config.radyolo_batch_size,
                       arch=config.radyolo_arch, lr_final=config.radyolo_lr_final)
    stats = calibrate(ry, pairs)
    wav = cal = None
    if all(f.stack is not None for f in train):
        wpairs = [(f.stack, f.annotation.has_radar) for f in train]
        wav = train_waveletcnn(wpairs, config.wavelet_epochs, config.seed,
                               lr=config.wavelet_lr, batch_size=config.wavelet_batch_size,
                               arch=config.wavelet_arch)
        cal = calibrate_tw(wav, wpairs, config.wavelet_g)
    return Detector(ry, stats, wav, cal)


def flow1_only(d):
    """The grid detector's own decision extracted from a two-flow decision."""
    from .pipeline import Provenance

    if d.flow1_radar or not d.flow2_ran:
        return d
    return replace(d, radar_present=False, radar_estimate=None, provenance=Provenance.FLOW1,
                   flow2_ran=False, wavelet_prob=None)


def evaluate_detector(det, test: list[Example]):
    """Run every test example through the two-flow pipeline."""
    from .pipeline import process_window

    decisions, truths = [], []
    for i, e in enumerate(test):
        cap, ann = e.synthesize()
        d = process_window(cap, det, use_flow2=det.has_flow2, window_index=i)
        decisions.append(d)
        truths.append(ann)
    return decisions, truths


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    detector: object
    decisions: list
    truths: list
    examples: list
    reports: dict = field(default_factory=dict)  # system -> MetricsReport
    tables: dict = field(default_factory=dict)  # system -> {name: csv text}

    @property
    def report(self) -> MetricsReport:
        return self.reports["radyololet"]


def run_experiment(spec: ExperimentSpec, config: ModelConfig = ModelConfig(), out_dir=None,
                   detector=None) -> ExperimentResult:
    """Build data, train and calibrate both flows (unless ``detector`` is given),
    evaluate the test split, and write the report tables.

    Reports are produced for the two-flow system and for the grid detector
    alone, both from the same pass over the test split.
    """
    train, test = build_experiment(spec)
    if detector is None:
        log.info("featurizing %d training captures", len(train))
        detector = train_detector(featurize(train, stacks=True), config)
    decisions, truths = evaluate_detector(detector, test)
    result = ExperimentResult(spec, detector, decisions, truths, test)
    for system, decs in (("radyololet", decisions),
                         ("radyolo", [flow1_only(d) for d in decisions])):
        result.reports[system] = compute_metrics(decs, truths)
        result.tables[system] = slice_tables(decs, test, truths, spec)
    if out_dir is not None:
        save_experiment(result, out_dir, config)
    return result


def save_experiment(result: ExperimentResult, out_dir, config: ModelConfig | None = None) -> None:
    from .pipeline import write_decision_log

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for system, tables in result.tables.items():
        write_reports(out, system, tables, result.reports[system])
    write_decision_log(out / "decisions.jsonl", result.decisions)
    meta = {"experiment": result.spec.to_dict()}
    if config is not None:
        meta["config"] = config.to_dict()
    (out / "experiment.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


__all__ = [
    "EXPERIMENTS", "Example", "ExperimentResult", "ExperimentSpec", "MetricsReport",
    "ModelConfig", "build_experiment", "compute_metrics", "run_experiment", "slice_tables",
]
