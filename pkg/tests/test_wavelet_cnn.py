import numpy as np
import pytest

from radarsense.errors import MissingStratumError
from radarsense.evaluation import ExperimentSpec, build_experiment
from radarsense.radyolo import C, P_R, CalibrationStats, decode
from radarsense.wavelet_cnn import (
    WaveletCalibration, WaveletModel, bce_loss, calibrate_tw, estimate_via_override,
    load_wavelet_calibration, predict_radar, save_wavelet_calibration, threshold_from_probs,
    train_waveletcnn)
from radarsense.wavelet_pre import make_wavelet_stack


class FixedProb:
    """Stand-in model returning preset radar probabilities."""

    def __init__(self, p):
        self.p = p

    def predict_proba(self, stacks):
        return np.full(len(list(stacks)), self.p) if np.isscalar(self.p) else np.asarray(self.p)


@pytest.fixture(scope="module")
def forty():
    train, _ = build_experiment(ExperimentSpec("E1", 10, 2, seed=0))
    return [(make_wavelet_stack(e.synthesize()[0]), e.stratum in ("radar", "radar+interference"))
            for e in train]


@pytest.fixture(scope="module")
def overfit_model(forty):
    return train_waveletcnn(forty, epochs=80, seed=0, lr=3e-3, batch_size=8)


# --- loss --------------------------------------------------------------------------

def test_bce_is_base_two_and_positive():
    probs = np.array([[0.5, 0.5], [0.25, 0.75]])
    assert bce_loss(probs, [1, 0]) == pytest.approx(1.0 - np.log2(0.75))
    assert bce_loss(np.array([[1.0, 0.0]]), [1]) == pytest.approx(0.0, abs=1e-6)


def test_bce_shape_checked():
    with pytest.raises(ValueError):
        bce_loss(np.zeros((3, 2)), [1, 0])


# --- training ---------------------------------------------------------------------

def test_single_class_rejected(forty):
    with pytest.raises(ValueError):
        train_waveletcnn([(w, True) for w, _ in forty[:4]], epochs=1)


def test_overfit_forty_examples(forty, overfit_model):
    assert len(forty) == 40
    assert overfit_model.history[-1]["train_loss"] < 0.1


def test_flipped_labels_flip_decisions(forty, overfit_model):
    flipped = train_waveletcnn([(w, not y) for w, y in forty], epochs=80, seed=0, lr=3e-3,
                               batch_size=8)
    stacks = [w for w, _ in forty]
    labels = np.array([y for _, y in forty])
    a = overfit_model.predict_proba(stacks) >= 0.5
    b = flipped.predict_proba(stacks) >= 0.5
    assert np.mean(a == labels) == np.mean(b == ~labels)
    assert np.mean(a == ~b) >= 0.95


def test_same_seed_same_parameters(forty, tmp_path):
    a = train_waveletcnn(forty[::5], epochs=1, seed=3)
    b = train_waveletcnn(forty[::5], epochs=1, seed=3)
    for (_, pa), (_, pb) in zip(a.net.named_parameters(), b.net.named_parameters()):
        assert np.array_equal(pa.data, pb.data)
    a.save(tmp_path / "w.rsnn")
    back = WaveletModel.load(tmp_path / "w.rsnn")
    stacks = [w for w, _ in forty[:3]]
    assert np.array_equal(a.predict_proba(stacks), back.predict_proba(stacks))
    p = back.predict_proba(stacks)
    assert p.shape == (3,) and np.all((p >= 0) & (p <= 1))


# --- threshold --------------------------------------------------------------------

@pytest.mark.parametrize("g", [1, 5, 10, 49])
def test_constant_predictions_give_that_threshold(g):
    assert threshold_from_probs([0.99] * 20, g) == pytest.approx(0.99)


def test_threshold_is_nearest_rank():
    probs = np.round(np.linspace(0.5, 0.99, 50), 2)
    # ceil(0.10 * 50) = 5th smallest
    assert threshold_from_probs(np.random.default_rng(0).permutation(probs), 10) == \
        pytest.approx(probs[4])


@pytest.mark.parametrize("g", [0, -1, 50, 80])
def test_percentile_must_be_small_and_positive(g):
    with pytest.raises(ValueError):
        threshold_from_probs([0.5, 0.6], g)
    with pytest.raises(ValueError):
        calibrate_tw(FixedProb(0.5), [(None, True)], g)


def test_no_radar_examples():
    with pytest.raises(MissingStratumError):
        calibrate_tw(FixedProb(0.5), [(None, False), (None, False)], 5)


def test_calibrate_uses_radar_examples_only():
    cal = calibrate_tw(FixedProb(0.7), [(None, True), (None, False), (None, True)], 5)
    assert cal == WaveletCalibration(0.7, 5)


def test_wavelet_calibration_round_trip(tmp_path):
    cal = WaveletCalibration(0.42, 5.0)
    save_wavelet_calibration(tmp_path / "w.json", cal)
    assert load_wavelet_calibration(tmp_path / "w.json") == cal


# --- decision ---------------------------------------------------------------------

def test_predict_radar_inclusive():
    assert predict_radar(FixedProb(0.3), None, 0.3)
    assert not predict_radar(FixedProb(0.0), None, 0.3)


@pytest.mark.parametrize("p", [0.0, 0.2, 0.5, 0.9, 1.0])
def test_predict_radar_threshold_monotone(p):
    decisions = [predict_radar(FixedProb(p), None, t) for t in np.linspace(0, 1, 21)]
    # once false, raising the threshold never makes it true again
    assert decisions == sorted(decisions, reverse=True)


# --- estimation override ----------------------------------------------------------

def _grid(conf_r):
    P = np.zeros((32, 7))
    P[12, [P_R, C]] = [1.0, conf_r]
    P[12, 2:6] = [0.3, 0.5, 0.16, 0.003]
    return P


def test_override_estimates_below_detection_threshold():
    stats = CalibrationStats(0.6, 0.15, 0.7, 0.3, 0.05)
    P = _grid(0.2)
    assert stats.t_o == pytest.approx(0.6)
    assert decode(P, stats.t_o) == []
    est = estimate_via_override(P, stats)
    assert est is not None and est.num_pulses == 1
    assert est.center_freq_frac == pytest.approx(0.3)


def test_override_without_surviving_cells():
    assert estimate_via_override(_grid(0.1), CalibrationStats(0.6, 0.15, 0.7, 0.3, 0.05)) is None


def test_relaxed_threshold_selects_superset():
    P = np.random.default_rng(0).random((32, 7))
    stats = CalibrationStats(0.6, 0.15, 0.7, 0.3, 0.05)
    relaxed = {d.cell for d in decode(P, stats.t_o_w) if d.cls == "radar"}
    strict = {d.cell for d in decode(P, stats.t_o) if d.cls == "radar"}
    est = estimate_via_override(P, stats)
    assert set(est.cells) >= strict
    assert set(est.cells) >= relaxed
