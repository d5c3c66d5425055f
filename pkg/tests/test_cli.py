import hashlib
import json

import numpy as np
import pytest

from radarsense import capture_io
from radarsense.cli import main
from radarsense.evaluation import Example


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["generate", "--experiment", "E1", "--scale", "2", "--test-total", "4",
                 "--seed", "3", "--out", str(data)]) == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"radyolo_epochs": 1, "wavelet_epochs": 1, "radyolo_batch_size": 4,
                               "wavelet_batch_size": 4}))
    ckpt = root / "ckpt"
    for flow, name in (("radyolo", "radyolo.rsnn"), ("wavelet", "wavelet.rsnn")):
        assert main(["train", "--flow", flow, "--data", str(data), "--config", str(cfg),
                     "--out", str(ckpt / name)]) == 0
        assert main(["calibrate", "--ckpt", str(ckpt / name), "--data", str(data)]) == 0
    return root


def test_generate_writes_captures(workspace):
    data = workspace / "data"
    assert len(list((data / "train").glob("*.iq"))) == 8
    assert len(list((data / "test").glob("*.iq"))) == 4
    cap, ann, extra = capture_io.read_capture(sorted((data / "train").glob("*.meta"))[0])
    assert len(cap) == 160_000
    cap2, _ = Example.from_dict(extra["example"]).synthesize()
    assert np.array_equal(cap.samples, cap2.samples.astype(np.complex64))


def test_generate_is_byte_deterministic(workspace, tmp_path):
    main(["generate", "--experiment", "E1", "--scale", "2", "--test-total", "4", "--seed", "3",
          "--out", str(tmp_path / "again")])
    assert tree_digest(tmp_path / "again") == tree_digest(workspace / "data")


def test_calibration_sidecars(workspace):
    ckpt = workspace / "ckpt"
    ry = json.loads((ckpt / "radyolo.calib.json").read_text())
    assert ry["t_o"] == pytest.approx(max(ry["radyolo"]["c_BNO_max"],
                                          min(ry["radyolo"]["c_RO_max"], ry["radyolo"]["c_IO_max"])))
    wv = json.loads((ckpt / "wavelet.calib.json").read_text())
    assert 0 <= wv["wavelet"]["threshold"] <= 1 and wv["wavelet"]["g"] == 5.0


def test_evaluate_from_generated_data(workspace, capsys):
    out = workspace / "eval"
    assert main(["evaluate", "--ckpt-dir", str(workspace / "ckpt"), "--data",
                 str(workspace / "data"), "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n"] == 4
    for name in ("radyololet_per_snr.csv", "radyolo_overall.csv", "decisions.jsonl"):
        assert (out / name).exists()


def test_infer_prints_one_decision_per_window(workspace, tmp_path, capsys):
    meta = sorted((workspace / "data" / "test").glob("*.meta"))
    caps = [capture_io.read_capture(m)[0] for m in meta[:2]]
    raw = tmp_path / "two.iq"
    both = np.concatenate([c.samples for c in caps])
    np.stack([both.real, both.imag], axis=1).astype("<f4").tofile(raw)
    assert main(["infer", "--input", str(raw), "--ckpt-dir", str(workspace / "ckpt")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [json.loads(x)["window_index"] for x in lines] == [0, 1]


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
