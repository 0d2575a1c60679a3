import json

import numpy as np
import pytest

import qscraft

TINY = {
    "data": {"image_size": 16, "train_sequences": 2, "test_sequences": 1, "frames_per_sequence": 3},
    "codec": {"channels": 16, "codebook_size": 16, "code_dim": 8, "batch_size": 2, "steps": 6,
              "adversarial_start": 3, "dead_code_steps": 4, "discriminator_channels": 8},
    "condition": {"hidden1": 8, "hidden2": 8},
    "transformer": {"layers": 1, "heads": 2, "width": 16, "batch_size": 4, "steps": 6, "warmup_steps": 2},
    "probe": {"channels": 8, "feature_dim": 16, "steps": 5, "batch_size": 4},
    "io": {"log_every": 0, "checkpoint_every": 0},
}


def tiny(tmp_path):
    config = json.loads(json.dumps(TINY))
    config["data"]["root"] = str(tmp_path / "data")
    config["io"]["work_dir"] = str(tmp_path / "run")
    return config


def test_default_config_and_hash():
    desk = qscraft.default_config()
    assert desk["codec"]["codebook_size"] > 0
    longer = json.loads(json.dumps(desk))
    longer["codec"]["steps"] += 1000
    assert qscraft.config_hash(longer) == qscraft.config_hash(desk)
    assert qscraft.default_config("acceptance")["data"]["image_size"] == 32


def test_unknown_key_is_rejected():
    with pytest.raises(qscraft.QscraftError) as info:
        qscraft.config_hash({"codec": {"codebook_sise": 4}})
    assert info.value.kind == "rejected_input"


def test_nearest_indices_ties_and_exact_rows():
    codebook = np.array([[0, 0], [1, 0], [-1, 0]], dtype=np.float32)
    queries = np.array([[1, 0], [0.4, 0], [0.5, 0], [-0.5, 0]], dtype=np.float32)
    assert qscraft.nearest_indices(queries, codebook).tolist() == [1, 0, 0, 0]


def test_patchwork_stays_in_bag():
    rng = np.random.default_rng(3)
    codebook = rng.normal(size=(8, 4)).astype(np.float32)
    source = np.array([[1, 5], [5, 1]])
    reference = rng.normal(size=(2, 2, 4)).astype(np.float32)
    out = qscraft.patchwork_indices(reference, source, codebook)
    assert out.shape == (2, 2)
    assert set(out.ravel().tolist()) <= {1, 5}


def test_psnr():
    a = np.zeros((4, 4, 3), dtype=np.float32)
    assert qscraft.psnr(a, a) == 99.0
    assert qscraft.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-4)


def test_stage_two_needs_stage_one(tmp_path):
    config = tiny(tmp_path)
    qscraft.make_data(config)
    with pytest.raises(qscraft.QscraftError) as info:
        qscraft.train(2, config)
    assert info.value.kind == "missing_artifact"
    assert "codec.ckpt" in str(info.value)


def test_end_to_end(tmp_path):
    config = tiny(tmp_path)
    manifest = qscraft.make_data(config)
    assert manifest["splits"]["train"]["count"] == 2
    qscraft.train(1, config)
    qscraft.train(2, config)

    seq = tmp_path / "data" / "test" / "seq_0000"
    poses = json.loads((seq / "poses.json").read_text())
    out = qscraft.animate_files(seq / "frame_0000.png", seq / "poses.json", tmp_path / "run", tmp_path / "anim",
                                sampling="greedy")
    assert len(out["frames"]) == 3

    source = np.random.default_rng(0).random((16, 16, 3), dtype=np.float32)
    driving = [[[0.5, 0.5]] * 8, [[-1.0, -1.0]] * 8]
    result = qscraft.animate(tmp_path / "run", source, driving, sampling="top-k", seed=4)
    assert result["frames"].shape == (2, 16, 16, 3)
    assert set(result["indices"].ravel().tolist()) <= set(result["source_bag"])
    again = qscraft.animate(tmp_path / "run", source, driving, sampling="top-k", seed=4)
    assert np.array_equal(result["frames"], again["frames"])

    report = qscraft.evaluate(seq, seq, tmp_path / "run")
    assert report["mkr"] == 0.0 and report["psnr"] == 99.0
    assert poses  # reference poses were picked up
    assert "akd_ground_truth" in report

    hist = qscraft.plot_histograms(tmp_path / "run", [seq / "frame_0000.png"], tmp_path / "hist")
    assert sum(hist["histograms"][0]) == 16
