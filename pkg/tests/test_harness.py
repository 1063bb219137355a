import dataclasses
import json
import sys

import numpy as np
import pytest
from conftest import tiny_config
from PIL import Image

from mtscene.balancer import BalancerConfig
from mtscene.data import read_depth_png
from mtscene.errors import CheckpointError, ConfigError, DataError, NumericalError
from mtscene.harness import checkpoint as ckpt_io
from mtscene.harness.ablate import RUN_FIELDS, SUMMARY_FIELDS, ablate, summarize
from mtscene.harness.cli import main
from mtscene.harness.config import ExponentialConfig, PlateauConfig, TrainConfig
from mtscene.harness.estimator import MultiTaskEstimator
from mtscene.harness.evaluate import evaluate, evaluate_ground_truth
from mtscene.harness.optim import AdamW, ExponentialLR, LRSchedule, ReduceOnPlateau
from mtscene.harness.reconstruct import overlay, reconstruct
from mtscene.harness.train import RUNLOG_FIELDS, load_splits, train
from mtscene.model import MultiTaskNet

# the package re-exports the train function under the module's name
train_mod = sys.modules["mtscene.harness.train"]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return train(tiny_config(), out)


# -- config -----------------------------------------------------------------


def test_config_json_round_trip(tmp_path):
    cfg = tiny_config(seed=4)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert TrainConfig.from_json(path) == cfg
    assert TrainConfig.from_dict(json.loads(TrainConfig().to_json())) == TrainConfig()


def test_config_rejections(tmp_path):
    d = tiny_config().to_dict()
    d["optimizer"]["momentum"] = 0.9
    with pytest.raises(ConfigError, match="momentum"):
        TrainConfig.from_dict(d)
    with pytest.raises(ConfigError):
        tiny_config(epochs=0)
    with pytest.raises(ConfigError, match="class counts"):
        TrainConfig(model=dataclasses.replace(TrainConfig().model, num_classes=5))
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError, match="valid JSON"):
        TrainConfig.from_json(tmp_path / "bad.json")
    with pytest.raises(ConfigError, match="divisible"):
        TrainConfig(dataset=dataclasses.replace(TrainConfig().dataset, scene=dataclasses.replace(TrainConfig().dataset.scene, image_size=(72, 64))))


# -- schedules --------------------------------------------------------------


def test_exponential_schedule():
    lr = 1e-3
    for _ in range(3):
        lr = ExponentialLR(ExponentialConfig(0.95)).step(lr)
    assert lr == pytest.approx(1e-3 * 0.95**3, rel=1e-15)


def test_plateau_patience_and_floor():
    sched = ReduceOnPlateau(PlateauConfig(factor=0.5, patience=2, min_lr=0.3))
    lr = 1.0
    trace = [lr := sched.step(lr, m) for m in (5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0)]
    # first call sets the best; reductions follow the third non-improving epoch
    assert trace == [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.3, 0.3]
    assert sched.step(0.3, 1.0) == 0.3


def test_schedule_never_raises_rate():
    opt = AdamW([], TrainConfig().optimizer)
    sched = LRSchedule(opt, ExponentialLR(), ReduceOnPlateau())
    rng = np.random.default_rng(0)
    prev = opt.lr
    for _ in range(40):
        lr = sched.epoch_end(float(rng.uniform(0, 2)))
        assert lr <= prev
        prev = lr


# -- training ----------------------------------------------------------------


def test_training_writes_logs_and_checkpoint(run):
    out = run.out_dir
    header = (out / "runlog.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == RUNLOG_FIELDS
    assert len(run.runlog) == 2 * 2  # 6 samples in batches of 3, 2 epochs
    assert len(run.validation) == 2
    assert run.checkpoint_path.is_file()
    assert run.best_epoch in (0, 1)
    best = max(r.score for r in run.reports)
    assert run.best_report.score == best
    for row in run.runlog:
        w = (row["w_seg"], row["w_depth"], row["w_det"])
        assert sum(w) == pytest.approx(1.0, abs=1e-12)
        assert all(np.isfinite([row["seg"], row["depth"], row["detection"], row["total"]]))


def test_best_parameters_restored(run):
    ck = ckpt_io.load(run.checkpoint_path)
    assert ck.meta["epoch"] == run.best_epoch
    for name, t in run.model.named_parameters():
        np.testing.assert_array_equal(t.data.astype(np.float32), ck.arrays[name].astype(np.float32))


def test_fixed_mode_keeps_uniform_weights():
    cfg = tiny_config(epochs=1, balancer=BalancerConfig(mode="fixed"))
    res = train(cfg)
    for row in res.runlog:
        assert (row["w_seg"], row["w_depth"], row["w_det"]) == (1 / 3, 1 / 3, 1 / 3)
    assert res.out_dir is None


def test_non_finite_loss_aborts_with_last_good(tmp_path, monkeypatch):
    real = train_mod.task_losses
    calls = {"n": 0}

    def poisoned(model, batch, cfg, training, rng=None):
        tensors, comps = real(model, batch, cfg, training, rng)
        calls["n"] += 1
        if training and calls["n"] == 2:
            tensors[1] = tensors[1] * float("nan")
        return tensors, comps

    monkeypatch.setattr(train_mod, "task_losses", poisoned)
    with pytest.raises(NumericalError, match="depth loss at step 1"):
        train(tiny_config(epochs=1), tmp_path)
    ck = ckpt_io.load(tmp_path / "last_good.ckpt")
    assert ck.meta == {"step": 1, "aborted": True}


# -- checkpoints -------------------------------------------------------------


def test_checkpoint_byte_round_trip(run):
    data = run.checkpoint_path.read_bytes()
    ck = ckpt_io.decode(data)
    again = ckpt_io.encode(ck.build_model(), ck.config, ck.meta)
    assert again == data


def test_checkpoint_corruption_rejected(run, tmp_path):
    data = run.checkpoint_path.read_bytes()
    with pytest.raises(CheckpointError, match="not an mtscene checkpoint"):
        ckpt_io.decode(b"XXXXXXXX" + data[8:])
    with pytest.raises(CheckpointError, match="truncated"):
        ckpt_io.decode(data[:-8])
    with pytest.raises(CheckpointError, match="trailing"):
        ckpt_io.decode(data + b"\0\0\0\0")
    with pytest.raises(CheckpointError, match="cannot read"):
        ckpt_io.load(tmp_path / "absent.ckpt")


def test_parameter_mismatch_listed(run):
    arrays = dict(ckpt_io.load(run.checkpoint_path).arrays)
    name = sorted(arrays)[0]
    arrays.pop(name)
    arrays["bogus.weight"] = np.zeros(2)
    with pytest.raises(CheckpointError) as exc:
        ckpt_io.load_parameters(MultiTaskNet(run.config.model), arrays)
    assert name in str(exc.value) and "bogus.weight" in str(exc.value)


def test_check_compatible_names_fields(run):
    ck = ckpt_io.load(run.checkpoint_path)
    ckpt_io.check_compatible(ck, run.config)
    other = run.config.replace(model=dataclasses.replace(run.config.model, decoder_dim=24, head_hidden=4))
    with pytest.raises(CheckpointError, match="model.decoder_dim, model.head_hidden"):
        ckpt_io.check_compatible(ck, other)


# -- evaluation --------------------------------------------------------------


def test_ground_truth_scores_perfectly():
    samples = load_splits(tiny_config(), ("val",))["val"]
    rep = evaluate_ground_truth(samples, 4)
    assert (rep.dice, rep.map50, rep.depth_mae_mm) == (1.0, 1.0, 0.0)


def test_evaluate_checkpoint_and_empty_split(run):
    samples = load_splits(run.config, ("val",))["val"]
    rep = evaluate(run.checkpoint_path, samples)
    assert rep.score == pytest.approx(run.best_report.score, abs=1e-3)
    with pytest.raises(DataError):
        evaluate(run.checkpoint_path, [])


# -- ablation ----------------------------------------------------------------


def test_ablation_table_and_single_seed_warning(tmp_path):
    with pytest.warns(UserWarning, match="fewer than two seeds"):
        res = ablate(tiny_config(epochs=1), seeds=[0], modes=("fixed", "awu"), out_dir=tmp_path)
    assert [r["mode"] for r in res.runs] == ["fixed", "awu"]
    assert res.summary_csv().splitlines()[0].split(",") == list(SUMMARY_FIELDS)
    assert res.runs_csv().splitlines()[0].split(",") == list(RUN_FIELDS)
    lines = res.table().splitlines()
    assert lines[0] == "| Model | Regime | Arch. | Segmentation | Object detection |"
    assert lines[2] == "| | | | Dice | mAP |"
    assert len(lines) == 5
    assert (tmp_path / "awu_seed0" / "best.ckpt").is_file()
    with pytest.raises(ConfigError):
        ablate(tiny_config(epochs=1), seeds=[0], modes=("sgd",))


def test_summary_sample_std():
    runs = [{"mode": "awu", "dice": d, "map50": m} for d, m in ((0.8, 0.4), (0.9, 0.6))]
    (row,) = summarize(runs, ["awu"])
    assert row["dice_mean"] == pytest.approx(0.85)
    assert row["dice_std"] == pytest.approx(np.sqrt(0.005))
    assert row["map_std"] == pytest.approx(np.sqrt(0.02))


# -- reconstruction ------------------------------------------------------------


def test_reconstruct_outputs(run, tmp_path):
    sample = load_splits(run.config, ("val",))["val"][0]
    rec = reconstruct(run.checkpoint_path, sample, tmp_path, stem="s0", ply_format="ascii")
    for p in (rec.depth_path, rec.ply_path, rec.overlay_path):
        assert p.is_file()
    assert np.abs(read_depth_png(rec.depth_path) - rec.depth).max() <= 0.5 / 65535 + 1e-12
    assert len(rec.cloud) == int(np.count_nonzero(rec.depth > 0))
    with Image.open(rec.overlay_path) as im:
        assert im.size == (32, 32) and im.mode == "RGB"
    with pytest.raises(DataError):
        reconstruct(run.checkpoint_path, tmp_path / "missing.png", tmp_path)


def test_overlay_tints_only_foreground():
    img = np.full((8, 8, 3), 100, np.uint8)
    mask = np.zeros((8, 8), np.int64)
    mask[2:4, 2:4] = 1
    out = np.array(overlay(img, mask, []))
    assert np.all(out[mask == 0] == 100)
    assert np.any(out[mask == 1] != 100)


# -- command line --------------------------------------------------------------


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_cli_error_codes(tmp_path, capsys):
    (tmp_path / "bad.json").write_text('{"epochs": 0}')
    assert main(["train", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 2
    assert _error(capsys)["error"] == "config"

    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    assert main(["evaluate", "--checkpoint", str(tmp_path / "junk.ckpt")]) == 5
    assert _error(capsys)["error"] == "checkpoint"

    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o"), "--epochs", "1"]) == 4
    assert _error(capsys)["error"] == "data"

    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
    assert _error(capsys)["error"] == "usage"


def test_cli_synth_train_evaluate(tmp_path, capsys):
    cfg = tiny_config(epochs=1)
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert main(["synth", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "data")]) == 0
    assert json.loads(capsys.readouterr().out)["splits"] == {"train": 6, "val": 3, "test": 3}
    args = ["train", "--config", str(tmp_path / "c.json"), "--data", str(tmp_path / "data"), "--out", str(tmp_path / "run"), "--quiet"]
    assert main(args) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["best_epoch"] == 0
    ck = str(tmp_path / "run" / "best.ckpt")
    assert main(["evaluate", "--checkpoint", ck, "--data", str(tmp_path / "data"), "--split", "test", "--out", str(tmp_path / "ev")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) >= {"dice", "map50", "miou", "depth_mae_mm"}
    assert (tmp_path / "ev" / "report.csv").is_file()
    assert main(["reconstruct", "--checkpoint", ck, "--data", str(tmp_path / "data"), "--index", "9", "--out", str(tmp_path / "rec")]) == 0
    assert json.loads(capsys.readouterr().out)["ply"].endswith("00009.ply")


# -- estimator -----------------------------------------------------------------


def test_estimator_api(tmp_path):
    splits = load_splits(tiny_config(), ("train", "val"))
    est = MultiTaskEstimator(epochs=1, batch_size=3, seed=2)
    assert est.get_params()["seed"] == 2
    est.set_params(mode="fixed")
    assert est.fit(splits["train"], val_samples=splits["val"]) is est
    preds = est.predict([s.image for s in splits["val"]])
    assert len(preds) == 3 and preds[0].mask.shape == (32, 32)
    s = est.score(splits["val"])
    assert 0.0 <= s <= 1.0
    est.save(tmp_path / "e.ckpt")
    back = MultiTaskEstimator.load(tmp_path / "e.ckpt")
    assert back.get_params() == est.get_params()
    assert back.score(splits["val"]) == pytest.approx(s, abs=1e-3)
