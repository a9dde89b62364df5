import numpy as np
import pytest

from birdssl import train as train_mod
from birdssl.dataset import DatasetManifest, ManifestEntry, synth_dataset
from birdssl.encoder import EncoderConfig
from birdssl.objectives import LossOutput
from birdssl.train import EpochLog, TrainConfig, TrainingError, train, write_log

TINY = EncoderConfig(stages="4:3:4,8:3:4", embedding_dim=8, projector_dims=(8, 8))


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return synth_dataset(root, n_train_classes=3, n_test_classes=2, files_per_class=6, seed=7)


def params_equal(a, b):
    return all(np.array_equal(a.state()[k], b.state()[k]) for k in a.state())


def test_same_seed_same_parameters(toy):
    cfg = TrainConfig(batch_size=8, epochs=2, seed=3)
    e1, log1 = train(toy, cfg, TINY)
    e2, log2 = train(toy, cfg, TINY)
    assert params_equal(e1, e2)
    assert [l.mean_loss for l in log1] == [l.mean_loss for l in log2]
    e3, _ = train(toy, TrainConfig(batch_size=8, epochs=2, seed=4), TINY)
    assert not params_equal(e1, e3)


def test_log_contract(toy, tmp_path):
    _, log = train(toy, TrainConfig(batch_size=8, epochs=3, objective="simclr"), TINY)
    assert [l.epoch for l in log] == [0, 1, 2]
    assert all(np.isfinite(l.mean_loss) and l.seconds >= 0 for l in log)
    write_log(tmp_path / "train.log", log)
    lines = (tmp_path / "train.log").read_text().splitlines()
    fields = lines[1].split("\t")
    assert len(lines) == 3 and len(fields) == 3 and fields[0] == "1"
    assert float(fields[1]) == pytest.approx(log[1].mean_loss, rel=1e-8)


def test_bt_loss_decreases(toy):
    _, log = train(toy, TrainConfig(batch_size=6, epochs=20, learning_rate=3e-3), TINY)
    assert log[-1].mean_loss < log[0].mean_loss


@pytest.mark.parametrize("objective", ["frossl", "supcon"])
def test_other_objectives_run(toy, objective):
    _, log = train(toy, TrainConfig(batch_size=8, epochs=1, objective=objective), TINY)
    assert np.isfinite(log[0].mean_loss)


@pytest.mark.parametrize("scorer", ["energy", "file"])
def test_activation_selection(toy, scorer):
    cfg = TrainConfig(batch_size=8, epochs=1, selection="activation", scorer=scorer)
    data = train_mod.TrainingData(toy, cfg, train_mod.FrontendConfig())
    assert all(s is not None and s.shape == (128, 247) for s in data.selected)
    a, b = data.window_pair(0, np.random.default_rng(0))
    assert a is b


def test_supcon_needs_labels(toy):
    entries = [ManifestEntry(e.path, "" if i == 2 else e.label, e.split)
               for i, e in enumerate(toy.entries)]
    manifest = DatasetManifest(entries, toy.root)
    with pytest.raises(TrainingError, match="supcon needs labels"):
        train(manifest, TrainConfig(batch_size=8, epochs=1, objective="supcon"), TINY)


def test_unreadable_audio_names_path(toy, tmp_path):
    entries = list(toy.entries) + [ManifestEntry("../nowhere/x.wav", "c", "train")]
    with pytest.raises(TrainingError, match="nowhere"):
        train(DatasetManifest(entries, toy.root), TrainConfig(batch_size=8, epochs=1), TINY)


def test_too_few_files(toy):
    with pytest.raises(TrainingError, match="batch_size"):
        train(toy, TrainConfig(batch_size=64, epochs=1), TINY)


def test_non_finite_loss_aborts(toy, monkeypatch):
    def broken(name, labels=None):
        return lambda z1, z2, cfg: LossOutput(float("nan"), np.zeros_like(z1), np.zeros_like(z2))
    monkeypatch.setattr(train_mod, "paired_objective", broken)
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        train(toy, TrainConfig(batch_size=8, epochs=1), TINY)


def test_train_config_invariants():
    for bad in (dict(batch_size=1), dict(learning_rate=0), dict(epochs=0), dict(objective="byol"),
                dict(selection="random"), dict(min_overlap=1.0), dict(weight_decay=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_epoch_log_line():
    assert EpochLog(4, 1.5, 2.25).line() == "4\t1.5\t2.250"
