import numpy as np
import pytest

from grcnn import checkpoint
from grcnn.data import Dataset, normalize, synthetic_blobs
from grcnn.errors import ConfigError, TrainingError
from grcnn.model import build, spec_from_options
from grcnn.nn import Parameter
from grcnn.trainer import OptState, RunLog, TrainConfig, evaluate, lr_at, sgd_step, train


def small_spec(**kw):
    opts = {"input_shape": "3,32,32", "stem_channels": "16", "iterations": "2,2", "channels": "16,16",
            "groups_feedforward": "4", "groups_gate": "4", "dropout": "0"}
    opts.update(kw)
    return spec_from_options(opts)


@pytest.fixture(scope="module")
def blobs():
    return normalize(synthetic_blobs(64, seed=0))


class TestSchedule:
    @pytest.mark.parametrize("epochs,epoch,lr", [(300, 0, 0.1), (300, 149, 0.1), (300, 150, 0.01),
                                                 (300, 225, 0.001), (40, 20, 0.01)])
    def test_step_decay(self, epochs, epoch, lr):
        assert lr_at(epoch, TrainConfig(epochs=epochs)) == pytest.approx(lr)

    @pytest.mark.parametrize("kw", [{"lr0": 0}, {"batch_size": 0}, {"lr_milestones": (0.75, 0.5)},
                                    {"lr_milestones": (1.0,)}])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_from_options(self):
        cfg = TrainConfig.from_options({"lr_milestones": "0.3,0.6", "nesterov": "yes", "epochs": "4"})
        assert cfg.lr_milestones == (0.3, 0.6) and cfg.nesterov and cfg.epochs == 4
        with pytest.raises(ConfigError, match="valid keys"):
            TrainConfig.from_options({"learning_rate": "1"})


class TestSGD:
    def param(self, value, grad):
        p = Parameter(np.array([value], dtype=np.float64))
        p.grad = np.array([grad], dtype=np.float64)
        return p

    def test_plain_step(self):
        p = self.param(1.0, 0.5)
        sgd_step([("w", p)], OptState(), lr=0.1, momentum=0.0)
        assert p.data[0] == pytest.approx(0.95)

    def test_quadratic_trajectory(self):
        p = Parameter(np.array([1.0]))
        opt = OptState()
        w, v = 1.0, 0.0
        for _ in range(5):
            p.grad = 2 * p.data
            sgd_step([("w", p)], opt, lr=0.1, momentum=0.9)
            v = 0.9 * v + 2 * w
            w = w - 0.1 * v
            assert p.data[0] == pytest.approx(w, rel=1e-12)
        assert opt.step == 5
        assert opt.velocity["w"].shape == p.shape

    def test_weight_decay_shrinkage(self):
        p = self.param(2.0, 0.0)
        for k in range(1, 4):
            sgd_step([("w", p)], OptState(), lr=0.1, momentum=0.0, weight_decay=1e-4)
            assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 1e-4) ** k, rel=1e-12)

    def test_nesterov(self):
        p = self.param(1.0, 1.0)
        sgd_step([("w", p)], OptState(), lr=0.1, momentum=0.9, nesterov=True)
        assert p.data[0] == pytest.approx(1.0 - 0.1 * (1.0 + 0.9 * 1.0))

    def test_missing_grad(self):
        with pytest.raises(TrainingError, match="w"):
            sgd_step([("w", Parameter(np.zeros(1)))], OptState(), lr=0.1)


class TestRunLog:
    def test_csv_round_trip(self, tmp_path):
        log = RunLog()
        log.append(epoch=0, lr=0.1, train_loss=1.25, test_error=0.5, wall_seconds=3.0)
        log.to_csv(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "epoch,lr,train_loss,test_error,wall_seconds"
        assert RunLog.from_csv(tmp_path / "r.csv").digest() == log.digest()

    def test_digest_ignores_wall_time(self):
        a, b = RunLog(), RunLog()
        a.append(epoch=0, lr=0.1, train_loss=1.0, test_error=0.5, wall_seconds=1.0)
        b.append(epoch=0, lr=0.1, train_loss=1.0, test_error=0.5, wall_seconds=9.0)
        assert a.digest() == b.digest()
        b.rows[0]["train_loss"] = 1.00001
        assert a.digest() != b.digest()


class TestTraining:
    def test_memorizes_small_subset(self, blobs):
        model = build(small_spec(), seed=0)
        cfg = TrainConfig(batch_size=16, epochs=50, lr0=0.05, seed=0, max_steps=200)
        train(model, blobs, None, cfg)
        assert evaluate(model, blobs) == 1.0

    def test_zero_head_predicts_class_zero(self):
        ds = normalize(synthetic_blobs(60, seed=2))
        model = build(small_spec(), seed=0)
        model.head.weight.data[...] = 0
        model.head.bias.data[...] = 0
        assert evaluate(model, ds) == pytest.approx(np.mean(ds.labels == 0))

    def test_evaluate_leaves_running_stats(self, blobs):
        model = build(small_spec(), seed=0)
        before = [b.copy() for _, b in model.named_buffers()]
        evaluate(model, blobs)
        for a, (_, b) in zip(before, model.named_buffers()):
            np.testing.assert_array_equal(a, b)

    def test_outputs_and_resume_state(self, blobs, tmp_path):
        model = build(small_spec(), seed=0)
        log = train(model, blobs, blobs, TrainConfig(batch_size=32, epochs=2, seed=0), out_dir=tmp_path)
        assert len(log.rows) == 2
        assert np.isfinite([r["train_loss"] for r in log.rows]).all()
        assert RunLog.from_csv(tmp_path / "runlog.csv").digest() == log.digest()
        entries = checkpoint.read_entries(tmp_path / "final.ckpt")
        assert int(entries["optim/step"]) == 4
        assert any(k.startswith("optim/velocity/") for k in entries)

    def test_nan_loss_aborts_with_context(self, blobs):
        model = build(small_spec(), seed=0)
        model.head.weight.data[...] = np.nan
        with pytest.raises(TrainingError, match=r"epoch 0, batch 0, lr 0\.1"):
            train(model, blobs, None, TrainConfig(batch_size=32, epochs=1))

    def test_deterministic_runs(self, blobs):
        logs = []
        for _ in range(2):
            model = build(small_spec(), seed=5)
            logs.append(train(model, blobs, blobs, TrainConfig(batch_size=16, epochs=2, seed=5), augment_train=True))
        assert logs[0].digest() == logs[1].digest()
