import numpy as np
import pytest

from flowvar.data import default_gmm_task
from flowvar.models import MlpArch, MlpVelocity
from flowvar.numerics import RngState
from flowvar.training import (TrainConfig, TrainingError, fm_loss,
                              one_step_loss, train, train_ensemble)


def _tiny_config(**kw):
    base = dict(epochs=2, pairs_per_epoch=256, batch_size=64,
                seed=RngState(3))
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(epochs=0)
    with pytest.raises(TrainingError):
        TrainConfig(learning_rate=-1e-3)
    with pytest.raises(TrainingError):
        TrainConfig(lr_schedule="warmup")
    with pytest.raises(TrainingError):
        TrainConfig(objective="score")
    with pytest.raises(TrainingError):
        TrainConfig(batch_size=512, pairs_per_epoch=256)


def test_fm_loss_rejects_endpoint_times():
    m = MlpVelocity.init(MlpArch(dim=2), RngState(0))
    x = np.zeros((4, 2))
    with pytest.raises(TrainingError, match="interior"):
        fm_loss(m, x, x, np.array([0.5, 1.0, 0.5, 0.5]))


def test_zero_learning_rate_leaves_parameters_unchanged():
    task = default_gmm_task()
    model = MlpVelocity.init(MlpArch(dim=2), RngState(1))
    before = model.checksum()
    report = train(model, task, _tiny_config(learning_rate=0.0))
    assert model.checksum() == before
    assert len(report.epoch_losses) == 2


def test_training_reduces_loss_and_is_deterministic():
    task = default_gmm_task()
    cfg = _tiny_config(epochs=5, pairs_per_epoch=1024)
    m1 = MlpVelocity.init(MlpArch(dim=2), RngState(1))
    r1 = train(m1, task, cfg)
    m2 = MlpVelocity.init(MlpArch(dim=2), RngState(1))
    r2 = train(m2, task, cfg)
    assert m1.checksum() == m2.checksum()
    assert r1.epoch_losses == r2.epoch_losses
    assert r1.epoch_losses[-1] < r1.initial_loss


def test_default_training_halves_the_loss(gmm_fm):
    # full default run on the default task: the smoke bar is a 2x reduction
    _, report = gmm_fm
    assert len(report.epoch_losses) == 30
    ratio = report.epoch_losses[-1] / report.initial_loss
    assert ratio <= 0.5, f"loss ratio {ratio:.3f}"


def test_fm_records_time_clamp_note():
    task = default_gmm_task()
    model = MlpVelocity.init(MlpArch(dim=2), RngState(1))
    report = train(model, task, _tiny_config())
    assert any("clamp" in note for note in report.notes)


def test_one_step_objective_trains():
    task = default_gmm_task()
    model = MlpVelocity.init(MlpArch(dim=2), RngState(1))
    report = train(model, task, _tiny_config(epochs=4, objective="one-step",
                                             pairs_per_epoch=1024))
    assert report.epoch_losses[-1] < report.initial_loss
    # mean-velocity reading: v(x0, 0) approximates E[x1 - x0 | x0] = mu - x0
    x0 = np.zeros((1, 2))
    v = model.velocity(x0, 0.0)
    assert np.isfinite(v).all()


def test_one_step_loss_runs_at_time_zero():
    m = MlpVelocity.init(MlpArch(dim=2), RngState(2))
    g = RngState(3).generator()
    x0 = g.standard_normal((8, 2))
    x1 = g.standard_normal((8, 2))
    loss, gw, gb = one_step_loss(m, x0, x1)
    assert np.isfinite(loss)
    assert len(gw) == len(m.weights)


def test_divergence_aborts_with_partial_report():
    task = default_gmm_task()
    model = MlpVelocity.init(MlpArch(dim=2), RngState(1))
    with pytest.raises(TrainingError) as exc:
        train(model, task, _tiny_config(epochs=10, learning_rate=1e8))
    assert exc.value.report is not None
    assert len(exc.value.report.epoch_losses) < 10


def test_ensemble_members_are_distinct(gmm_ensemble):
    models, reports = gmm_ensemble
    assert len(models) == 5
    sums = {m.checksum() for m in models}
    assert len(sums) == 5
    for r in reports:
        assert r.epoch_losses[-1] < r.initial_loss


def test_ensemble_seed_override_forces_collisions():
    task = default_gmm_task()
    seed = RngState(77)
    pair = (seed, RngState(78))
    models, _ = train_ensemble(2, MlpArch(dim=2), task, _tiny_config(),
                               member_seeds=[pair, pair])
    assert models[0].checksum() == models[1].checksum()


def test_ensemble_needs_two_members():
    with pytest.raises(TrainingError):
        train_ensemble(1, MlpArch(dim=2), default_gmm_task(), _tiny_config())
