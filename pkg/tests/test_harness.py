import numpy as np
import pytest

from sorsnn.autodiff import no_grad
from sorsnn.harness import (NonFiniteLossError, SorSnnModel, acc_bwt, build_model, build_tasks,
                            evaluate, injury_experiment, memory_targets, run_sequence, sweep_rows,
                            train_task)
from sorsnn.regulator import UnknownTaskError


@pytest.fixture(scope="module")
def tiny_run():
    from sorsnn.config import load_config
    from conftest import TINY
    cfg = load_config(None, TINY + ["optim.epochs=3", "seed=5"])
    return run_sequence(cfg)


def test_lr_zero_leaves_everything_unchanged(tiny_cfg):
    cfg = tiny_cfg("optim.lr=0", "optim.epochs=1")
    seq = build_tasks(cfg)
    reference = build_model(cfg)      # same seed, never trained
    reference.start_task(1)
    snapshot = [p.data.copy() for p in reference.trainable(1)[0]]
    model = build_model(cfg)
    log = train_task(model, 1, seq)
    after = model.regulator.shared_parameters() + model.regulator.layer_emb + \
        [model.regulator.task_emb[1].x] + model.bank[1].values()
    for a, b in zip(snapshot, [p.data for p in after]):
        np.testing.assert_array_equal(a, b)
    assert len(log.epochs) == 1 and np.isfinite(log.epochs[0].total)


def test_single_separable_task_is_learned():
    from sorsnn.config import load_config
    cfg = load_config(None, ["tasks.n_tasks=1", "tasks.separation=2.0", "tasks.noise=0.05"])
    model = build_model(cfg)
    log = train_task(model, 1, build_tasks(cfg))
    assert max(e.train_acc for e in log.epochs) > 0.95


def test_evaluate_matches_last_epoch_log(tiny_cfg):
    cfg = tiny_cfg()
    model = build_model(cfg)
    seq = build_tasks(cfg)
    log = train_task(model, 1, seq)
    assert evaluate(model, 1, seq) == log.epochs[-1].test_acc
    assert evaluate(model, 1, seq) == evaluate(model, 1, seq)


@pytest.mark.parametrize("method", ["sorsnn", "naive"])
def test_untrained_model_is_at_chance(tiny_cfg, method):
    cfg = tiny_cfg(f'method="{method}"', "tasks.n_test=300", "tasks.n_tasks=1")
    model = build_model(cfg)
    seq = build_tasks(cfg)
    model.start_task(1)
    model._current = 1
    assert abs(evaluate(model, 1, seq) - 0.5) <= 0.05


def test_unknown_task(tiny_run):
    with pytest.raises(UnknownTaskError):
        evaluate(tiny_run.model, 42, tiny_run.seq)


def test_matrix_shape_and_range(tiny_run):
    R = tiny_run.matrix
    assert R.shape == (3, 3)
    assert np.isnan(R[np.triu_indices(3, 1)]).all()
    low = R[np.tril_indices(3)]
    assert ((low >= 0) & (low <= 1)).all()
    acc, bwt = acc_bwt(R)
    assert acc == pytest.approx(R[-1].mean())
    assert bwt == pytest.approx(np.mean([R[2, 0] - R[0, 0], R[2, 1] - R[1, 1]]))


def test_single_task_bwt_is_none(tiny_cfg):
    res = run_sequence(tiny_cfg("tasks.n_tasks=1", "optim.epochs=1"))
    assert res.metrics["BWT"] is None
    assert res.metrics["ACC"] == res.matrix[0, 0]


def test_freezing_and_access_audit(tiny_run):
    assert tiny_run.metrics["frozen_param_drift"] == 0.0
    assert tiny_run.metrics["past_train_access"] == 0


def test_energy_accounting_and_overlap(tiny_run):
    m = tiny_run.metrics
    model = tiny_run.model
    for t in (1, 2, 3):
        assert m["active_counts"][str(t)] == sum(int(x.sum()) for x in model.masks(t))
        assert 0.0 <= m["active_fractions"][str(t)] <= 1.0
    J = np.array(m["overlap_jaccard"])
    np.testing.assert_array_equal(J, J.T)
    np.testing.assert_array_equal(np.diag(J), 1.0)


def test_memory_targets_default_and_repair(tiny_run):
    model = tiny_run.model
    assert [src for src, _ in memory_targets(model, 4)] == [None]
    assert memory_targets(model, 4)[0][1] is model.snapshots[3]
    assert [src for src, _ in memory_targets(model, 1, repair=True)] == [2, 3]


def test_snapshots_track_regenerated_weights(tiny_run):
    model = tiny_run.model
    with no_grad():
        for t in model.order:
            for snap, w in zip(model.snapshots[t], model.weights(t)):
                np.testing.assert_array_equal(snap, w.data)


def test_non_finite_loss_aborts(tiny_cfg):
    cfg = tiny_cfg()
    seq = build_tasks(cfg)
    seq.task(1).train.x[:] = np.nan
    with pytest.raises(NonFiniteLossError, match="task 1"):
        train_task(build_model(cfg), 1, seq)


def test_empty_task_rejected(tiny_cfg):
    cfg = tiny_cfg()
    seq = build_tasks(cfg)
    t = seq.task(1)
    t.train = t.train.subset(np.zeros(len(t.train), bool))
    with pytest.raises(ValueError, match="empty"):
        train_task(build_model(cfg), 1, seq)


def test_frozen_task_params_untouched_by_later_training(tiny_cfg):
    cfg = tiny_cfg()
    model = build_model(cfg)
    seq = build_tasks(cfg)
    train_task(model, 1, seq)
    x1 = model.regulator.task_emb[1].x.data.copy()
    sel1 = [p.data.copy() for p in model.bank[1].values()]
    train_task(model, 2, seq)
    np.testing.assert_array_equal(model.regulator.task_emb[1].x.data, x1)
    for a, b in zip(sel1, model.bank[1].values()):
        np.testing.assert_array_equal(a, b.data)


def test_reproducible_runs(tiny_cfg):
    a = run_sequence(tiny_cfg("optim.epochs=1"))
    b = run_sequence(tiny_cfg("optim.epochs=1"))
    np.testing.assert_array_equal(a.matrix, b.matrix)
    for t in a.model.order:
        for x, y in zip(a.model.masks(t), b.model.masks(t)):
            np.testing.assert_array_equal(x, y)


def test_injury_zero_fraction_is_noop(tiny_run):
    res = injury_experiment(tiny_run.model, tiny_run.seq, 1, 0.0)
    assert res.pre == res.post and res.cleared == 0


def test_injury_keeps_other_masks(tiny_cfg):
    res = run_sequence(tiny_cfg("optim.epochs=2"))
    model = res.model
    avail_before = sum(int(a.sum()) for a in model.avail)
    inj = injury_experiment(model, res.seq, 1, 0.5, repair_epochs=1, seed=1)
    assert inj.cleared > 0
    assert sum(int(a.sum()) for a in model.avail) == avail_before - inj.cleared
    for t in (2, 3):
        for x, y in zip(inj.masks_before[t], inj.masks_after[t]):
            np.testing.assert_array_equal(x, y)
    assert model.regulator.embedding(1).frozen and model.bank[1].frozen


def test_injury_needs_pathway_model(tiny_cfg):
    res = run_sequence(tiny_cfg('method="naive"', "optim.epochs=1", "tasks.n_tasks=2"))
    with pytest.raises(TypeError):
        injury_experiment(res.model, res.seq)


def test_naive_model_has_no_pathway_terms(tiny_cfg):
    res = run_sequence(tiny_cfg('method="naive"', "optim.epochs=1"))
    for lg in res.logs:
        for e in lg.epochs:
            assert e.l_mem == 0.0 and e.l_orth == 0.0 and e.total == e.l_class
    assert res.metrics["active_fractions"]["1"] == 1.0


def test_sweep_single_value_single_seed(tiny_cfg):
    base = tiny_cfg()
    fake = {"ACC": 0.75, "BWT": -0.1, "mean_overlap_dot": 12.0}
    rows = sweep_rows("alpha", [0.5], [0], base, runner=lambda c: fake)
    assert len(rows) == 1
    assert rows[0]["ACC_mean"] == 0.75 and rows[0]["BWT_mean"] == -0.1
    assert rows[0]["ACC_std"] == 0.0
    with pytest.raises(ValueError):
        sweep_rows("gamma", [1], [0], base, runner=lambda c: fake)
    with pytest.raises(ValueError):
        sweep_rows("beta", [1], [], base, runner=lambda c: fake)


def test_sweep_sets_param_and_seed(tiny_cfg):
    seen = []
    sweep_rows("beta", [0.0, 1e-3], [1, 2], tiny_cfg(),
               runner=lambda c: seen.append((c.loss.beta, c.seed)) or {"ACC": 1.0, "BWT": 0.0,
                                                                        "mean_overlap_dot": 0.0})
    assert seen == [(0.0, 1), (0.0, 2), (1e-3, 1), (1e-3, 2)]


def test_model_kinds(tiny_cfg):
    assert isinstance(build_model(tiny_cfg()), SorSnnModel)
