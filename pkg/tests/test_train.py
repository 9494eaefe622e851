import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutmpc.data import M, Normalizer, Trial, block_arrays
from cutmpc.nn import Model, assemble, forward
from cutmpc.sim import DT
from cutmpc.train import (
    HYPERPARAMS,
    VARIANTS,
    BlockDataset,
    TrainConfig,
    TrainingError,
    evaluate_mse_vs_horizon,
    train,
    train_curriculum,
    train_direct,
    write_curve_csv,
)


def linear_trials(seed, n_trials=4, n=160):
    """Damping-law kinematics driven by smooth random forces: a linear toy system."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_trials):
        t = np.arange(n) * DT
        fr = np.cumsum(rng.normal(scale=0.3, size=(n, 3)), axis=0)
        fs = np.cumsum(rng.normal(scale=0.3, size=(n, 3)), axis=0)
        p = np.zeros((n, 3))
        for k in range(1, n):
            p[k] = p[k - 1] + DT * 0.003 * (fs[k - 1] - fr[k - 1])
        out.append(Trial(t, p, fs, fr, "toy"))
    return out


@pytest.fixture(scope="module")
def toy():
    return BlockDataset.fit(linear_trials(0))


def test_table_hyperparameters():
    assert HYPERPARAMS["lstm"][:2] == (2e-4, 3e-4)
    assert HYPERPARAMS["lstm-c"][:2] == (1e-4, 2e-4)
    assert HYPERPARAMS["lstm-lr-c"] == (1e-4, 3e-4, 0.5)
    cfg = TrainConfig.for_variant("lstm-lr-c", batch_size=4)
    assert (cfg.lr, cfg.wd, cfg.gamma, cfg.batch_size) == (1e-4, 3e-4, 0.5, 4)
    assert TrainConfig.for_variant("rnn").arch == "rnn"
    assert {TrainConfig.for_variant(v).arch for v in VARIANTS if v != "rnn"} == {"lstm"}


@pytest.mark.parametrize(
    "kw",
    [dict(lr=0.0), dict(wd=-1e-4), dict(gamma=0.0), dict(gamma=1.5), dict(H_target=0), dict(variant="gru")],
)
def test_config_invariants(kw):
    base = dict(variant="lstm", lr=1e-4, wd=0.0)
    base.update(kw)
    with pytest.raises(ValueError):
        TrainConfig(**base)


def test_lr_decay_schedule():
    cfg = TrainConfig.for_variant("lstm-lr-c", H_target=5)
    sched = cfg.schedule()
    assert [h for h, _, _ in sched] == [1, 2, 3, 4, 5]
    assert [e for _, e, _ in sched] == [10, 10, 10, 10, 20]
    assert [lr for _, _, lr in sched] == [1e-4, 5e-5, 2.5e-5, 1.25e-5, 6.25e-6]
    assert cfg.total_epochs() == 60


def test_constant_lr_variants():
    c = TrainConfig.for_variant("lstm-c").schedule()
    assert len(c) == 5 and len({lr for _, _, lr in c}) == 1
    d = TrainConfig.for_variant("lstm").schedule()
    assert d == [(5, 60, 2e-4)]


@settings(max_examples=30)
@given(H=st.integers(1, 12), lr0=st.floats(1e-6, 1e-2), gamma=st.floats(0.05, 1.0))
def test_lr_law_and_budget(H, lr0, gamma):
    cfg = TrainConfig("lstm-lr-c", lr0, 0.0, gamma, H_target=H)
    sched = cfg.schedule()
    for k, (h, _, lr) in enumerate(sched):
        assert h == k + 1 and lr == lr0 * gamma**k
    direct = TrainConfig("lstm", lr0, 0.0, H_target=H)
    assert sum(e for _, e, _ in sched) == sum(e for _, e, _ in direct.schedule()) == 10 * (H - 1) + 20


def test_variant_routing(toy):
    m = Model.init("lstm", 0)
    with pytest.raises(ValueError):
        train_direct(m, toy, TrainConfig.for_variant("lstm-c"))
    with pytest.raises(ValueError):
        train_curriculum(m, toy, TrainConfig.for_variant("lstm"))


def test_direct_training_decreases_loss(toy):
    cfg = TrainConfig("lstm", lr=2e-3, wd=0.0, H_target=1, final_stage_epochs=5, batch_size=8)
    rep = train_direct(Model.init("lstm", 0), toy, cfg)
    assert len(rep.train_loss) == 5
    assert all(b < a for a, b in zip(rep.train_loss, rep.train_loss[1:]))
    assert len(set(rep.lr)) == 1 and len(rep.lr) == len(rep.train_loss)


def test_curriculum_report(toy):
    cfg = TrainConfig.for_variant("lstm-lr-c", H_target=3, epochs_per_stage=2, final_stage_epochs=3, batch_size=16)
    rep = train(Model.init("lstm", 0), toy, cfg)
    assert rep.stage_horizon == [1, 1, 2, 2, 3, 3, 3]
    assert rep.lr == [1e-4, 1e-4, 5e-5, 5e-5, 2.5e-5, 2.5e-5, 2.5e-5]
    assert rep.wall_time > 0


def test_training_is_deterministic(toy):
    cfg = TrainConfig.for_variant("rnn", H_target=2, epochs_per_stage=1, final_stage_epochs=1, batch_size=16, seed=3)
    a, b = Model.init("rnn", 3), Model.init("rnn", 3)
    ra, rb = train(a, toy, cfg), train(b, toy, cfg)
    assert ra.train_loss == rb.train_loss
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_divergence_raises(toy):
    m = Model.init("lstm", 0)
    m.params["out.b"][:] = np.nan
    cfg = TrainConfig("lstm", lr=1e-3, wd=0.0, H_target=1, final_stage_epochs=1)
    with pytest.raises(TrainingError):
        train(m, toy, cfg)


def test_warm_states_match_sequential_forward(toy):
    m = Model.init("lstm", 4)
    states = toy.warm_states(m)
    off, n = toy.offsets[2], toy.lengths[2]
    h = m.zero_state(1)
    for b in range(n):
        g = off + b
        for s_all, s_ref in zip(states, h):
            for a, r in zip(s_all, s_ref):
                np.testing.assert_allclose(a[g], r[0], rtol=1e-12, atol=1e-14)
        if b + 1 < n:
            _, h = forward(m, assemble(toy.dp[[g]], toy.fs[[g]], toy.fr[[g + 1]])[0], h)


def test_perfect_model_has_zero_error():
    # constant-velocity trials: every block has the same displacements
    n = 250
    v = np.array([1e-3, -2e-3, 5e-4])
    trials = []
    for k in range(3):
        t = np.arange(n) * DT
        p = np.outer(t, v) + k
        trials.append(Trial(t, p, np.ones((n, 3)), np.ones((n, 3)), "const"))
    dp, _, _, _ = block_arrays(trials[0])
    norm = Normalizer(np.array([1e-4] * 3 + [0.0] * 6), np.ones(9))
    data = BlockDataset(trials, norm)
    m = Model.init("lstm", 0)
    for p in m.params.values():
        p[:] = 0.0
    m.params["out.b"][:] = norm.dp_to_norm(dp[0].reshape(-1))
    curve = evaluate_mse_vs_horizon(m, data, 15)
    assert curve.shape == (15,)
    np.testing.assert_allclose(curve, 0.0, atol=1e-20)


@pytest.mark.parametrize("arch", ["lstm", "rnn"])
def test_first_horizon_matches_teacher_forced_one_step(arch):
    trials = linear_trials(1, n_trials=3, n=90)
    data = BlockDataset.fit(trials)
    m = Model.init(arch, 5)
    norm = data.normalizer
    errs = []
    for tr in trials:
        dp, fs, fr, _ = block_arrays(tr)
        h = None
        for b in range(len(dp) - 1):
            x = norm.apply(np.concatenate([dp[b], fs[b], fr[b + 1]], axis=1).ravel())
            y, h = forward(m, x, h)
            errs.append(((norm.dp_from_norm(y) - dp[b + 1].ravel()) * 1e3) ** 2)
    expected = np.mean(errs)
    assert evaluate_mse_vs_horizon(m, data, 1)[0] == pytest.approx(expected, rel=1e-12)


def test_curve_is_cumulative_mean(toy):
    m = Model.init("lstm", 1)
    c5 = evaluate_mse_vs_horizon(m, toy, 5)
    assert c5.shape == (5,) and np.all(c5 >= 0)
    per_block = c5 * np.arange(1, 6)
    per_block[1:] -= c5[:-1] * np.arange(1, 5)
    assert np.all(per_block > 0)
    with pytest.raises(ValueError):
        evaluate_mse_vs_horizon(m, toy, 0)


def test_report_csvs(tmp_path, toy):
    cfg = TrainConfig.for_variant("lstm-c", H_target=2, epochs_per_stage=1, final_stage_epochs=1, batch_size=32)
    rep = train(Model.init("lstm", 0), toy, cfg)
    rep.val_mse = [0.1, 0.2]
    rep.write_csv(tmp_path / "r.csv", {"seed": 0})
    rep.write_summary_csv(tmp_path / "s.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# seed=0" and lines[1] == "epoch,stage_horizon,lr,train_loss"
    assert len(lines) == 2 + cfg.total_epochs()
    assert (tmp_path / "s.csv").read_text().splitlines()[:2] == ["horizon,val_mse", "1,0.1"]
    write_curve_csv(tmp_path / "c.csv", {"lstm": np.array([1.0, 2.0])})
    assert (tmp_path / "c.csv").read_text().splitlines() == ["model,horizon,mse_mm2", "lstm,1,1.0", "lstm,2,2.0"]
