import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutmpc.data import (
    M,
    Block,
    DataError,
    Trial,
    TrialParseError,
    apply_normalizer,
    block_arrays,
    fit_normalizer,
    form_blocks,
    load_trial,
    load_trials,
    reconstruct_positions,
    save_trial,
    save_trials,
)
from cutmpc.sim import DT


def random_trial(rng, n=None, name="foam"):
    n = n if n is not None else int(rng.integers(2 * M + 1, 12 * M))
    return Trial(
        np.arange(n) * DT,
        np.cumsum(rng.normal(scale=1e-3, size=(n, 3)), axis=0),
        rng.normal(size=(n, 3)),
        rng.normal(size=(n, 3)),
        name,
        meta={"seed": 7},
    )


@pytest.mark.parametrize("n", [2 * M + 1, 2 * M + 9, 3 * M, 57])
def test_block_count(n):
    tr = random_trial(np.random.default_rng(n), n)
    blocks = form_blocks(tr)
    assert len(blocks) == (n - M) // M == tr.n_blocks()
    assert [b.block_index for b in blocks] == list(range(1, len(blocks) + 1))


def test_too_short_rejected():
    tr = random_trial(np.random.default_rng(0), 2 * M)
    with pytest.raises(DataError):
        form_blocks(tr)


def test_constant_position_gives_zero_displacements():
    tr = random_trial(np.random.default_rng(1), 45)
    tr.p[:] = [0.1, -0.2, 0.3]
    for b in form_blocks(tr):
        assert np.array_equal(b.delta_p, np.zeros((M, 3)))


def test_hand_evaluated_small_block():
    # 1-axis ramp 0.00, 0.01, 0.02, ... with M = 2
    n = 7
    p = np.zeros((n, 3))
    p[:, 0] = 0.01 * np.arange(n)
    tr = Trial(np.arange(n) * DT, p, np.zeros((n, 3)), np.zeros((n, 3)), "x")
    blocks = form_blocks(tr, m=2)
    b = blocks[0]
    assert b.anchor_p[0] == 0.01
    np.testing.assert_allclose(b.delta_p[:, 0], [0.01, 0.02], rtol=0, atol=1e-17)
    np.testing.assert_allclose(reconstruct_positions(b)[:, 0], [0.02, 0.03], rtol=0, atol=1e-17)


def test_zero_displacement_reconstructs_anchor():
    anchor = np.array([0.1, 0.2, 0.3])
    b = Block(np.zeros((M, 3)), np.zeros((M, 3)), np.zeros((M, 3)), anchor, 1)
    assert np.array_equal(reconstruct_positions(b), np.tile(anchor, (M, 1)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2 * M + 1, 20 * M))
def test_blocks_cover_tail(seed, n):
    tr = random_trial(np.random.default_rng(seed), n)
    blocks = form_blocks(tr)
    rec = np.concatenate([reconstruct_positions(b) for b in blocks])
    end = M + len(blocks) * M
    np.testing.assert_allclose(rec, tr.p[M:end], rtol=0, atol=1e-15)
    # each anchor is the previous block's last sample
    for prev, cur in zip(blocks, blocks[1:]):
        np.testing.assert_allclose(cur.anchor_p, reconstruct_positions(prev)[-1], rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), offset=st.tuples(*[st.integers(-5, 5)] * 3))
def test_offset_invariance(seed, offset):
    # integer-metre offsets on positions with short mantissas keep the subtraction exact
    rng = np.random.default_rng(seed)
    tr = random_trial(rng)
    tr.p[:] = np.round(tr.p * 2**20) / 2**20
    moved = Trial(tr.t, tr.p + np.array(offset, float), tr.f_s, tr.f_r, tr.class_name)
    for a, b in zip(form_blocks(tr), form_blocks(moved)):
        assert np.array_equal(a.delta_p, b.delta_p)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_vectorised_blocks_match(seed):
    tr = random_trial(np.random.default_rng(seed))
    dp, fs, fr, anchors = block_arrays(tr)
    for i, b in enumerate(form_blocks(tr)):
        assert np.array_equal(dp[i], b.delta_p) and np.array_equal(anchors[i], b.anchor_p)
        assert np.array_equal(fs[i], b.f_s) and np.array_equal(fr[i], b.f_r)


def test_normalizer_population_convention():
    feats = np.ones((2, 9))
    feats[:, 1:] += np.array([[0.0] * 8, [2.0] * 8])
    feats[:, 0] = [1.0, 3.0]
    norm = fit_normalizer(feats)
    assert norm.mean[0] == 2.0 and norm.std[0] == 1.0
    np.testing.assert_array_equal(norm.apply(feats)[:, 0], [-1.0, 1.0])


def test_normalizer_rejects_zero_variance():
    # one tick repeated everywhere: every feature is constant
    row = np.array([[0.0, 0.0, 0.0]])
    b = Block(np.zeros((M, 3)), np.tile(row + 1.0, (M, 1)), np.tile(row - 2.0, (M, 1)), np.zeros(3), 1)
    with pytest.raises(DataError):
        fit_normalizer([b, b, b])
    with pytest.raises(DataError):
        fit_normalizer([])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_normalized_training_set_is_standard(seed):
    rng = np.random.default_rng(seed)
    blocks = [b for _ in range(3) for b in form_blocks(random_trial(rng))]
    norm = fit_normalizer(blocks)
    z = apply_normalizer(blocks, norm).reshape(-1, 9)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-9)
    # already standard data: normalizer is (0, 1) and apply is identity
    again = fit_normalizer(z)
    np.testing.assert_allclose(again.mean, 0.0, atol=1e-9)
    np.testing.assert_allclose(again.std, 1.0, atol=1e-9)
    np.testing.assert_allclose(again.apply(z), z, atol=1e-9)
    np.testing.assert_allclose(norm.invert(norm.apply(z)), z, atol=1e-9)


def test_trial_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    trials = [random_trial(rng, name=f"c{i}") for i in range(3)]
    trials[1].K_p = np.array([1.0, 1.5, 1.5])
    paths = save_trials(trials, tmp_path)
    back = load_trials(tmp_path)
    assert [p.name for p in paths] == ["trial_0000.csv", "trial_0001.csv", "trial_0002.csv"]
    for a, b in zip(trials, back):
        for f in ("t", "p", "f_s", "f_r", "K_a", "K_p"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        assert a.class_name == b.class_name
        assert b.meta == {"seed": "7"}


def test_empty_file_is_parse_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(TrialParseError):
        load_trial(path)


def test_parse_error_reports_line(tmp_path):
    tr = random_trial(np.random.default_rng(5), 25)
    path = tmp_path / "t.csv"
    save_trial(tr, path)
    lines = path.read_text().splitlines()
    lines[7] = "0.1,oops,0,0,0,0,0,0,0,0"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TrialParseError) as exc:
        load_trial(path)
    assert exc.value.line == 8 and ":8:" in str(exc.value)


def test_non_uniform_timestamps_rejected(tmp_path):
    tr = random_trial(np.random.default_rng(6), 25)
    path = tmp_path / "t.csv"
    save_trial(tr, path)
    text = path.read_text().replace(repr(float(tr.t[5])), repr(float(tr.t[5]) + 1e-3), 1)
    path.write_text(text)
    with pytest.raises(DataError):
        load_trial(path)
    with pytest.raises(DataError):
        Trial(np.array([0.0, 0.005, 0.011]), np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)), "x")
