import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from cutmpc.sim import (
    DT,
    ObjectClass,
    PlantState,
    is_success,
    load_class_library,
    make_class_library,
    normal_force,
    save_class_library,
    step_plant,
)


@pytest.fixture
def lib():
    return make_class_library(0)


def quiet(obj):
    return replace(obj, noise_sigma=0.0)


def by_name(lib, name):
    return next(c for c in lib if c.name == name)


def test_free_space_is_kinematic_and_force_free(lib):
    obj = quiet(lib[0])
    s = PlantState.above(obj, clearance=0.03)
    u = np.array([0.01, -0.02, -0.05])
    s2, f = step_plant(s, u, obj, DT)
    assert np.array_equal(f, np.zeros(3))
    np.testing.assert_allclose(s2.p, s.p + u * DT, rtol=0, atol=1e-15)
    assert s2.cut_front_z == obj.surface_z


def test_free_space_noise_only(lib):
    obj = lib[0]
    rng = np.random.default_rng(3)
    s = PlantState.above(obj, clearance=0.03)
    forces = []
    for _ in range(2000):
        s, f = step_plant(s, np.zeros(3), obj, DT, rng)
        forces.append(f)
    forces = np.array(forces)
    assert abs(forces.mean()) < 5 * obj.noise_sigma / np.sqrt(forces.size)
    np.testing.assert_allclose(forces.std(axis=0), obj.noise_sigma, rtol=0.1)


def test_static_equilibrium_in_contact(lib):
    obj = quiet(by_name(lib, "dense"))
    pen = 0.5 * obj.fracture_depth
    s = PlantState(np.array([0.0, 0.0, obj.surface_z - pen]), obj.surface_z, sticking=True)
    s1, f1 = step_plant(s, np.zeros(3), obj, DT)
    s2, f2 = step_plant(s1, np.zeros(3), obj, DT)
    assert f1[2] > 0
    assert np.array_equal(f1, f2)
    for a, b in ((s, s1), (s1, s2)):
        assert np.array_equal(a.p, b.p)
        assert a.cut_front_z == b.cut_front_z and a.sticking == b.sticking


def _mean_fz(obj, seed=0, duration=1.0):
    rng = np.random.default_rng(seed)
    s = PlantState(np.array([0.0, 0.0, obj.surface_z]), obj.surface_z)
    fz = []
    for _ in range(int(duration / DT)):
        s, f = step_plant(s, np.array([0.0, 0.0, -0.01]), obj, DT, rng)
        fz.append(abs(f[2]))
    return np.mean(fz)


def test_stiff_class_pushes_back_harder(lib):
    soft, stiff = by_name(lib, "foam"), by_name(lib, "dense")
    assert _mean_fz(stiff) > _mean_fz(soft)


@settings(max_examples=25, deadline=None)
@given(k_lo=st.floats(50.0, 5000.0), factor=st.floats(1.0, 5.0))
def test_vertical_force_monotone_in_k0(k_lo, factor):
    base = quiet(make_class_library(0)[2])
    lo = replace(base, k0=k_lo)
    hi = replace(base, k0=k_lo * factor)
    s_lo = s_hi = PlantState(np.array([0.0, 0.0, base.surface_z]), base.surface_z)
    for _ in range(100):
        s_lo, f_lo = step_plant(s_lo, np.array([0.0, 0.0, -0.01]), lo, DT)
        s_hi, f_hi = step_plant(s_hi, np.array([0.0, 0.0, -0.01]), hi, DT)
        assert f_hi[2] >= f_lo[2] - 1e-12


@settings(max_examples=40, deadline=None)
@given(
    u=st.lists(st.tuples(st.floats(-0.05, 0.05), st.floats(-0.08, 0.08), st.floats(-0.05, 0.02)), min_size=1, max_size=60),
    cls_index=st.integers(0, 8),
)
def test_cut_front_never_heals(u, cls_index):
    obj = make_class_library(1)[cls_index]
    rng = np.random.default_rng(0)
    s = PlantState(np.array([0.0, 0.0, obj.surface_z + 0.001]), obj.surface_z)
    for cmd in u:
        for _ in range(10):
            s2, _ = step_plant(s, np.array(cmd), obj, DT, rng)
            assert s2.cut_front_z <= s.cut_front_z
            assert obj.table_z <= s2.cut_front_z <= obj.surface_z
            s = s2


@settings(max_examples=30, deadline=None)
@given(
    u=st.tuples(st.floats(-0.05, 0.05), st.floats(-0.1, 0.1), st.floats(-0.05, 0.05)),
    depth=st.floats(0.0, 0.03),
    pen=st.floats(0.0, 0.01),
    sticking=st.booleans(),
)
def test_noise_free_step_is_deterministic(u, depth, pen, sticking):
    obj = quiet(make_class_library(0)[3])
    cf = obj.surface_z - depth
    s = PlantState(np.array([0.0, 0.001, cf - pen]), cf, sticking=sticking, preload_y=1e-4)
    a = step_plant(s, np.array(u), obj, DT)
    b = step_plant(s, np.array(u), obj, DT)
    assert np.array_equal(a[1], b[1])
    assert np.array_equal(a[0].p, b[0].p) and a[0].cut_front_z == b[0].cut_front_z


@settings(max_examples=50, deadline=None)
@given(v=st.floats(1e-4, 0.5), pen=st.floats(1e-5, 0.02), alpha=st.floats(1e-3, 100.0))
def test_saw_weakening(v, pen, alpha):
    obj = replace(make_class_library(0)[4], alpha_saw=alpha)
    cf = obj.surface_z - 0.01
    still = normal_force(obj, cf, cf - pen, 0.0)
    sawing = normal_force(obj, cf, cf - pen, v)
    assert sawing < still
    assert normal_force(obj, cf, cf - pen, -v) == sawing


def test_stick_then_slip(lib):
    obj = quiet(by_name(lib, "waxy"))
    pen = 0.9 * obj.fracture_depth
    s = PlantState(np.array([0.0, 0.0, obj.surface_z - pen]), obj.surface_z, sticking=True)
    y0 = s.p[1]
    # small lateral push: stays stuck, static friction reported against the push
    s1, f1 = step_plant(s, np.array([0.0, 0.005, 0.0]), obj, DT)
    assert s1.sticking and s1.p[1] == y0 and f1[1] < 0
    # keep pushing until break-away, then the knife slides with kinetic friction
    for _ in range(2000):
        s1, f1 = step_plant(s1, np.array([0.0, 0.05, 0.0]), obj, DT)
        if not s1.sticking:
            break
    assert not s1.sticking and s1.p[1] > y0
    n = normal_force(obj, s1.cut_front_z, s1.p[2], 0.05)
    assert f1[1] == pytest.approx(-obj.mu_kinetic * n)


def test_rejects_non_finite_command(lib):
    s = PlantState.above(lib[0])
    with pytest.raises(ValueError):
        step_plant(s, np.array([0.0, np.nan, 0.0]), lib[0], DT, np.random.default_rng(0))
    with pytest.raises(ValueError):
        step_plant(s, np.array([0.0, np.inf, 0.0]), lib[0], DT, np.random.default_rng(0))


def test_class_library_contract():
    lib = make_class_library(0)
    assert len(lib) == 9
    assert sum(c.seen for c in lib) == 6 and sum(not c.seen for c in lib) == 3
    for c in lib:
        assert c.surface_z > c.table_z and c.k0 > 0
        assert c.mu_static >= c.mu_kinetic >= 0 and c.alpha_saw >= 0 and c.noise_sigma >= 0
    assert make_class_library(7) == make_class_library(7)
    assert make_class_library(7) != make_class_library(8)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_unseen_classes_straddle_the_seen_hull(seed):
    lib = make_class_library(seed)
    axes = ("k0", "k_grad", "mu_static", "mu_kinetic", "alpha_saw", "cut_base_rate", "cut_saw_gain", "fracture_depth")
    seen = [c for c in lib if c.seen]
    for c in (c for c in lib if not c.seen):
        inside = outside = 0
        for a in axes:
            vals = [getattr(s, a) for s in seen]
            if min(vals) <= getattr(c, a) <= max(vals):
                inside += 1
            else:
                outside += 1
        assert inside > 0 and outside > 0, c.name


def test_is_success_threshold(lib):
    obj = lib[0]
    tol = 2e-3
    at = lambda z: PlantState(np.array([0.0, 0.0, z]), obj.surface_z)  # noqa: E731
    assert is_success(at(obj.table_z), obj, tol)
    assert not is_success(at(obj.surface_z), obj, tol)
    assert not is_success(at(obj.table_z + 2 * tol), obj, tol)
    with pytest.raises(ValueError):
        is_success(at(0.0), obj, 0.0)


def test_invalid_class_rejected():
    good = make_class_library(0)[0]
    with pytest.raises(ValueError):
        replace(good, surface_z=good.table_z)
    with pytest.raises(ValueError):
        replace(good, mu_kinetic=good.mu_static + 0.1)
    with pytest.raises(ValueError):
        replace(good, k0=0.0)


def test_class_library_file_round_trip(tmp_path):
    lib = make_class_library(3)
    path = tmp_path / "classes.ini"
    save_class_library(lib, path)
    assert load_class_library(path) == lib
    text = path.read_text()
    assert "[foam]" in text and "k0 = " in text
    assert isinstance(load_class_library(path)[0], ObjectClass)
