import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holsteinml import core


def test_params_defaults_fill_half():
    p = core.HolsteinParams(L=10, g=1.2)
    assert p.filling == 5
    assert p.k == 1.0 and p.M == 1.0 and p.gamma == 0.1 and p.dt == 0.01


@pytest.mark.parametrize(
    "kwargs,match",
    [
        (dict(L=7, g=1.0), "even"),
        (dict(L=2, g=1.0), "even"),
        (dict(L=10, g=1.0, dt=0.0), "dt"),
        (dict(L=10, g=1.0, dt=-1.0), "dt"),
        (dict(L=10, g=1.0, M=0.0), "M"),
        (dict(L=10, g=1.0, k=-2.0), "k"),
        (dict(L=10, g=1.0, gamma=-0.1), "gamma"),
        (dict(L=10, g=1.0, filling=0), "filling"),
        (dict(L=10, g=1.0, filling=10), "filling"),
        (dict(L=10, g=1.0, t_nn=2.0), "t_nn"),
    ],
)
def test_params_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        core.HolsteinParams(**kwargs)


def test_dimensionless_scales():
    p = core.HolsteinParams(L=10, g=1.4, k=4.0, M=1.0)
    s = core.dimensionless_scales(p)
    assert s.omega == pytest.approx(2.0)
    assert s.Q0 == pytest.approx(1.4 / 4.0)
    assert s.P0 == pytest.approx(1.0 * 2.0 * 1.4 / 4.0)
    assert s.lam == pytest.approx(1.4**2 / 16.0)


def test_substream_deterministic_and_label_separated():
    a = core.substream(7, "x").normal(size=4)
    b = core.substream(7, "x").normal(size=4)
    c = core.substream(7, "y").normal(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_substream_integer_labels_distinct():
    a = core.substream(0, "path", 1).normal(size=3)
    b = core.substream(0, "path", 2).normal(size=3)
    assert not np.array_equal(a, b)


def test_child_seed_stable():
    assert core.child_seed(3, "train", 0) == core.child_seed(3, "train", 0)
    assert core.child_seed(3, "train", 0) != core.child_seed(3, "train", 1)


@given(seed=st.integers(0, 2**31 - 1), q_std=st.floats(0.0, 2.0))
@settings(max_examples=25, deadline=None)
def test_initial_state_pure(seed, q_std):
    p = core.HolsteinParams(L=8, g=1.0)
    s1 = core.sample_initial_state(p, q_std, seed)
    s2 = core.sample_initial_state(p, q_std, seed)
    assert np.array_equal(s1.Q, s2.Q)
    assert np.all(s2.P == 0.0)
    assert s1.t == 0.0


def test_initial_state_rejects_negative_std():
    p = core.HolsteinParams(L=8, g=1.0)
    with pytest.raises(ValueError, match="q_std"):
        core.sample_initial_state(p, -0.1, 0)


def _tiny_traj(L=6, m=5):
    p = core.HolsteinParams(L=L, g=1.1)
    rng = np.random.default_rng(0)
    return p, core.Trajectory(
        params=p,
        times=np.arange(m) * p.dt,
        Q=rng.normal(size=(m, L)),
        P=rng.normal(size=(m, L)),
        n=rng.uniform(size=(m, L)),
        cdw=rng.normal(size=m),
        hop=rng.normal(size=m),
        nnn=rng.normal(size=m),
        gs_energy=rng.normal(size=m),
    )


def test_trajectory_rejects_bad_shapes():
    p = core.HolsteinParams(L=6, g=1.0)
    with pytest.raises(ValueError, match="shapes"):
        core.Trajectory(
            params=p, times=np.arange(3) * 0.01,
            Q=np.zeros((3, 5)), P=np.zeros((3, 6)), n=np.zeros((3, 6)),
            cdw=np.zeros(3), hop=np.zeros(3), nnn=np.zeros(3),
            gs_energy=np.zeros(3),
        )


def test_trajectory_rejects_nonmonotonic_times():
    p, t = _tiny_traj()
    with pytest.raises(ValueError, match="increasing"):
        core.Trajectory(
            params=p, times=t.times[::-1].copy(), Q=t.Q, P=t.P, n=t.n,
            cdw=t.cdw, hop=t.hop, nnn=t.nnn, gs_energy=t.gs_energy,
        )


def test_trajectory_arrays_frozen():
    _, t = _tiny_traj()
    with pytest.raises(ValueError):
        t.Q[0, 0] = 99.0


def test_csv_roundtrip_exact(tmp_path):
    p, t = _tiny_traj()
    path = tmp_path / "t.csv"
    core.write_trajectory_csv(t, path)
    back = core.read_trajectory_csv(path, p)
    for name in ("times", "Q", "P", "n", "cdw", "hop", "nnn", "gs_energy"):
        assert np.array_equal(getattr(back, name), getattr(t, name)), name


def test_csv_header_matches_column_count(tmp_path):
    p, t = _tiny_traj()
    path = tmp_path / "t.csv"
    core.write_trajectory_csv(t, path)
    header = path.read_text().splitlines()[0].split(",")
    assert len(header) == 3 * p.L + 5
    assert header[0] == "t" and header[-1] == "gs_energy"


def test_read_rejects_wrong_width(tmp_path):
    p, t = _tiny_traj()
    path = tmp_path / "t.csv"
    core.write_trajectory_csv(t, path)
    wrong = core.HolsteinParams(L=8, g=1.1)
    with pytest.raises(ValueError, match="columns"):
        core.read_trajectory_csv(path, wrong)


def test_state_at_grid_hit_and_miss():
    _, t = _tiny_traj()
    s = t.state_at(t.times[2])
    assert np.array_equal(s.Q, t.Q[2])
    with pytest.raises(ValueError, match="grid"):
        t.state_at(t.times[2] + 0.004)


def test_manifest_roundtrip(tmp_path):
    path = tmp_path / "m.json"
    core.write_manifest(path, {"seed": 3, "command": "x"})
    d = json.loads(path.read_text())
    assert d["seed"] == 3
    assert "rng" in d


def test_params_dict_roundtrip():
    p = core.HolsteinParams(L=12, g=1.3, k=2.0, gamma=0.0, dt=0.005, filling=4)
    q = core.params_from_dict(core.params_to_dict(p))
    assert q == p
