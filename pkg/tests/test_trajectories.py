import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from balanced_dtr.simulation import ReferenceLogging, ReferenceTarget
from balanced_dtr.trajectories import (
    Dataset,
    DatasetParseError,
    FunctionPolicy,
    Trajectory,
    policy_mass,
    read_csv,
    validate_dataset,
    write_csv,
)

ACTS = (-1.0, 1.0)


def small_dataset(n=4, T=3, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset.from_arrays(
        rng.standard_normal((n, T, d)), rng.choice(ACTS, size=(n, T)), rng.standard_normal((n, T)), ACTS,
        initial_actions=rng.choice(ACTS, size=n),
    )


def test_minimal_dataset_validates():
    ds = Dataset.from_arrays(np.zeros((1, 1, 2)), np.ones((1, 1)), np.zeros((1, 1)), ACTS)
    assert validate_dataset(ds).ok


def test_length_mismatch_is_reported_on_rewards():
    tr = Trajectory(np.zeros((3, 2)), np.ones(3), np.zeros(2))
    res = validate_dataset(Dataset((tr,), 3, [ACTS] * 3, 2))
    assert not res.ok
    assert [v.field for v in res.violations] == ["rewards"]
    assert res.violations[0].index == 0


def test_unknown_action_names_trajectory_and_step():
    good = Trajectory(np.zeros((2, 2)), np.array([1.0, -1.0]), np.zeros(2))
    bad = Trajectory(np.zeros((2, 2)), np.array([1.0, 3.0]), np.zeros(2))
    res = validate_dataset(Dataset((good, bad), 2, [ACTS] * 2, 2))
    (v,) = res.violations
    assert v.index == 1 and v.field == "actions" and "step 2" in v.reason


def test_validate_is_idempotent():
    bad = Trajectory(np.zeros((2, 2)), np.array([1.0, 7.0]), np.zeros(3))
    ds = Dataset((bad,), 2, [ACTS] * 2, 2)
    assert validate_dataset(ds) == validate_dataset(ds)


def test_empty_dataset_is_a_violation():
    assert not validate_dataset(Dataset((), 2, [ACTS] * 2, 2)).ok


def test_history_pads_initial_action():
    ds = small_dataset()
    x, a = ds.history(2)
    assert x.shape == (4, 2, 2) and a.shape == (4, 2)
    np.testing.assert_array_equal(a[:, 0], ds.initial_actions)
    np.testing.assert_array_equal(a[:, 1], ds.actions[:, 0])
    with pytest.raises(ValueError):
        ds.history(4)


def test_policy_mass_reference_examples():
    log = ReferenceLogging(2.0)
    assert policy_mass(log, 1, np.zeros((1, 2)), np.array([1.0]), 1.0) == 0.5
    tgt = ReferenceTarget()
    # (x1 + x2) * a_prev = -1.3
    x = np.array([[0.5, 0.2], [-0.6, -0.7]])
    assert policy_mass(tgt, 2, x, np.array([1.0, 1.0]), 1.0) == 1.0
    assert policy_mass(tgt, 2, x, np.array([1.0, 1.0]), -1.0) == 0.0


def test_policy_mass_errors():
    tgt = ReferenceTarget()
    with pytest.raises(ValueError):
        policy_mass(tgt, 0, np.zeros((0, 2)), np.zeros(0), 1.0)
    with pytest.raises(ValueError):
        policy_mass(tgt, 1, np.zeros((1, 2)), np.ones(1), 2.0)
    with pytest.raises(ValueError):
        policy_mass(tgt, 2, np.zeros((1, 2)), np.ones(1), 1.0)
    with pytest.raises(ValueError):
        policy_mass(tgt, 3, np.zeros((3, 2)), np.ones(3), 1.0, horizon=2)


@settings(max_examples=60, deadline=None)
@given(
    t=st.integers(1, 6),
    seed=st.integers(0, 2**32 - 1),
    slope=st.floats(-5, 5),
)
def test_masses_sum_to_one(t, seed, slope):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((20, t, 2)) * 3
    a = rng.choice(ACTS, size=(20, t))
    for pol in (ReferenceLogging(slope), ReferenceTarget()):
        p = pol.probs(t, x, a)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    p = ReferenceTarget().probs(t, x, a)
    assert np.all(np.sort(p, axis=1) == [0.0, 1.0])


def test_function_policy_per_step_action_sets():
    pol = FunctionPolicy(lambda t, x, a: np.full((len(x), t + 1), 1 / (t + 1)), [(0.0, 1.0), (0.0, 1.0, 2.0)])
    assert pol.action_set(2) == (0.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        pol.action_set(3)


def test_csv_round_trip(tmp_path):
    ds = small_dataset(n=5, T=3)
    write_csv(ds, tmp_path / "d.csv")
    back = read_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.covariates, ds.covariates)
    np.testing.assert_array_equal(back.actions, ds.actions)
    np.testing.assert_array_equal(back.rewards, ds.rewards)
    np.testing.assert_array_equal(back.initial_actions, ds.initial_actions)
    assert back.action_sets == ds.action_sets


def test_csv_without_a0_column_uses_default(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("traj_id,t,x_1,action,reward\na,1,0.5,1,2.0\na,2,0.1,-1,1.0\nb,1,0.0,-1,0.0\nb,2,1.0,1,3.0\n")
    ds = read_csv(p, default_initial_action=-1.0)
    assert ds.n == 2 and ds.horizon == 2 and ds.covariate_dim == 1
    np.testing.assert_array_equal(ds.initial_actions, [-1.0, -1.0])


@pytest.mark.parametrize(
    "body, line",
    [
        ("traj_id,t,x_1,action,reward\n0,1,zz,1,0\n", 2),
        ("traj_id,t,x_1,action,reward\n0,1,0,1,0\n0,3,0,1,0\n", 3),
        ("traj_id,t,x_1,action,reward\n0,1,0,1,0\n1,1,0,1,0\n0,2,0,1,0\n", 4),
        ("traj_id,t,x_1,action,reward\n0,1,0,1\n", 2),
        ("t,traj_id,x_1,action,reward\n", 1),
        ("", 1),
    ],
)
def test_csv_parse_errors_carry_line_numbers(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DatasetParseError) as exc:
        read_csv(p)
    assert exc.value.line == line
    assert f":{line}:" in str(exc.value)


def test_csv_ragged_horizon_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("traj_id,t,x_1,action,reward\n0,1,0,1,0\n0,2,0,1,0\n1,1,0,1,0\n")
    with pytest.raises(DatasetParseError, match="expected 2"):
        read_csv(p)


def test_csv_action_outside_declared_set(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("traj_id,t,x_1,action,reward\n0,1,0,2,0\n")
    with pytest.raises(DatasetParseError, match="actions"):
        read_csv(p, action_set=(-1.0, 1.0))


def test_population_average_uses_probabilities():
    ds = small_dataset(n=3, T=1)
    p = np.array([0.5, 0.25, 0.25])
    pop = ds.with_probabilities(p)
    v = np.array([4.0, 0.0, 8.0])
    assert pop.average(v) == 4.0
    assert ds.average(v) == 4.0
    np.testing.assert_array_equal(pop.actions, ds.actions)
