import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tactile_vae.sim import (
    CURVATURE_CLASSES,
    DT,
    GridSpec,
    SensorModel,
    Stimuli,
    Stimulus,
    StimulusError,
    TactileStream,
    deflections,
    force_ramp_profile,
    frames_noiseless,
    generate_dataset,
    grid_for,
    hysteresis_loop_area,
    lag_coefficient,
    simulate_sequence,
    taxel_frame_noiseless,
)

DENSE = SensorModel.default("dense_nonlinear")
SPARSE = SensorModel.default("sparse_linear")


def press(force, pitch=0.0, roll=0.0, shore=30.0, curvature="flat"):
    return Stimuli.from_list([Stimulus(force, pitch, roll, shore, curvature)])


# --- force ramp ---------------------------------------------------------------------

def test_force_ramp_examples():
    assert force_ramp_profile(0.0) == 0.0
    assert force_ramp_profile(7.5) == pytest.approx(2.5)
    assert force_ramp_profile(15.0) == pytest.approx(5.0)
    assert force_ramp_profile(22.5) == pytest.approx(2.5)
    assert force_ramp_profile(30.0) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        force_ramp_profile(31.0)
    with pytest.raises(ValueError):
        force_ramp_profile(-0.1)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 15.0))
def test_force_ramp_is_symmetric(t):
    assert force_ramp_profile(t) == pytest.approx(force_ramp_profile(30.0 - t), abs=1e-12)


# --- single-frame response --------------------------------------------------------------

@pytest.mark.parametrize("sensor", [DENSE, SPARSE])
def test_zero_force_gives_baseline(sensor):
    frame = taxel_frame_noiseless(sensor, Stimulus(0.0, 5.0, -3.0, 10.0, "r10"))
    np.testing.assert_array_equal(frame.values, sensor.baseline)


def test_dense_press_activates_most_taxels():
    d = deflections(DENSE, press(5.0))[0]
    assert np.mean(np.abs(d) > 0.01 * DENSE.gain) >= 0.8


def test_sparse_press_activates_few_taxels():
    d = deflections(SPARSE, press(2.5))[0]
    assert np.mean(np.abs(d) > 0.01 * SPARSE.gain) <= 0.4
    assert np.any(d > 0)


@settings(max_examples=50, deadline=None)
@given(
    f1=st.floats(0.0, 5.0), f2=st.floats(0.0, 5.0),
    pitch=st.floats(-3.6, 18.0), roll=st.floats(-19.0, 19.0),
    shore=st.floats(0.0, 30.0), curv=st.sampled_from(CURVATURE_CLASSES),
)
def test_deflection_is_monotone_in_force(f1, f2, pitch, roll, shore, curv):
    lo, hi = sorted((f1, f2))
    for sensor in (DENSE, SPARSE):
        d_lo = deflections(sensor, press(lo, pitch, roll, shore, curv))[0]
        d_hi = deflections(sensor, press(hi, pitch, roll, shore, curv))[0]
        assert np.all(d_hi >= d_lo - 1e-12)


def test_dense_response_saturates():
    g = DENSE.force_response(np.array([2.5, 5.0]))
    assert g[0] / g[1] > 0.5
    lin = SPARSE.force_response(np.array([2.5, 5.0]))
    assert lin[0] / lin[1] == pytest.approx(0.5)


def test_dense_frames_drop_and_sparse_frames_rise():
    assert np.all(frames_noiseless(DENSE, press(3.0)) <= DENSE.baseline)
    assert np.all(frames_noiseless(SPARSE, press(3.0)) >= SPARSE.baseline)


def test_contact_moves_with_angles():
    a = deflections(DENSE, press(3.0, 0.0, -19.0))[0]
    b = deflections(DENSE, press(3.0, 0.0, 19.0))[0]
    assert np.argmax(a) != np.argmax(b)


# --- stimulus validation -------------------------------------------------------------------

@pytest.mark.parametrize("bad", [
    dict(force=5.1), dict(force=-0.1), dict(pitch=18.5), dict(pitch=-4.0),
    dict(roll=19.5), dict(shore=31.0), dict(force=float("nan")), dict(curvature="r3"),
])
def test_out_of_range_stimulus_is_rejected(bad):
    fields = dict(force=1.0, pitch=0.0, roll=0.0, shore=30.0, curvature="flat")
    fields.update(bad)
    with pytest.raises(StimulusError):
        Stimulus(**fields)


def test_bulk_stimuli_report_row():
    with pytest.raises(StimulusError, match="row 2"):
        Stimuli(np.array([1.0, 2.0, 6.0]), np.zeros(3), np.zeros(3), np.full(3, 30.0), np.full(3, "flat"))


def test_sensor_rejects_wrong_layout():
    with pytest.raises(ValueError):
        SensorModel("dense_nonlinear", np.zeros((12, 3)))
    with pytest.raises(ValueError):
        SensorModel.default("capacitive")
    with pytest.raises(ValueError):
        SensorModel.default("dense_nonlinear", hysteresis_tau=-1.0)


# --- dynamics ------------------------------------------------------------------------------

def up_down_sweep(n=400, peak=5.0):
    half = np.linspace(0.0, peak, n // 2)
    return np.concatenate([half, half[::-1]])


def sweep_response(sensor, force):
    sched = Stimuli(force, np.zeros(len(force)), np.zeros(len(force)),
                    np.full(len(force), 30.0), np.full(len(force), "flat"))
    frames = simulate_sequence(sensor, sched, seed=0)
    return np.abs(frames - sensor.baseline).sum(axis=1)


def test_lag_coefficient_examples():
    assert lag_coefficient(0.0) == 1.0
    assert lag_coefficient(DT / np.log(2)) == pytest.approx(0.5)
    assert 0 < lag_coefficient(0.4) < lag_coefficient(0.1) < 1


def test_vanishing_tau_and_noise_reproduces_the_noiseless_frames():
    sensor = SensorModel.default("dense_nonlinear", hysteresis_tau=0.0, noise_sigma=0.0)
    force = up_down_sweep(60)
    sched = Stimuli(force, np.full(60, 4.0), np.full(60, -7.0), np.full(60, 12.0), np.full(60, "r20"))
    np.testing.assert_array_equal(simulate_sequence(sensor, sched, seed=3), frames_noiseless(sensor, sched))
    tiny = SensorModel.default("dense_nonlinear", hysteresis_tau=1e-9, noise_sigma=0.0)
    np.testing.assert_allclose(simulate_sequence(tiny, sched, seed=3), frames_noiseless(sensor, sched), atol=1e-12)


def test_hysteresis_loop_area():
    force = up_down_sweep()
    for archetype in ("dense_nonlinear", "sparse_linear"):
        no_lag = SensorModel.default(archetype, hysteresis_tau=0.0, noise_sigma=0.0)
        assert hysteresis_loop_area(force, sweep_response(no_lag, force)) == pytest.approx(0.0, abs=1e-9)
        for tau in (DT, 0.1, 0.4, 0.5):
            lagged = SensorModel.default(archetype, hysteresis_tau=tau, noise_sigma=0.0)
            assert hysteresis_loop_area(force, sweep_response(lagged, force)) > 0


def test_loop_area_of_unit_square():
    assert hysteresis_loop_area(np.array([0, 1, 1, 0.0]), np.array([0, 0, 1, 1.0])) == pytest.approx(1.0)


def test_stream_matches_batch_simulation():
    sensor = SensorModel.default("sparse_linear")
    force = up_down_sweep(40)
    sched = Stimuli(force, np.full(40, 2.0), np.full(40, 5.0), np.full(40, 20.0), np.full(40, "flat"))
    stream = TactileStream(sensor, np.random.default_rng(9))
    streamed = np.array([stream.read(sched[i]) for i in range(40)])
    np.testing.assert_allclose(streamed, simulate_sequence(sensor, sched, np.random.default_rng(9)), atol=1e-14)


# --- datasets ------------------------------------------------------------------------------

SMALL = GridSpec(n_roll=2, n_pitch=2, n_shore=2, ramp_time=0.6)


def test_dataset_is_deterministic_in_the_seed():
    a = generate_dataset("B", DENSE, SMALL, seed=4)
    b = generate_dataset("B", DENSE, SMALL, seed=4)
    c = generate_dataset("B", DENSE, SMALL, seed=5)
    assert a.frames.tobytes() == b.frames.tobytes()
    assert a.frames.tobytes() != c.frames.tobytes()


def test_full_dataset_a_size():
    ds = generate_dataset("A", SPARSE, grid_for("A", "full"), seed=0)
    assert len(ds) == 49 * 1000 == 49_000
    assert ds.frames.shape == (49_000, 12)


def test_frame_times_are_sample_multiples():
    ds = generate_dataset("A", DENSE, SMALL, seed=0)
    k = ds.t / DT
    np.testing.assert_allclose(k, np.round(k), atol=1e-9)
    assert np.all(np.diff(ds.t) > 0)


def test_dataset_b_covers_every_combination():
    ds = generate_dataset("B", SPARSE, SMALL, seed=0)
    combos = {(p, r, s) for p, r, s in zip(ds.stimuli.pitch, ds.stimuli.roll, ds.stimuli.shore)}
    assert len(combos) == 2 * 2 * 2
    assert len(ds) == 8 * SMALL.frames_per_ramp


def test_dataset_c_classes_are_balanced():
    ds = generate_dataset("C", DENSE, GridSpec(ramps_per_class=2, ramp_time=0.9), seed=0)
    counts = np.bincount(ds.labels("curvature"), minlength=6)
    assert len(set(counts)) == 1 and counts[0] > 0
    assert set(ds.stimuli.pitch) == {0.0} and set(ds.stimuli.roll) == {0.0}
    assert ds.stimuli.force.min() >= 0 and ds.stimuli.force.max() <= 5.0


def test_dataset_subset_and_records():
    ds = generate_dataset("A", DENSE, SMALL, seed=0)
    sub = ds.subset(np.arange(5))
    assert len(sub) == 5
    frame, stim = next(sub.records())
    np.testing.assert_array_equal(frame.values, ds.frames[0])
    assert stim.force == ds.stimuli.force[0]


def test_grid_presets():
    assert grid_for("A", "full").frames_per_ramp == 1000
    assert grid_for("C", "full").ramps_per_class == 5
    with pytest.raises(ValueError):
        grid_for("D")
    with pytest.raises(ValueError):
        grid_for("A", "huge")
    with pytest.raises(ValueError):
        GridSpec(peak_force=6.0)


def test_sensor_parameters_round_trip():
    again = SensorModel.from_parameters(DENSE.parameters())
    s = press(2.0, 3.0, 4.0)
    np.testing.assert_array_equal(frames_noiseless(again, s), frames_noiseless(DENSE, s))
