import numpy as np
import pandas as pd
import pytest

from app.datagen import StreamSpec, gen_rotating_stream
from app.exceptions import PreconditionError
from app.experiments import (
    GridResult,
    InstanceParams,
    cell_rng,
    provenance,
    run_alg3_trace,
    run_bgsub,
    run_online_track,
    run_phase_transition,
    run_sampling_comparison,
    run_speedup,
    track_stream,
)
from app.frames import FrameSequence, synthetic_scene
from app.pipelines import OnlineConfig
from app.solvers import SolverConfig

SMALL = InstanceParams(n1=60, n2=60, r=2, rho=0.02)


def test_cell_rng_is_keyed():
    assert cell_rng(3, 1, 2).integers(1 << 30) == cell_rng(3, 1, 2).integers(1 << 30)
    assert cell_rng(3, 1, 2).integers(1 << 30) != cell_rng(3, 2, 1).integers(1 << 30)


def test_provenance():
    lines = provenance("phase", {"trials": 2, "n": 60}, 7)
    assert lines == ["sketchdecomp phase", "seed=7", "args: n=60 trials=2"]


class TestGridResult:
    def test_lookup_and_frame(self):
        grid = GridResult([10, 20], [5], np.array([[0.5], [1.0]]), trials=2)
        assert grid.rate(20, 5) == 1.0
        frame = grid.to_frame()
        assert list(frame.columns) == ["m1", "m2", "trials", "success_rate", "mean_error"]
        assert len(frame) == 2

    def test_shape_mismatch(self):
        with pytest.raises(PreconditionError, match="grid shape"):
            GridResult([10], [5, 6], np.zeros((1, 1)), trials=1)

    def test_rates_out_of_range(self):
        with pytest.raises(PreconditionError, match=r"\[0, 1\]"):
            GridResult([10], [5], np.array([[1.5]]), trials=1)


class TestPhaseTransition:
    def test_axes_sorted_and_rates_bounded(self):
        grid = run_phase_transition(SMALL, [40, 10], [40], trials=2, seed=1, max_workers=1)
        assert grid.m1_values == [10, 40]
        assert grid.success_rate.shape == (2, 1)
        assert np.all((grid.success_rate >= 0) & (grid.success_rate <= 1))

    def test_threads_do_not_change_results(self):
        serial = run_phase_transition(SMALL, [20, 40], [20, 40], trials=2, seed=5, max_workers=1)
        threaded = run_phase_transition(SMALL, [20, 40], [20, 40], trials=2, seed=5, max_workers=4)
        np.testing.assert_array_equal(serial.success_rate, threaded.success_rate)
        np.testing.assert_array_equal(serial.mean_error, threaded.mean_error)

    def test_zero_trials(self):
        with pytest.raises(PreconditionError, match="trials"):
            run_phase_transition(SMALL, [10], [10], trials=0)


def test_sampling_comparison_layout():
    params = InstanceParams(model="clustered", n1=60, n2=60, r=2, clusters=2, rho=0.0)
    frame = run_sampling_comparison(params, [8, 4], trials=1, seed=2, max_workers=1)
    assert list(frame["m"]) == [4, 4, 8, 8]
    assert list(frame["method"]) == ["informative", "uniform-baseline"] * 2
    assert set(frame.columns) >= {"mean_error", "success_rate", "success"}


def test_sampling_comparison_row_sketch_factor():
    params = InstanceParams(model="clustered", n1=60, n2=60, r=2, clusters=2, rho=0.0)
    frame = run_sampling_comparison(
        params, [8], trials=1, seed=2, max_workers=1, row_sketch_factor=40
    )
    informative = frame[frame["method"] == "informative"].iloc[0]
    assert informative["mean_error"] == float("inf")
    assert not informative["success"]


def test_alg3_trace():
    params = InstanceParams(model="doubly_clustered", n1=60, n2=60, r=4, clusters=2, rho=0.0)
    frame = run_alg3_trace(params, C=3, trials=2, seed=0, max_cycles=4, max_workers=1)
    assert set(frame["trial"]) == {0, 1}
    for _, rows in frame.groupby("trial"):
        assert list(rows["cycle"]) == list(range(1, len(rows) + 1))
        assert pd.isna(rows["column_rank"].iloc[-1])
        assert list(rows["reached"]) == [rank >= 4 for rank in rows["rank"]]


class TestOnlineTrack:
    def test_static_stream(self, rng):
        spec = StreamSpec(n1=50, r=2, alpha=0.0, length=30)
        stream = list(gen_rotating_stream(spec, rng))
        cfg = OnlineConfig(r_hat=2, solver=SolverConfig(lam=1.0))
        frame = track_stream(
            (c.data for c in stream), cfg, rng, truth=[c.low_rank for c in stream]
        )
        assert list(frame["t"]) == list(range(10, 30))
        assert frame["normalized_error"].max() <= 1e-6
        assert frame["refit"].sum() == 5

    def test_short_stream(self, rng):
        with pytest.raises(PreconditionError, match="initialization needs"):
            track_stream([np.ones(10)] * 3, OnlineConfig(r_hat=2), rng)

    def test_run_online_track(self):
        spec = StreamSpec(n1=40, r=2, alpha=0.01, length=25, rho=0.01)
        frame = run_online_track(spec, OnlineConfig(r_hat=2), seed=3)
        assert len(frame) == 15
        assert {"t", "sparse_l1", "refit", "normalized_error"} <= set(frame.columns)


class TestBgsub:
    def test_static_frames_have_no_foreground(self, rng):
        bg = rng.uniform(20, 200, (12, 16))
        frames = FrameSequence.from_images([bg] * 5)
        result = run_bgsub(frames, FrameSequence.from_images([bg]), m2=100)
        assert np.abs(result.sparse).max() <= 1e-6
        assert result.pixels_used == 100

    def test_finds_the_moving_square(self, rng):
        scene = synthetic_scene(30, 40, 10, rng, square=6)
        result = run_bgsub(scene.frames, scene.backgrounds, m2=600, seed=4)
        np.testing.assert_array_equal(result.foreground_mask(), scene.masks)
        assert len(result.low_rank_frames()) == 10

    def test_background_size_mismatch(self, rng):
        frames = FrameSequence.from_images([np.zeros((4, 4))] * 3)
        with pytest.raises(PreconditionError, match="background frames"):
            run_bgsub(frames, FrameSequence.from_images([np.zeros((4, 5))]), m2=8)


@pytest.mark.slow
def test_speedup_row():
    frame = run_speedup(200, 3, 0.01, 40, seed=1)
    assert len(frame) == 1
    row = frame.iloc[0]
    assert row["speedup"] > 0
    assert row["sketch_error"] < 1e-2
