import numpy as np
import pytest

from moveintent import dsp, events
from moveintent.dataset import (
    MOVE,
    REST,
    build_dataset,
    holdout,
    split_and_balance,
)
from moveintent.errors import DataError
from moveintent.events import JOINTS, MovementEvent, PoseTrack
from moveintent.synth import HOME_POSE, SynthSpec, generate_pose, generate_session

WRIST = JOINTS.index("r_wrist")


def static_track(n=300, fps=30.0):
    xy = np.broadcast_to(HOME_POSE, (n, 7, 2)).copy()
    return PoseTrack(xy, np.ones((n, 7)), fps)


def track_from_steps(d, joint="r_wrist"):
    """Track whose ``joint`` moves along x by ``d[f]`` px at frame f."""
    t = static_track(len(d))
    t.xy[:, JOINTS.index(joint), 0] += np.cumsum(d)
    return t


class TestSmooth:
    def test_static(self):
        t = static_track()
        assert np.max(np.abs(events.smooth_pose(t).xy - t.xy)) < 1e-9

    def test_cubic(self):
        t = static_track(90)
        s = np.linspace(-1, 1, 90)
        t.xy[:, WRIST, 0] += 40 * s ** 3
        t.xy[:, WRIST, 1] += 10 * s ** 2 - 5 * s
        out = events.smooth_pose(t)
        assert np.max(np.abs(out.xy[10:-10] - t.xy[10:-10])) < 1e-9

    def test_componentwise(self, rng):
        t = static_track(60)
        t.xy += rng.normal(size=t.xy.shape)
        t.confidence[:] = rng.uniform(0.3, 1, size=t.confidence.shape)
        out = events.smooth_pose(t)
        for j in range(7):
            for k in range(2):
                assert np.array_equal(out.xy[:, j, k], dsp.savgol(t.xy[:, j, k], 21, 3))
        assert np.array_equal(out.confidence, t.confidence)

    def test_short(self):
        with pytest.raises(ValueError):
            events.smooth_pose(static_track(20))


class TestDisplacement:
    def test_static(self):
        assert np.all(events.wrist_displacement(static_track()) == 0)

    def test_three_four_five(self):
        t = static_track(10)
        t.xy[:, WRIST] += np.arange(10)[:, None] * np.array([3.0, 4.0])
        d = events.wrist_displacement(t)
        assert d[0] == 0 and np.allclose(d[1:], 5.0)

    def test_random_walk(self, rng):
        t = static_track(50)
        t.xy[:, WRIST] += np.cumsum(rng.normal(size=(50, 2)), axis=0)
        d = events.wrist_displacement(t)
        p = t.xy[:, WRIST]
        ref = [0.0] + [np.sqrt((p[i, 0] - p[i - 1, 0]) ** 2 + (p[i, 1] - p[i - 1, 1]) ** 2)
                       for i in range(1, 50)]
        assert np.max(np.abs(d - np.array(ref))) < 1e-12


class TestInitiations:
    def test_zero(self):
        assert events.detect_initiations(static_track()) == []

    def test_hand_rule(self):
        d = np.zeros(60)
        d[1:10] = 0.2
        d[10:15] = 1.5
        evs = events.detect_initiations(track_from_steps(d))
        assert [e.t_ms for e in evs] == [333]
        assert evs[0].kind == "initiation"

    def test_constant_drift(self):
        d = np.full(200, 0.8)
        d[0] = 0
        assert events.detect_initiations(track_from_steps(d)) == []

    def test_refractory(self):
        d = np.zeros(200)
        for f in (20, 40, 80):
            d[f:f + 5] = 2.0
        evs = events.detect_initiations(track_from_steps(d))
        # the 5-frame mean first exceeds 1 at frame 18 (3 of 5 frames at 2 px);
        # the burst at frame 40 falls inside the 1 s refractory period
        assert [e.t_ms for e in evs] == [600, 2600]

    def test_idempotent(self):
        t = events.smooth_pose(generate_pose(SynthSpec(n_events=5, seed=2))[0])
        assert events.detect_initiations(t) == events.detect_initiations(t)


class TestRest:
    def test_static_spacing(self):
        evs = events.detect_rest(static_track(300))
        times = [e.t_ms for e in evs]
        assert times[0] == 1000 and np.all(np.diff(times) == 1000)

    def test_elbow_drift(self):
        t = static_track(300)
        t.xy[:, JOINTS.index("l_elbow"), 1] += 0.6 * np.arange(300)
        assert events.detect_rest(t) == []

    def test_jump_excluded(self):
        t = static_track(400)
        t.xy[100:106, WRIST, 0] += 50.0
        frames = [events.ms_to_frame(e.t_ms, 30.0) for e in events.detect_rest(t)]
        assert frames
        assert all(f <= 100 - 30 or f >= 106 + 30 for f in frames)


class TestConfidenceGate:
    def _events(self):
        d = np.zeros(300)
        for f in (40, 150):
            d[f:f + 5] = 2.0
        t = track_from_steps(d)
        return t, events.detect_initiations(t)

    def test_all_high(self):
        t, evs = self._events()
        assert events.apply_confidence_gate(t, evs) == evs

    def test_all_low(self):
        t, evs = self._events()
        t.confidence[:] = 0.0
        assert events.apply_confidence_gate(t, evs) == []

    def test_dip_at_event(self):
        t, evs = self._events()
        assert len(evs) == 2
        t.confidence[40, WRIST] = 0.25
        assert events.apply_confidence_gate(t, evs) == evs[1:]

    def test_other_joint_ignored_for_initiation(self):
        t, evs = self._events()
        t.confidence[40, JOINTS.index("head")] = 0.0
        assert events.apply_confidence_gate(t, evs) == evs


class TestChunkToFrame:
    @pytest.mark.parametrize("start,chunk,frame", [(0, 0, 3), (9500, 0, 288), (9500, 4, 312)])
    def test_examples(self, start, chunk, frame):
        assert events.chunk_to_frame(start, chunk, 30.0, 0) == frame

    def test_alignment(self):
        assert events.chunk_to_frame(0, 0, 30.0, 7) == 10

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            events.chunk_to_frame(9500, 4, 30.0, 0, n_frames=300)
        with pytest.raises(IndexError):
            events.chunk_to_frame(-1000, 0, 30.0, 0)

    def test_half_up(self):
        # 50 ms at 30 fps is frame 1.5
        assert events.ms_to_frame(50, 30.0) == 2


class TestConditions:
    @pytest.mark.parametrize("name,lo", [("det", -500), ("pred", -1300), ("pred-b", -1800),
                                         ("pred_b", -1800)])
    def test_windows(self, name, lo):
        c = events.get_condition(name)
        assert c.window_start_ms == lo and c.window_end_ms - lo == 1000

    def test_unknown(self):
        with pytest.raises(ValueError):
            events.get_condition("late")


class TestFiles:
    def test_pose_roundtrip(self, tmp_path, rng):
        t = static_track(40)
        t.xy += rng.normal(size=t.xy.shape)
        events.write_pose_csv(tmp_path / "pose.csv", t)
        back = events.read_pose_csv(tmp_path / "pose.csv")
        assert np.array_equal(back.xy, t.xy) and np.array_equal(back.confidence, t.confidence)

    def test_events_roundtrip(self, tmp_path):
        evs = [MovementEvent(100, "initiation", "r_wrist"), MovementEvent(5000, "rest", "all")]
        events.write_events_jsonl(tmp_path / "e.jsonl", evs)
        assert events.read_events_jsonl(tmp_path / "e.jsonl") == evs

    def test_agreement(self):
        ref = [MovementEvent(t, "initiation", "r_wrist", "manual") for t in (1000, 5000, 9000)]
        auto = [MovementEvent(t, "initiation", "r_wrist") for t in (1033, 5200, 12000)]
        a = events.agreement(auto, ref)
        assert a["matched"] == 1 and a["false_alarms"] == 2 and a["misses"] == 2


@pytest.fixture(scope="module")
def small_session():
    spec = SynthSpec(n_channels=6, grid_rows=2, grid_cols=3, n_events=12, seed=4, day=3,
                     session_id="s3")
    return generate_session(spec)


class TestBuildDataset:
    @pytest.mark.parametrize("cond,offset", [("det", -500), ("pred", -1300), ("pred_b", -1800)])
    def test_window_geometry(self, small_session, cond, offset):
        ev = small_session.truth[3]
        s = build_dataset(small_session, [ev], cond)
        assert len(s) == 1
        assert s.window_start[0] == ev.t_ms + offset
        assert s.chunks().shape == (1, 5, 6, 200)
        assert s.frames.shape[:2] == (1, 5)

    def test_values_are_normalised_window(self, small_session):
        ev = small_session.truth[5]
        s = build_dataset(small_session, [ev], "det")
        rec = small_session.filtered().samples
        ws, ns = s.window_start[0], s.neigh_start[0]
        ref = dsp.normalize_window(rec[:, ws:ws + 1000], rec[:, ns:ns + 3000])
        assert np.max(np.abs(s.chunks()[0].transpose(1, 0, 2).reshape(6, 1000) - ref)) < 1e-5

    def test_neighbourhood_is_movement_free(self, small_session):
        s = build_dataset(small_session, small_session.truth, "det")
        inits = np.array([e.t_ms for e in small_session.truth])
        for ns in s.neigh_start:
            # no initiation inside the neighbourhood
            assert not np.any((inits >= ns) & (inits < ns + 3000))

    def test_out_of_bounds_skipped(self, small_session, caplog):
        ev = MovementEvent(200, "initiation", "r_wrist")
        s = build_dataset(small_session, [ev], "det")
        assert len(s) == 0
        assert "outside recording" in caplog.text

    def test_labels(self, small_session):
        evs = [small_session.truth[2], MovementEvent(small_session.truth[2].t_ms + 4000, "rest", "all")]
        s = build_dataset(small_session, evs, "det")
        assert s.labels.tolist() == [MOVE, REST]

    def test_det_contains_event(self, small_session):
        for cond in ("det", "pred", "pred_b"):
            s = build_dataset(small_session, small_session.truth, cond)
            inside = (s.t_ms >= s.window_start) & (s.t_ms < s.window_start + 1000)
            assert np.all(inside) if cond == "det" else not np.any(inside)


class TestSplit:
    def _samples(self, small_session, n_move, n_rest):
        from moveintent.dataset import concatenate

        base = build_dataset(small_session, small_session.truth[2:4], "det")
        idx = np.arange(n_move + n_rest) % len(base)
        s = concatenate([base]).subset(idx)
        s.labels = np.array([MOVE] * n_move + [REST] * n_rest, dtype=np.int8)
        s.days = np.where(np.arange(n_move + n_rest) % 5 == 0, 6, 2)
        return s

    def test_balancing(self, small_session):
        s = self._samples(small_session, 120, 170)
        tr, te = split_and_balance(s, {2}, 6, 0)
        assert tr.counts()["move"] == tr.counts()["rest"]
        assert te.counts()["move"] == te.counts()["rest"]
        assert set(tr.days) == {2} and set(te.days) == {6}

    def test_deterministic(self, small_session):
        s = self._samples(small_session, 60, 90)
        a = split_and_balance(s, {2}, 6, 5)
        b = split_and_balance(s, {2}, 6, 5)
        assert np.array_equal(a[0].t_ms, b[0].t_ms) and np.array_equal(a[1].labels, b[1].labels)

    def test_empty_class(self, small_session):
        s = self._samples(small_session, 30, 0)
        with pytest.raises(DataError, match="train split has no rest"):
            split_and_balance(s, {2}, 6, 0)

    def test_test_day_in_train(self, small_session):
        with pytest.raises(ValueError):
            split_and_balance(self._samples(small_session, 4, 4), {2, 6}, 6, 0)

    def test_holdout_stratified(self, small_session):
        s = self._samples(small_session, 40, 40)
        rest, held = holdout(s, 0.1, 1)
        assert held.counts() == {"move": 4, "rest": 4} and len(rest) == 72
