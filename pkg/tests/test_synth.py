import json
import math

import numpy as np
import pytest

from rangepose.core import PoseClass
from rangepose.imageio import MissingYRef, PoseLabel, Role, load_manifest
from rangepose.synth import (
    FULL_SCHEDULE, SINGLE_AXIS, COMPOSITES, InvalidParams, IOFailure, SynthFaceParams,
    generate, make_corpus, render_depth, rotation_matrix, subject_params,
)


def apex_height(p: SynthFaceParams) -> float:
    """Surface height at the nose apex, written out by hand."""
    pit = math.exp(-(p.corner_h**2 + p.corner_w**2) / (2 * p.corner_width**2))
    return p.head_radius + p.nose_height - 2 * p.corner_depth * pit


class TestGenerate:
    def test_frontal_is_mirror_symmetric(self):
        img, gt = generate(SynthFaceParams())
        assert gt.apex == (50, 50)
        # the eyes are separated along rows, so the mirror flips rows
        np.testing.assert_array_equal(img.valid, img.valid[::-1])
        assert np.array_equal(img.depth[img.valid], img.depth[::-1][img.valid[::-1]])

    def test_frontal_apex_is_depth_argmax(self):
        img, gt = generate(SynthFaceParams())
        assert np.unravel_index(np.nanargmax(img.depth), img.shape) == tuple(gt.apex)
        assert img.depth[gt.apex] == pytest.approx(apex_height(SynthFaceParams()), abs=1e-9)

    @pytest.mark.parametrize("yaw", [10.0, -25.0])
    def test_yaw_shift_matches_vertex_projection(self, yaw):
        p = SynthFaceParams().posed(yaw=yaw)
        _, gt = generate(p)
        z = apex_height(p)
        t = math.radians(yaw)
        want_u = 50 + z * math.sin(t)
        assert gt.apex_xy == pytest.approx((want_u, 50.0), abs=1e-9)
        assert gt.apex_depth == pytest.approx(z * math.cos(t), abs=1e-9)
        assert gt.apex == (round(want_u), 50)

    def test_yaw_apex_is_where_the_render_says(self):
        p = SynthFaceParams().posed(yaw=10.0)
        img, gt = generate(p)
        assert gt.apex_visible
        assert img.depth[gt.apex] == pytest.approx(gt.apex_depth, abs=0.5)

    def test_pitch_moves_apex_across_eye_axis(self):
        _, gt = generate(SynthFaceParams().posed(pitch=18.0))
        assert gt.apex.u == 50 and gt.apex.v > 50

    def test_roll_keeps_apex_depth_and_turns_landmarks_rigidly(self):
        p0 = SynthFaceParams()
        img0, gt0 = generate(p0)
        img1, gt1 = generate(p0.posed(roll=30.0))
        assert gt1.apex_depth == pytest.approx(gt0.apex_depth, abs=1e-12)
        assert img1.depth[gt1.apex] == pytest.approx(img0.depth[gt0.apex], abs=1e-9)
        t = math.radians(30.0)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        for s0, s1 in zip(gt0.sockets_xy, gt1.sockets_xy):
            want = rot @ (np.array(s0) - 50.0) + 50.0
            np.testing.assert_allclose(s1, want, atol=1e-9)
        for s0, s1 in zip(gt0.sockets_xy, gt1.sockets):
            want = rot @ (np.array(s0) - 50.0) + 50.0
            assert max(abs(want - np.array(s1))) <= 1.0

    def test_rotation_order_is_yaw_then_pitch_then_roll(self):
        want = rotation_matrix(0, 0, 15) @ rotation_matrix(0, -20, 0) @ rotation_matrix(30, 0, 0)
        np.testing.assert_allclose(rotation_matrix(30, -20, 15), want, atol=1e-12)
        assert (rotation_matrix(30, 0, 0) @ [0, 0, 1])[0] > 0
        assert (rotation_matrix(0, 30, 0) @ [0, 0, 1])[1] > 0
        np.testing.assert_allclose(rotation_matrix(30, -20, 15) @ rotation_matrix(30, -20, 15).T, np.eye(3), atol=1e-12)

    def test_deterministic(self):
        p = SynthFaceParams(noise_sigma=0.5, spike_rate=0.02, seed=7).posed(yaw=20.0, seed=7)
        a, ga = generate(p)
        b, gb = generate(p)
        assert a.depth.tobytes() == b.depth.tobytes()
        assert ga == gb

    def test_spike_record(self):
        p = SynthFaceParams(spike_rate=0.01, seed=3)
        clean, _ = generate(SynthFaceParams())
        img, gt = generate(p)
        diff = np.where(img.valid, img.depth - clean.depth, 0.0)
        hit = np.argwhere(np.abs(diff) > 0)
        assert [tuple(x) for x in hit] == [tuple(s) for s in gt.spikes]
        assert np.allclose(np.abs(diff[tuple(hit.T)]), p.spike_amp)
        n, rate = clean.n_valid, 0.01
        assert abs(len(gt.spikes) - n * rate) <= 4 * math.sqrt(n * rate * (1 - rate))

    def test_noise_level(self):
        clean, _ = generate(SynthFaceParams())
        noisy, _ = generate(SynthFaceParams(noise_sigma=0.5, seed=1))
        r = (noisy.depth - clean.depth)[clean.valid]
        assert np.std(r) == pytest.approx(0.5, rel=0.05)
        assert np.array_equal(noisy.valid, clean.valid)

    @pytest.mark.parametrize("angles, label", [
        ((0, 0, 0), PoseClass.FRONTAL), ((0, 5, 0), PoseClass.ROTATED_X),
        ((-40, 0, 0), PoseClass.ROTATED_Y), ((0, 0, 18), PoseClass.ROTATED_Z),
        ((42, 10, 0), PoseClass.POSITIVE_YX), ((42, -10, 0), PoseClass.NEGATIVE_YX),
        ((10, 0, 10), None),
    ])
    def test_label(self, angles, label):
        _, gt = generate(SynthFaceParams(grid=41, head_radius=12, face_half_width=10,
                                         face_half_height=10, nose_height=5, corner_w=-5,
                                         corner_h=3, nose_width=2, nose_length=2).posed(*angles))
        assert gt.label is label

    def test_cols_axis_transposes(self):
        a, ga = generate(SynthFaceParams().posed(yaw=10.0))
        b, gb = generate(SynthFaceParams(eye_axis="cols").posed(yaw=10.0))
        np.testing.assert_array_equal(b.valid, a.valid.T)
        np.testing.assert_allclose(b.depth[b.valid], a.depth.T[b.valid], atol=1e-9)
        assert gb.apex == ga.apex[::-1]

    def test_self_occlusion_hides_far_socket(self):
        _, gt = generate(SynthFaceParams().posed(yaw=60.0))
        assert gt.sockets_visible == (True, False)

    def test_empty_cells_are_invalid(self):
        img, _ = generate(SynthFaceParams())
        assert not img.valid[0, 0] and img.valid[50, 50]
        assert np.isnan(render_depth(SynthFaceParams().posed(yaw=30))[0, 0])

    @pytest.mark.parametrize("kw", [
        {"yaw_deg": 61.0}, {"roll_deg": -70.0}, {"noise_sigma": -0.1}, {"spike_rate": 1.5},
        {"grid": 2}, {"head_radius": 0.0}, {"face_half_width": 31.0}, {"eye_axis": "up"},
        {"seed": -1}, {"corner_depth": -1.0}, {"apex_h": 40.0},
    ])
    def test_invalid_params(self, kw):
        with pytest.raises(InvalidParams):
            generate(SynthFaceParams(**kw))

    def test_jitter_keeps_params_valid(self):
        for s in range(200):
            subject_params(SynthFaceParams(), 0, s).validate()

    def test_ground_truth_serialises(self):
        _, gt = generate(SynthFaceParams(spike_rate=0.001, seed=2))
        d = json.loads(json.dumps(gt.to_dict()))
        assert d["label"] == "FRONTAL" and d["apex"] == [50, 50]


class TestCorpus:
    def test_counts_for_x_schedule(self, tmp_path):
        x_only = [lab for lab in SINGLE_AXIS if lab.pose is PoseClass.ROTATED_X]
        m = make_corpus(x_only, 10, tmp_path, seed=1, base=SynthFaceParams(grid=61, head_radius=18,
                        face_half_width=16, face_half_height=17, nose_height=8, nose_width=2.7,
                        nose_length=3.3, corner_h=4.2, corner_w=-7.2, corner_width=1.8, corner_depth=1.8))
        assert len(m.probes()) == 60
        assert sum(e.role is Role.FRONTAL_REF for e in m.entries) == 10
        assert load_manifest((tmp_path / "manifest.txt").read_bytes()) == m
        truth = json.loads((tmp_path / "truth.json").read_text())
        assert set(truth) == {e.path for e in m.entries}
        assert all((tmp_path / e.path).exists() for e in m.entries)

    def test_composites_without_y_refs(self, tmp_path):
        with pytest.raises(MissingYRef):
            make_corpus(COMPOSITES, 1, tmp_path, y_refs=False)

    def test_y_refs_written_for_composite_yaws(self, tmp_path):
        m = make_corpus(COMPOSITES, 1, tmp_path)
        refs = [e for e in m.entries if e.role is Role.Y_REF]
        assert [str(e.label) for e in refs] == ["y:+42"]

    def test_same_seed_same_bytes(self, tmp_path):
        sched = [PoseLabel.parse("z:+18"), PoseLabel.parse("y:-10")]
        make_corpus(sched, 2, tmp_path / "a", seed=5)
        make_corpus(sched, 2, tmp_path / "b", seed=5)
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_subjects_differ(self, tmp_path):
        make_corpus([PoseLabel.parse("x:+5")], 2, tmp_path)
        assert (tmp_path / "s000/x_p5.rgz").read_bytes() != (tmp_path / "s001/x_p5.rgz").read_bytes()

    def test_unwritable_destination(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(IOFailure):
            make_corpus([PoseLabel.parse("x:+5")], 1, blocker / "sub")

    def test_full_schedule_shape(self):
        axes = [lab.axis for lab in FULL_SCHEDULE]
        assert axes.count("X") == 6 and axes.count("Z") == 6
        assert axes.count("Y") == 8 and axes.count("YX") == 2
