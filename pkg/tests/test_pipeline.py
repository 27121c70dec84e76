import json

import numpy as np
import pytest

from rangepose.core import RangeImage
from rangepose.landmarks import NoCandidates
from rangepose.pipeline import Config, ConfigError, PipelineError, preprocess_image, run_pipeline
from rangepose.preprocess import TooFewValidPixels
from rangepose.synth import SynthFaceParams, generate


class TestConfig:
    def test_defaults(self):
        cfg = Config()
        assert cfg.preprocess.order == ("crop", "despike", "smooth")
        assert cfg.curvature.radius == 2 and cfg.landmarks.min_sep == 8
        assert (cfg.pose.e, cfg.pose.m) == (2, 3)

    def test_round_trip(self, tmp_path):
        cfg = Config().override("pose.e", 3).override("preprocess.order", ["smooth"])
        assert Config.loads(cfg.dumps()) == cfg
        path = tmp_path / "c.json"
        path.write_text(cfg.dumps())
        assert Config.load(path) == cfg

    def test_partial_file_keeps_defaults(self):
        cfg = Config.loads(json.dumps({"landmarks": {"k_thresh": 0.001}}))
        assert cfg.landmarks.k_thresh == 0.001 and cfg.pose == Config().pose

    @pytest.mark.parametrize("text", [
        '{"pose": {"f": 1}}', '{"posture": {}}', '{"pose": 3}', "not json",
        '{"preprocess": {"order": ["crop", "blur"]}}',
    ])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            Config.loads(text)

    def test_override_parses_json_values(self):
        cfg = Config().override("curvature.eps_k", "1e-5").override("pose.eye_axis", "cols")
        assert cfg.curvature.eps_k == 1e-5 and cfg.pose.eye_axis == "cols"
        with pytest.raises(ConfigError):
            Config().override("pose.nope", 1)


class TestPipeline:
    def test_clean_frontal_nose(self):
        img, gt = generate(SynthFaceParams())
        lm = run_pipeline(img)
        assert max(abs(a - b) for a, b in zip(lm.nose.at, gt.apex)) <= 1
        for c, s in zip(sorted(c.at for c in lm.corners), sorted(gt.sockets)):
            assert max(abs(a - b) for a, b in zip(c, s)) <= 3

    def test_all_invalid_fails_at_crop(self):
        img = RangeImage(np.full((20, 20), np.nan), np.zeros((20, 20), bool))
        with pytest.raises(PipelineError) as info:
            run_pipeline(img)
        assert info.value.stage == "crop"
        assert isinstance(info.value.__cause__, TooFewValidPixels)

    def test_flat_face_fails_at_landmarks(self):
        img = RangeImage.from_array(np.full((30, 30), 5.0))
        with pytest.raises(PipelineError) as info:
            run_pipeline(img)
        assert info.value.stage == "landmarks"
        assert isinstance(info.value.__cause__, NoCandidates)

    def test_despiking_protects_the_nose(self):
        img, gt = generate(SynthFaceParams())
        d = img.filled(np.nan)
        d[40, 62] += 200.0  # tall enough to survive smoothing and beat the nose
        spiked = RangeImage(d, img.valid)
        no_despike = Config().override("preprocess.order", ["crop", "smooth"])
        assert run_pipeline(spiked, no_despike).nose.at == (40, 62)
        lm = run_pipeline(spiked)
        assert max(abs(a - b) for a, b in zip(lm.nose.at, gt.apex)) <= 1

    def test_stage_order_is_configurable(self):
        img, _ = generate(SynthFaceParams(noise_sigma=0.3, seed=2))
        raw = preprocess_image(img, Config().override("preprocess.order", []).preprocess)
        assert raw == img
        smooth = preprocess_image(img, Config().override("preprocess.order", ["smooth"]).preprocess)
        assert np.array_equal(smooth.valid, img.valid)
        assert np.nanstd(np.diff(smooth.depth, axis=0)) < np.nanstd(np.diff(img.depth, axis=0))

    def test_deterministic(self):
        img, _ = generate(SynthFaceParams(noise_sigma=0.5, spike_rate=0.01, seed=4).posed(yaw=18, seed=4))
        assert run_pipeline(img) == run_pipeline(img)
