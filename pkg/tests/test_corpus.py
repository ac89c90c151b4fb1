import numpy as np
import pytest

from silentspeech import corpus
from silentspeech.errors import DataError, ManifestError, NumericalError


def make_record(tmp_path, utt_id="u1", prompt="hello world", n_frames=10,
                mode="modal", split="train", with_labels=True, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.random((n_frames, 4, 6)).astype(np.float32)
    ult = f"{utt_id}.artf"
    corpus.write_frames(tmp_path / ult, frames)
    lab = None
    if with_labels:
        lab = f"{utt_id}.lab"
        corpus.write_labels(tmp_path / lab, rng.integers(0, 3, n_frames))
    return corpus.UtteranceRecord(
        utt_id=utt_id, speaker_id="spk1", session_id="s1", mode=mode,
        prompt=prompt, syllable_count=2, duration_s=n_frames / 20.0,
        ult_path=ult, vid_path=None, labels_path=lab, split=split,
        root=tmp_path,
    )


class TestFrameContainer:
    def test_round_trip_f32_bit_exact(self, tmp_path):
        frames = np.random.default_rng(1).random((5, 3, 7)).astype(np.float32)
        corpus.write_frames(tmp_path / "a.artf", frames)
        back = corpus.read_frames(tmp_path / "a.artf")
        assert back.dtype == np.float32
        assert np.array_equal(back.view(np.uint32), frames.view(np.uint32))

    def test_round_trip_u8(self, tmp_path):
        frames = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        corpus.write_frames(tmp_path / "b.artf", frames)
        assert np.array_equal(corpus.read_frames(tmp_path / "b.artf"), frames)

    def test_header_is_16_bytes(self, tmp_path):
        corpus.write_frames(tmp_path / "c.artf", np.zeros((1, 2, 2), dtype=np.uint8))
        assert (tmp_path / "c.artf").stat().st_size == 16 + 4

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "bad.artf").write_bytes(b"NOPE" + b"\0" * 20)
        with pytest.raises(DataError, match="magic"):
            corpus.read_frames(tmp_path / "bad.artf")

    def test_feature_round_trip(self, tmp_path):
        feats = np.random.default_rng(2).standard_normal((9, 5)).astype(np.float32)
        corpus.write_features(tmp_path / "f.artf", feats)
        assert np.allclose(corpus.read_features(tmp_path / "f.artf"), feats)

    def test_labels_round_trip(self, tmp_path):
        labs = np.array([0, 5, 65535, 3])
        corpus.write_labels(tmp_path / "l.lab", labs)
        assert np.array_equal(corpus.read_labels(tmp_path / "l.lab"), labs)


class TestManifest:
    def test_load_two_records(self, tmp_path):
        recs = [make_record(tmp_path, "u1", "a b", seed=1),
                make_record(tmp_path, "u2", "c d", seed=2)]
        man = corpus.Manifest(phones=["p0", "p1", "p2"], records=recs, root=tmp_path)
        corpus.save_manifest(man, tmp_path / "manifest.json")
        loaded = corpus.load_manifest(tmp_path / "manifest.json")
        assert len(loaded.records) == 2
        assert loaded.phones == ["p0", "p1", "p2"]

    def test_round_trip_structural_equality(self, tmp_path):
        recs = [make_record(tmp_path, f"u{i}", f"prompt {i}", seed=i) for i in range(3)]
        man = corpus.Manifest(phones=["p0", "p1", "p2"], records=recs, root=tmp_path)
        corpus.save_manifest(man, tmp_path / "m.json")
        loaded = corpus.load_manifest(tmp_path / "m.json")
        corpus.save_manifest(loaded, tmp_path / "m2.json")
        again = corpus.load_manifest(tmp_path / "m2.json")
        assert again == loaded
        for a, b in zip(loaded.records, again.records):
            assert np.array_equal(a.ultrasound().frames, b.ultrasound().frames)

    def test_label_length_mismatch_rejected(self, tmp_path):
        rec = make_record(tmp_path, "u1", "a b", n_frames=10)
        corpus.write_labels(tmp_path / rec.labels_path, np.zeros(7, dtype=np.int64))
        man = corpus.Manifest(phones=["p0"], records=[rec], root=tmp_path)
        corpus.save_manifest(man, tmp_path / "m.json")
        with pytest.raises(ManifestError, match="labels"):
            corpus.load_manifest(tmp_path / "m.json")

    def test_missing_frame_file_rejected(self, tmp_path):
        rec = make_record(tmp_path, "u1", "a b")
        (tmp_path / rec.ult_path).unlink()
        man = corpus.Manifest(phones=["p0"], records=[rec], root=tmp_path)
        corpus.save_manifest(man, tmp_path / "m.json")
        with pytest.raises(ManifestError, match="missing"):
            corpus.load_manifest(tmp_path / "m.json")

    def test_parse_error_reports_line(self, tmp_path):
        (tmp_path / "m.json").write_text('{"phones": [,]}')
        with pytest.raises(ManifestError, match="line"):
            corpus.load_manifest(tmp_path / "m.json")

    def test_lazy_loading_cached(self, tmp_path):
        rec = make_record(tmp_path, "u1", "a b")
        first = rec.ultrasound()
        assert rec.ultrasound() is first


class TestResizeBilinear:
    def test_constant_frame_any_target(self):
        frame = np.full((5, 9), 3.25)
        out = corpus.resize_bilinear(frame, 7, 4)
        assert out.shape == (7, 4)
        assert np.allclose(out, 3.25)

    def test_linear_midpoint(self):
        out = corpus.resize_bilinear(np.array([[0.0, 1.0]]), 1, 3)
        assert np.allclose(out, [[0.0, 0.5, 1.0]])

    def test_matches_reference_interpolator(self):
        rng = np.random.default_rng(3)
        frame = rng.random((8, 8))
        out = corpus.resize_bilinear(frame, 64, 128)

        # independent reference: naive per-pixel corner-aligned lookup
        ref = np.empty((64, 128))
        for i in range(64):
            for j in range(128):
                y = i * (8 - 1) / (64 - 1)
                x = j * (8 - 1) / (128 - 1)
                y0, x0 = int(y), int(x)
                y1, x1 = min(y0 + 1, 7), min(x0 + 1, 7)
                fy, fx = y - y0, x - x0
                ref[i, j] = (frame[y0, x0] * (1 - fy) * (1 - fx)
                             + frame[y0, x1] * (1 - fy) * fx
                             + frame[y1, x0] * fy * (1 - fx)
                             + frame[y1, x1] * fy * fx)
        assert np.max(np.abs(out - ref)) < 1e-6

    def test_preserves_bounds(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            frame = rng.random((6, 11)) * 10 - 5
            out = corpus.resize_bilinear(frame, 13, 5)
            assert out.min() >= frame.min() - 1e-12
            assert out.max() <= frame.max() + 1e-12

    def test_zero_sized_input_rejected(self):
        with pytest.raises(DataError):
            corpus.resize_bilinear(np.zeros((0, 4)), 2, 2)


class TestCropCenter:
    def test_video_to_ultrasound_geometry(self):
        frame = np.arange(120 * 160).reshape(120, 160)
        out = corpus.crop_center(frame, 64, 128)
        assert np.array_equal(out, frame[28:92, 16:144])

    def test_identity_crop(self):
        frame = np.random.default_rng(5).random((4, 4))
        assert np.array_equal(corpus.crop_center(frame, 4, 4), frame)

    def test_odd_margin_drops_bottom_right(self):
        frame = np.arange(25).reshape(5, 5)
        out = corpus.crop_center(frame, 4, 4)
        assert np.array_equal(out, frame[0:4, 0:4])

    def test_too_large_rejected(self):
        with pytest.raises(ValueError):
            corpus.crop_center(np.zeros((3, 3)), 4, 2)


class TestNormalize:
    def test_two_pixel_example(self):
        mean, std, normed = corpus.normalize([np.array([[1.0, 3.0]])])
        assert mean == 2.0 and std == 1.0
        assert np.allclose(normed[0], [[-1.0, 1.0]])

    def test_heldout_application_is_affine(self):
        mean, std, _ = corpus.normalize([np.array([[1.0, 3.0]])])
        x = np.array([[7.0]])
        assert corpus.apply_normalization(x, mean, std)[0, 0] == (7.0 - mean) / std

    def test_large_corpus_moments(self):
        rng = np.random.default_rng(6)
        seqs = [rng.random((20, 8, 8)) * 5 + 2 for _ in range(10)]
        _, _, normed = corpus.normalize(seqs)
        flat = np.concatenate([s.ravel() for s in normed])
        assert abs(flat.mean()) < 1e-6
        assert abs(flat.var() - 1.0) < 1e-4

    def test_constant_training_set_rejected(self):
        with pytest.raises(NumericalError):
            corpus.normalize([np.ones((3, 2, 2))])


class TestWindowing:
    def test_interior_anchor_indices(self):
        frames = np.arange(25)[:, None, None] * np.ones((1, 2, 2))
        samples = corpus.window_samples(frames)
        got = samples[12].channels[:, 0, 0]
        assert np.array_equal(got, [0, 4, 8, 12, 16, 20, 24])

    def test_left_clamping(self):
        frames = np.arange(25)[:, None, None] * np.ones((1, 1, 1))
        got = corpus.window_samples(frames)[0].channels[:, 0, 0]
        assert np.array_equal(got, [0, 0, 0, 0, 4, 8, 12])

    def test_single_frame_sequence(self):
        frames = np.full((1, 3, 3), 2.0)
        samples = corpus.window_samples(frames)
        assert len(samples) == 1
        assert np.allclose(samples[0].channels, 2.0)

    @pytest.mark.parametrize("n", [1, 2, 7, 13, 30])
    def test_one_sample_per_frame(self, n):
        frames = np.random.default_rng(n).random((n, 2, 2))
        assert len(corpus.window_samples(frames)) == n

    def test_labels_attached(self):
        frames = np.zeros((4, 2, 2))
        samples = corpus.window_samples(frames, labels=np.array([3, 1, 0, 2]))
        assert [s.label for s in samples] == [3, 1, 0, 2]


class TestNearestFrameIndices:
    def test_same_rate_identity(self):
        idx = corpus.nearest_frame_indices(10, 20.0, 10, 20.0)
        assert np.array_equal(idx, np.arange(10))

    def test_downsampling_monotone_within_bounds(self):
        idx = corpus.nearest_frame_indices(80, 80.0, 60, 60.0)
        assert np.all(np.diff(idx) >= 0)
        assert idx[0] == 0 and idx[-1] <= 79


class TestSplit:
    def _manifest(self, tmp_path, n=10):
        recs = [make_record(tmp_path, f"u{i}", f"prompt {i % 5}", seed=i,
                            with_labels=False) for i in range(n)]
        return corpus.Manifest(phones=["p0"], records=recs, root=tmp_path)

    def test_matching_prompts_go_to_test(self, tmp_path):
        man = self._manifest(tmp_path)
        out = corpus.split_prompt_disjoint(man, {"prompt 0", "prompt 1", "prompt 2"}, seed=0)
        for r in out.records:
            if r.prompt in {"prompt 0", "prompt 1", "prompt 2"}:
                assert r.split == "test"
            else:
                assert r.split in ("train", "validation")

    def test_disjoint_test_prompts_leave_all_in_train(self, tmp_path):
        man = self._manifest(tmp_path)
        out = corpus.split_prompt_disjoint(man, {"unseen"}, val_fraction=0.0, seed=0)
        assert all(r.split == "train" for r in out.records)

    def test_prompt_disjointness_over_seeds(self, tmp_path):
        man = self._manifest(tmp_path, n=20)
        for seed in range(100):
            out = corpus.split_prompt_disjoint(man, {"prompt 1", "prompt 3"},
                                               val_fraction=0.25, seed=seed)
            assert not (out.prompts("train") & out.prompts("test"))

    def test_empty_train_rejected(self, tmp_path):
        man = self._manifest(tmp_path, n=4)
        with pytest.raises(DataError):
            corpus.split_prompt_disjoint(
                man, {f"prompt {i}" for i in range(5)}, seed=0)
