"""Tests for the classifiers, the contrastive encoder, parameter
partitioning, and the checkpoint container."""

import numpy as np
import pytest

from cogspeech.autodiff import Tensor, grad_check, zero_grads
from cogspeech.models import (
    ACNNClassifier,
    BiGRUClassifier,
    BiGRULayer,
    CheckpointError,
    ContrastiveSpeechEncoder,
    GRUCell,
    ParameterPartition,
    Quantizer,
    load_checkpoint,
    mask_time_steps,
    restore,
    save_checkpoint,
    snapshot,
)


class TestGRUCell:
    def test_zero_weights_zero_state(self):
        cell = GRUCell(3, 4, np.random.default_rng(0))
        for p in cell.parameters("c").values():
            p.data[...] = 0.0
        h_next = cell.step(Tensor(np.ones(3)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(h_next.data, np.zeros(4))

    def test_gradients(self):
        rng = np.random.default_rng(1)
        cell = GRUCell(3, 4, rng)
        x = Tensor(rng.normal(size=(2, 3)))
        h = Tensor(rng.normal(size=(2, 4)))
        params = cell.parameters("c")
        assert grad_check(lambda: (cell.step(x, h) ** 2).sum(), params) < 1e-4

    def test_stepwise_equals_layer_bitwise(self):
        rng = np.random.default_rng(2)
        layer = BiGRULayer(5, 6, rng)
        x = rng.normal(size=(3, 7, 5))
        outputs, (final_fw, final_bw) = layer.forward(Tensor(x))

        h = Tensor(np.zeros((3, 6)))
        for t in range(7):
            h = layer.fw.step(Tensor(x[:, t, :]), h)
        assert h.data.tobytes() == final_fw.data.tobytes()

        h = Tensor(np.zeros((3, 6)))
        for t in reversed(range(7)):
            h = layer.bw.step(Tensor(x[:, t, :]), h)
        assert h.data.tobytes() == final_bw.data.tobytes()
        assert outputs.shape == (3, 7, 12)

    def test_dim_mismatch(self):
        cell = GRUCell(3, 4, np.random.default_rng(3))
        with pytest.raises(ValueError, match="expects input"):
            cell.step(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 4))))


class TestBiGRUClassifier:
    def test_length_one_sequence(self):
        rng = np.random.default_rng(4)
        model = BiGRUClassifier(input_dim=5, hidden_dim=3, rng=rng)
        x = rng.normal(size=(2, 1, 5))
        logits = model.forward(Tensor(x))
        assert logits.shape == (2, 3)
        # both final states come from that single frame
        seq, (fw, bw) = model.layer1.forward(Tensor(x))
        assert fw.data.tobytes() == seq.data[:, 0, :3].tobytes()
        assert bw.data.tobytes() == seq.data[:, 0, 3:].tobytes()

    def test_time_reversal_swaps_directions_with_tied_cells(self):
        rng = np.random.default_rng(5)
        layer = BiGRULayer(4, 3, rng)
        layer.bw = layer.fw  # tie the two directions
        x = rng.normal(size=(2, 6, 4))
        _, (fw, bw) = layer.forward(Tensor(x))
        _, (fw_rev, bw_rev) = layer.forward(Tensor(x[:, ::-1, :].copy()))
        assert fw.data.tobytes() == bw_rev.data.tobytes()
        assert bw.data.tobytes() == fw_rev.data.tobytes()

    def test_batch_logits_shape(self):
        rng = np.random.default_rng(6)
        model = BiGRUClassifier(input_dim=4, hidden_dim=3, rng=rng)
        logits = model.forward(Tensor(rng.normal(size=(8, 5, 4))))
        assert logits.shape == (8, 3)

    def test_empty_sequence_rejected(self):
        model = BiGRUClassifier(input_dim=4, hidden_dim=3, rng=np.random.default_rng(7))
        with pytest.raises(ValueError, match="empty"):
            model.forward(Tensor(np.zeros((2, 0, 4))))

    def test_gradients_small_config(self):
        rng = np.random.default_rng(8)
        model = BiGRUClassifier(input_dim=3, hidden_dim=2, rng=rng)
        x = Tensor(rng.normal(size=(2, 3, 3)))
        w = rng.normal(size=(2, 3))

        def loss():
            return (model.forward(x) * w).mean()

        assert grad_check(loss, model.parameters()) < 1e-4


class TestACNN:
    def test_min_input_length(self):
        model = ACNNClassifier(input_dim=4, rng=np.random.default_rng(9))
        # kernel 5, stride 2, three layers: 5 -> 13 -> 29
        assert model.min_input_length() == 29

    def test_too_short_names_minimum(self):
        model = ACNNClassifier(input_dim=4, rng=np.random.default_rng(10))
        with pytest.raises(ValueError, match="minimum is 29"):
            model.forward(Tensor(np.zeros((1, 28, 4))))

    def test_uniform_frames_uniform_attention(self):
        rng = np.random.default_rng(11)
        model = ACNNClassifier(input_dim=4, conv_channels=(3, 3, 3), rng=rng)
        frame = rng.normal(size=4)
        x = np.broadcast_to(frame, (1, 33, 4)).copy()
        logits, attention = model.forward_with_attention(Tensor(x))
        pooled_steps = attention.shape[1]
        np.testing.assert_allclose(
            attention.data, np.full((1, pooled_steps), 1.0 / pooled_steps), atol=1e-15
        )
        assert logits.shape == (1, 3)

    def test_attention_sums_to_one(self):
        rng = np.random.default_rng(12)
        model = ACNNClassifier(input_dim=5, conv_channels=(4, 4, 4), rng=rng)
        x = Tensor(rng.normal(size=(3, 40, 5)))
        _, attention = model.forward_with_attention(x)
        np.testing.assert_allclose(attention.data.sum(axis=1), 1.0, atol=1e-12)

    def test_gradients_small_config(self):
        rng = np.random.default_rng(13)
        model = ACNNClassifier(input_dim=2, conv_channels=(2, 2, 2), rng=rng)
        x = Tensor(rng.normal(size=(1, 29, 2)))
        w = rng.normal(size=(1, 3))

        def loss():
            return (model.forward(x) * w).mean()

        assert grad_check(loss, model.parameters()) < 1e-4


class TestLocalEncoder:
    def test_step_counts(self):
        encoder = ContrastiveSpeechEncoder(dim=8, num_codes=16, seed=0)
        assert encoder.encode_local(np.zeros(320)).shape == (1, 8)
        assert encoder.encode_local(np.zeros(3200)).shape == (10, 8)
        assert encoder.encode_local(np.zeros(3519)).shape == (10, 8)

    def test_too_short(self):
        encoder = ContrastiveSpeechEncoder(dim=8, num_codes=16, seed=0)
        with pytest.raises(ValueError, match="too short"):
            encoder.encode_local(np.zeros(319))

    def test_deterministic(self):
        encoder = ContrastiveSpeechEncoder(dim=8, num_codes=16, seed=1)
        rng = np.random.default_rng(14)
        wave = rng.uniform(-1, 1, 960)
        a = encoder.encode_local(wave)
        b = encoder.encode_local(wave)
        assert a.data.tobytes() == b.data.tobytes()

    def test_context_shape(self):
        encoder = ContrastiveSpeechEncoder(dim=8, num_codes=16, seed=2)
        waves = np.random.default_rng(15).uniform(-1, 1, (2, 1600))
        feats = encoder.forward_features(waves)
        assert feats.shape == (2, 5, 8)


class TestQuantizer:
    def test_exact_row_maps_to_itself(self):
        q = Quantizer(16, 4, np.random.default_rng(16))
        z = Tensor(q.codebook.data[7:8].copy())
        quantized, indices = q.quantize(z)
        assert indices.tolist() == [7]
        assert quantized.data.tobytes() == q.codebook.data[7:8].tobytes()

    def test_tie_breaks_to_lowest_index(self):
        q = Quantizer(8, 3, np.random.default_rng(17))
        z_val = np.array([[0.5, -0.25, 1.0]])
        offset = np.array([0.3, 0.4, -0.2])
        q.codebook.data[2] = z_val[0] + offset
        q.codebook.data[5] = z_val[0] - offset
        # push every other row far away
        for i in (0, 1, 3, 4, 6, 7):
            q.codebook.data[i] = 50.0 + i
        _, indices = q.quantize(Tensor(z_val))
        assert indices.tolist() == [2]

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(18)
        q = Quantizer(64, 6, rng)
        z = rng.normal(size=(1000, 6))
        _, indices = q.quantize(Tensor(z))
        for i in range(1000):
            dists = ((z[i] - q.codebook.data) ** 2).sum(axis=1)
            assert indices[i] == int(np.argmin(dists))

    def test_straight_through_gradient(self):
        rng = np.random.default_rng(19)
        q = Quantizer(8, 3, rng)
        z = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        quantized, indices = q.quantize(z)
        w = rng.normal(size=(5, 3))
        zero_grads([z, q.codebook])
        from cogspeech.autodiff import backward

        backward((quantized * w).sum())
        np.testing.assert_array_equal(z.grad, w)  # identity toward the latents
        expected = np.zeros_like(q.codebook.data)
        np.add.at(expected, indices, w)
        np.testing.assert_array_equal(q.codebook.grad, expected)


class TestMasking:
    def _encoder(self, seed=3):
        return ContrastiveSpeechEncoder(dim=6, num_codes=8, seed=seed)

    def test_forced_single_span_when_prob_zero(self):
        enc = self._encoder()
        z = Tensor(np.random.default_rng(20).normal(size=(12, 6)))
        _, indices = enc.mask(z, np.random.default_rng(0), mask_prob=0.0, span=4)
        assert 1 <= indices.size <= 4
        assert np.all(np.diff(indices) == 1)  # one contiguous span

    def test_prob_one_masks_everything(self):
        enc = self._encoder()
        z = Tensor(np.random.default_rng(21).normal(size=(9, 6)))
        _, indices = enc.mask(z, np.random.default_rng(1), mask_prob=1.0, span=4)
        assert indices.tolist() == list(range(9))

    def test_masked_positions_carry_embedding_bitwise(self):
        enc = self._encoder()
        z_data = np.random.default_rng(22).normal(size=(15, 6))
        masked, indices = enc.mask(Tensor(z_data), np.random.default_rng(2), mask_prob=0.3)
        unmasked = np.setdiff1d(np.arange(15), indices)
        assert masked.data[unmasked].tobytes() == z_data[unmasked].tobytes()
        for i in indices:
            assert masked.data[i].tobytes() == enc.mask_embedding.data.tobytes()

    def test_too_short_rejected(self):
        enc = self._encoder()
        with pytest.raises(ValueError, match="span"):
            enc.mask(Tensor(np.zeros((3, 6))), np.random.default_rng(3), span=4)


class TestPartition:
    def test_disjoint_and_complete(self):
        rng = np.random.default_rng(23)
        encoder = ContrastiveSpeechEncoder(dim=6, num_codes=8, seed=4)
        model = BiGRUClassifier(input_dim=6, hidden_dim=3, rng=rng)
        partition = ParameterPartition(
            {f"encoder.{k}": v for k, v in encoder.parameters().items()},
            {f"classifier.{k}": v for k, v in model.parameters().items()},
        )
        assert len(partition) == len(encoder.parameters()) + len(model.parameters())
        union = partition.all_parameters()
        for v in encoder.parameters().values():
            assert any(v is p for p in union.values())

    def test_name_overlap_rejected(self):
        t1, t2 = Tensor(np.zeros(2), requires_grad=True), Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ValueError, match="both sets"):
            ParameterPartition({"a": t1}, {"a": t2})

    def test_shared_tensor_rejected(self):
        t = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ValueError, match="both"):
            ParameterPartition({"a": t}, {"b": t})


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(24)
        model = BiGRUClassifier(input_dim=4, hidden_dim=3, rng=rng)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model.parameters())
        loaded = load_checkpoint(path)
        for name, p in model.parameters().items():
            assert loaded[name].tobytes() == p.data.tobytes()
            assert loaded[name].shape == p.data.shape

    def test_round_trip_through_restore(self, tmp_path):
        rng = np.random.default_rng(25)
        encoder = ContrastiveSpeechEncoder(dim=6, num_codes=8, seed=5)
        path = tmp_path / "enc.ckpt"
        save_checkpoint(path, encoder.parameters())
        original = snapshot(encoder.parameters())
        for p in encoder.parameters().values():
            p.data += rng.normal(size=p.data.shape)
        restore(encoder.parameters(), load_checkpoint(path))
        for name, p in encoder.parameters().items():
            assert p.data.tobytes() == original[name].tobytes()

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        save_checkpoint(path, {"w": Tensor(np.arange(4.0))})
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_scalar_and_shape_header(self, tmp_path):
        path = tmp_path / "s.ckpt"
        save_checkpoint(path, {"s": Tensor(3.5), "m": Tensor(np.ones((2, 3)))})
        loaded = load_checkpoint(path)
        assert loaded["s"].shape == () and loaded["s"] == 3.5
        assert loaded["m"].shape == (2, 3)

    def test_bad_name_rejected(self, tmp_path):
        with pytest.raises(CheckpointError, match="name"):
            save_checkpoint(tmp_path / "x.ckpt", {"has space": Tensor(np.zeros(2))})


class TestEncoderGradients:
    """Finite differences cannot see through the quantizer's argmin (the
    straight-through rule is a surrogate by definition), so the check
    splits: the differentiable surface with frozen quantized targets,
    and the codebook path where scatter-add is the true gradient."""

    def test_contrastive_differentiable_surface(self):
        from cogspeech.losses import contrastive_loss

        encoder = ContrastiveSpeechEncoder(dim=4, heads=2, context_layers=1, num_codes=6, seed=6)
        wave = np.random.default_rng(26).uniform(-1, 1, 320 * 6)

        # freeze quantized candidates at their initial values
        z0 = encoder.encode_local(wave)
        _, idx0 = encoder.mask(z0, np.random.default_rng(7), mask_prob=0.5)
        q0, _ = encoder.quantize(z0)
        donors = np.stack([np.roll(idx0, 1), np.roll(idx0, 2)], axis=1)
        positives = Tensor(q0.data[idx0].copy())
        distractors = Tensor(q0.data[donors].copy())

        def loss():
            z = encoder.encode_local(wave)
            masked, idx = encoder.mask(z, np.random.default_rng(7), mask_prob=0.5)
            contexts = encoder.context(masked)
            return contrastive_loss(contexts[idx], positives, distractors, temperature=0.1)

        params = {
            k: v for k, v in encoder.parameters().items() if k != "quantizer.codebook"
        }
        assert grad_check(loss, params) < 1e-4

    def test_contrastive_codebook_path(self):
        from cogspeech.losses import contrastive_loss

        encoder = ContrastiveSpeechEncoder(dim=4, heads=2, context_layers=1, num_codes=6, seed=8)
        rng = np.random.default_rng(27)
        z_data = rng.normal(size=(10, 4))
        contexts = Tensor(rng.normal(size=(4, 4)))
        idx = np.arange(4)
        donors = np.stack([np.roll(idx, 1), np.roll(idx, 2)], axis=1)

        def loss():
            quantized, _ = encoder.quantize(Tensor(z_data))
            return contrastive_loss(
                contexts, quantized[idx], quantized[donors], temperature=0.1
            )

        assert grad_check(loss, {"codebook": encoder.quantizer.codebook}) < 1e-4
