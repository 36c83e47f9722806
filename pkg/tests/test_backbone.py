"""CRNN contract: shapes, deterministic seeded init, parameter-count
regression, checkpoint round-trip, and gradient correctness against central
finite differences."""
import numpy as np
import pytest
import torch
import torch.nn.functional as F

from fewshot_audio.backbone import (
    CRNN,
    CRNNConfig,
    build_crnn,
    conv_output_shape,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)

TINY = CRNNConfig(conv_channels=(4, 4), rnn_hidden=8, head_dim=3)


class TestShapes:
    def test_conv_output_shape_default(self):
        # 64 mels through four 2x pools -> 4; 498 frames -> 249,124,62,31.
        assert conv_output_shape(CRNNConfig(), 64, 498) == (4, 31)

    def test_too_small_input_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            conv_output_shape(CRNNConfig(), 8, 498)
        with pytest.raises(ValueError, match="too small"):
            build_crnn(CRNNConfig(), n_mels=8)

    def test_classifier_head_width(self):
        model = build_crnn(CRNNConfig(conv_channels=(8, 8), rnn_hidden=16, head_dim=5), 16)
        out = model(torch.randn(2, 1, 16, 12))
        assert out.shape == (2, 5)

    def test_embedding_head_width(self):
        model = build_crnn(CRNNConfig(conv_channels=(8, 8), rnn_hidden=16, head_dim=64), 16)
        assert model(torch.randn(3, 1, 16, 12)).shape == (3, 64)

    def test_batch_of_one(self):
        model = build_crnn(TINY, 8)
        assert model(torch.randn(1, 1, 8, 8)).shape == (1, 3)

    def test_channel_axis_added_for_3d_input(self):
        model = build_crnn(TINY, 8)
        assert model(torch.randn(2, 8, 8)).shape == (2, 3)

    def test_wrong_mel_count_rejected(self):
        model = build_crnn(TINY, 8)
        with pytest.raises(ValueError, match="expected input"):
            model(torch.randn(2, 1, 16, 8))


class TestDeterminism:
    def test_parameter_count_frozen_default(self):
        # Regression values from the implementation's own shape algebra,
        # computed once and frozen.
        assert parameter_count(build_crnn(CRNNConfig(), 64)) == 177920
        desk = CRNNConfig(conv_channels=(8, 8, 8, 8), rnn_hidden=32, head_dim=5)
        assert parameter_count(build_crnn(desk, 32)) == 6861

    def test_seeded_init_reproducible(self):
        a = build_crnn(TINY, 8, seed=3)
        b = build_crnn(TINY, 8, seed=3)
        for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
            assert torch.equal(pa, pb)

    def test_different_seeds_differ(self):
        a = build_crnn(TINY, 8, seed=1)
        b = build_crnn(TINY, 8, seed=2)
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.state_dict().values(), b.state_dict().values())
        )

    def test_zero_head(self):
        model = build_crnn(TINY, 8, seed=0, zero_head=True)
        assert torch.equal(model.head.weight, torch.zeros_like(model.head.weight))

    def test_global_rng_not_disturbed(self):
        torch.manual_seed(123)
        before = torch.rand(3)
        torch.manual_seed(123)
        build_crnn(TINY, 8, seed=99)
        after = torch.rand(3)
        assert torch.equal(before, after)

    def test_duplicated_rows_identical_outputs(self):
        x = torch.randn(1, 1, 8, 8)
        batch = torch.cat([x, x, torch.randn(1, 1, 8, 8)])
        for running in (False, True):
            cfg = CRNNConfig(conv_channels=(4, 4), rnn_hidden=8, head_dim=3,
                             bn_running_stats=running)
            model = build_crnn(cfg, 8)
            model.eval()
            with torch.no_grad():
                out = model(batch)
            assert torch.equal(out[0], out[1])

    def test_inference_deterministic(self):
        model = build_crnn(TINY, 8)
        model.eval()
        x = torch.randn(4, 1, 8, 8)
        with torch.no_grad():
            assert torch.equal(model(x), model(x))


class TestGradients:
    def test_matches_central_finite_differences(self):
        # Tiny 8-mel model in float64; subgradient kinks (ReLU/max-pool) are
        # measure-zero at a generic random point.
        torch.manual_seed(0)
        model = build_crnn(TINY, 8, seed=5).double()
        x = torch.randn(4, 1, 8, 12, dtype=torch.float64)
        y = torch.tensor([0, 1, 2, 0])

        def loss_fn():
            return F.cross_entropy(model(x), y)

        loss = loss_fn()
        loss.backward()
        h = 1e-6
        rng = np.random.default_rng(0)
        checked = 0
        for name, p in model.named_parameters():
            flat = p.detach().view(-1)
            grad = p.grad.view(-1)
            for idx in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
                orig = flat[idx].item()
                with torch.no_grad():
                    flat[idx] = orig + h
                    up = loss_fn().item()
                    flat[idx] = orig - h
                    down = loss_fn().item()
                    flat[idx] = orig
                fd = (up - down) / (2 * h)
                analytic = grad[idx].item()
                if max(abs(fd), abs(analytic)) < 1e-7:
                    # dead unit: both gradients are zero at FD resolution
                    assert abs(fd - analytic) < 1e-7
                else:
                    denom = max(abs(fd), abs(analytic))
                    assert abs(fd - analytic) / denom < 1e-3, (name, idx, fd, analytic)
                checked += 1
        assert checked >= 40


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        model = build_crnn(TINY, 8, seed=7)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, seed=7, step=123, algorithm="protonet",
                        extras={"note": "x"})
        payload = load_checkpoint(path)
        assert payload["seed"] == 7
        assert payload["step"] == 123
        assert payload["algorithm"] == "protonet"
        assert payload["extras"] == {"note": "x"}
        assert payload["model"].config == model.config
        for a, b in zip(payload["model"].state_dict().values(), model.state_dict().values()):
            assert torch.equal(a, b)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "never_trained.pt")

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.pt"
        torch.save({"foo": 1}, path)
        with pytest.raises(ValueError, match="not a recognised checkpoint"):
            load_checkpoint(path)

    def test_config_round_trip(self):
        cfg = CRNNConfig(conv_channels=(8, 8), rnn_hidden=16, head_dim=5, bn_running_stats=True)
        assert CRNNConfig.from_dict(cfg.to_dict()) == cfg
