import csv

import pytest
import torch

from stylefuse.codec import ImageAsset
from stylefuse.errors import CapabilityError, ShapeError
from stylefuse.metrics import (FeatureExtractor, clip_similarity, content_loss,
                               gram_matrix, lpips_distance, pixel_mse, style_loss,
                               write_report)

from conftest import rand_image


def test_losses_zero_on_identity():
    img = rand_image(16, 1)
    assert content_loss(img, img) == 0.0
    assert style_loss(img, img) == 0.0
    assert pixel_mse(img, img) == 0.0


def test_losses_symmetric():
    a, b = rand_image(16, 1), rand_image(16, 2)
    assert content_loss(a, b) == pytest.approx(content_loss(b, a), rel=1e-6)
    assert style_loss(a, b) == pytest.approx(style_loss(b, a), rel=1e-6)
    assert pixel_mse(a, b) == pytest.approx(pixel_mse(b, a), rel=1e-12)


def test_content_loss_monotone_in_noise_level():
    base = rand_image(16, 3)
    g = torch.Generator().manual_seed(0)
    noise = torch.randn(3, 16, 16, generator=g)
    losses = []
    for eps in (0.02, 0.05, 0.1, 0.2, 0.3):
        noisy = ImageAsset((base.pixels + eps * noise), "output")
        losses.append(content_loss(noisy, base))
    assert all(a < b for a, b in zip(losses, losses[1:])), losses
    assert losses[0] > 0.0


def test_unrelated_images_exceed_small_noise():
    base = rand_image(16, 3)
    g = torch.Generator().manual_seed(0)
    noisy = ImageAsset(base.pixels + 0.02 * torch.randn(3, 16, 16, generator=g),
                       "output")
    unrelated = rand_image(16, 77)
    assert content_loss(unrelated, base) > content_loss(noisy, base)


def test_gram_spatial_permutation_invariance_feature_level():
    g = torch.Generator().manual_seed(1)
    feat = torch.randn(6, 8, 8, generator=g)
    perm = torch.randperm(64, generator=g)
    shuffled = feat.reshape(6, 64)[:, perm].reshape(6, 8, 8)
    assert torch.allclose(gram_matrix(feat), gram_matrix(shuffled), atol=1e-6)


def test_style_loss_zero_on_pixel_shuffled_copy_with_pointwise_extractor():
    # 1x1 kernels make image-level shuffling a pure feature permutation
    fx = FeatureExtractor(kernel_size=1, seed=3)
    img = rand_image(16, 4, "style")
    g = torch.Generator().manual_seed(2)
    perm = torch.randperm(256, generator=g)
    shuffled = ImageAsset(img.pixels.reshape(3, 256)[:, perm].reshape(3, 16, 16),
                          "style")
    assert style_loss(shuffled, img, fx) <= 1e-6
    assert style_loss(shuffled, img, fx) == pytest.approx(0.0, abs=1e-6)


def test_style_loss_matches_bruteforce_gram():
    a, b = rand_image(16, 5), rand_image(16, 6)
    fx = FeatureExtractor(seed=1)
    total = 0.0
    for fa, fb in zip(fx.features(a), fx.features(b)):
        c = fa.shape[0]
        ga = torch.zeros(c, c)
        gb = torch.zeros(c, c)
        for i in range(c):               # naive double loop oracle
            for j in range(c):
                ga[i, j] = (fa[i] * fa[j]).sum() / fa[i].numel()
                gb[i, j] = (fb[i] * fb[j]).sum() / fb[i].numel()
        total += ((ga - gb) ** 2).mean().item()
    assert style_loss(a, b, fx) == pytest.approx(total / len(fx.layers), rel=1e-4)


def test_pixel_mse_hand_case():
    a = ImageAsset(torch.zeros(3, 1, 2), "content")
    pix = torch.zeros(3, 1, 2)
    pix[:, 0, 1] = 1.0
    b = ImageAsset(pix, "content")
    assert pixel_mse(a, b) == pytest.approx(0.5)


def test_dim_mismatch_raises():
    with pytest.raises(ShapeError):
        pixel_mse(rand_image(16, 1), rand_image(8, 1))
    with pytest.raises(ShapeError):
        content_loss(rand_image(16, 1), rand_image(8, 1))


def test_extractor_deterministic_given_seed():
    a1 = FeatureExtractor(seed=5).features(rand_image(8, 9))
    a2 = FeatureExtractor(seed=5).features(rand_image(8, 9))
    b = FeatureExtractor(seed=6).features(rand_image(8, 9))
    for x, y in zip(a1, a2):
        assert torch.equal(x, y)
    assert not torch.equal(a1[0], b[0])


def test_report_csv_round_trip(tmp_path):
    rows = [{"content": "c.png", "style": "s.png", "generated": "g.png",
             "content_loss": 0.5, "style_loss": 1.25, "pixel_mse": 0.01,
             "runtime_s": 2.5}]
    path = tmp_path / "report.csv"
    write_report(rows, path)
    with open(path) as fh:
        parsed = list(csv.DictReader(fh))
    assert len(parsed) == 1
    assert parsed[0]["content_loss"] == "0.5"
    assert parsed[0]["runtime_s"] == "2.5"


def test_external_metric_adapters_fail_loudly():
    a, b = rand_image(8, 1), rand_image(8, 2)
    with pytest.raises(CapabilityError):
        lpips_distance(a, b)
    with pytest.raises(CapabilityError):
        clip_similarity(a, b)
