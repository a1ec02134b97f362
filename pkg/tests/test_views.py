import numpy as np
import pytest

from can_ssl import rng as rngmod
from can_ssl.views import AugmentConfig, _blur_kernel_size, add_noise, augment, build_view_batch, two_views


@pytest.fixture
def image(rng):
    return rng.random((16, 16, 3)).astype(np.float32)


def test_augment_shape_range_and_determinism(image):
    cfg = AugmentConfig(output_size=(16, 16))
    a = augment(image, cfg, rngmod.stream(0, 1))
    b = augment(image, cfg, rngmod.stream(0, 1))
    c = augment(image, cfg, rngmod.stream(0, 2))
    assert a.shape == (16, 16, 3) and a.dtype == np.float32
    assert a.min() >= 0 and a.max() <= 1
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_augment_resizes_to_output(image):
    out = augment(image, AugmentConfig(output_size=(8, 8)), rngmod.stream(0))
    assert out.shape == (8, 8, 3)


def test_disabled_augmentation_is_identity(image):
    out = augment(image, AugmentConfig.disabled((16, 16)), rngmod.stream(3))
    np.testing.assert_array_equal(out, image)


def test_two_views_differ(image):
    v1, v2 = two_views(image, AugmentConfig(output_size=(16, 16)), rngmod.stream(5))
    assert not np.array_equal(v1, v2)


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(crop_scale_range=(0.5, 0.2))
    with pytest.raises(ValueError):
        AugmentConfig(blur_prob=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(jitter_strength=-1)


@pytest.mark.parametrize("side, k", [(224, 23), (32, 5), (16, 3), (8, 1), (10, 1)])
def test_blur_kernel_is_odd_tenth_of_side(side, k):
    assert _blur_kernel_size(side) == k


def test_add_noise_contract(image):
    nv = add_noise(image, 0.05, rngmod.stream(0))
    assert 0 <= nv.sigma <= 0.05 and nv.sigma.dtype == np.float32
    np.testing.assert_array_equal(nv.pixels, nv.clean + nv.sigma * nv.noise)
    np.testing.assert_array_equal(nv.noise_target, nv.sigma * nv.noise)
    assert nv.noise.shape == image.shape


def test_add_noise_zero_sigma_is_clean(image):
    nv = add_noise(image, 0.0, rngmod.stream(0))
    assert nv.sigma == 0
    np.testing.assert_array_equal(nv.pixels, image)


def test_add_noise_sigma_is_uniform():
    sig = np.array([add_noise(np.zeros((1, 1, 3)), 2.0, rngmod.stream(0, i)).sigma for i in range(4000)])
    assert sig.min() >= 0 and sig.max() <= 2
    # mean of U[0, 2] is 1 with standard error 0.58 / sqrt(4000) ~ 0.009
    assert abs(sig.mean() - 1.0) < 0.05
    with pytest.raises(ValueError):
        add_noise(np.zeros((1, 1, 3)), -0.1, rngmod.stream(0))


def test_view_batch_layout(tiny_data):
    cfg = AugmentConfig(output_size=(16, 16))
    vb = build_view_batch(tiny_data.images[:5], cfg, 0.5, 0.05, seed=1, patch_size=4,
                          labels=tiny_data.labels[:5])
    assert vb.pixels.shape == (2, 5, 16, 16, 3)
    assert vb.masks.shape == (2, 5, 16)
    assert vb.unmasked_count == 8
    assert (vb.masks.sum(-1) == 8).all()
    nv = vb.view(1, 3)
    np.testing.assert_array_equal(nv.pixels, nv.clean + nv.sigma * nv.noise)
    assert vb.mask(0, 0).unmasked_count == 8
    # both views differ in augmentation, noise and mask
    assert not np.array_equal(vb.clean[0], vb.clean[1])
    assert not np.array_equal(vb.masks[0], vb.masks[1])


def test_views_do_not_depend_on_batch_composition(tiny_data):
    cfg = AugmentConfig(output_size=(16, 16))
    idx = np.array([3, 7, 11])
    full = build_view_batch(tiny_data.images[idx], cfg, 0.5, 0.05, seed=2, epoch=4, indices=idx, patch_size=4)
    one = build_view_batch(tiny_data.images[[7]], cfg, 0.5, 0.05, seed=2, epoch=4, indices=[7], patch_size=4)
    np.testing.assert_array_equal(full.pixels[:, 1], one.pixels[:, 0])
    np.testing.assert_array_equal(full.masks[:, 1], one.masks[:, 0])
    other_epoch = build_view_batch(tiny_data.images[[7]], cfg, 0.5, 0.05, seed=2, epoch=5, indices=[7], patch_size=4)
    assert not np.array_equal(other_epoch.pixels, one.pixels)


def test_uint8_images_are_scaled(tiny_data):
    cfg = AugmentConfig.disabled((16, 16))
    vb = build_view_batch(tiny_data.images[:2], cfg, 0.0, 0.0, seed=0, patch_size=4, num_views=1)
    np.testing.assert_allclose(vb.clean[0], tiny_data.images[:2] / 255.0, atol=1e-7)
    assert vb.pixels.shape[0] == 1
