#!/usr/bin/env python3
"""
Tests for the augmentation factors and their composition.
"""

import numpy as np
import pytest

from config.config import AugmentParams
from conftest import make_clip
from tools.augmentor import (
    apply_brightness, apply_config, apply_flip, apply_noise, apply_rotation, brightness_factor,
    hsv_to_rgb, rgb_to_hsv, rotation_angle,
)
from tools.clipstore import Clip
from tools.designer import Brightness, FactorLevels, Flip, Rotation, build_l18

PARAMS = AugmentParams(seed=7)


def _solid(rgb, frames=2, size=9) -> Clip:
    data = np.empty((frames, size, size, 3), dtype=np.uint8)
    data[...] = rgb
    return Clip(frames=data)


def test_identity_configuration_copies_input():
    clip = make_clip(4, 8, 8)
    out = apply_config(clip, FactorLevels(), PARAMS)
    assert out is not clip
    assert np.array_equal(out.frames, clip.frames)


def test_same_inputs_give_identical_outputs():
    clip = make_clip(4, 8, 8)
    for levels in build_l18().rows:
        first = apply_config(clip, levels, PARAMS)
        second = apply_config(clip, levels, PARAMS)
        assert np.array_equal(first.frames, second.frames), levels


def test_noise_depends_on_seed_only():
    clip = _solid((128, 128, 128), frames=3, size=16)
    levels = FactorLevels.parse("AddNoise,Same,None,None")
    a = apply_config(clip, levels, AugmentParams(seed=1))
    b = apply_config(clip, levels, AugmentParams(seed=2))
    assert not np.array_equal(a.frames, b.frames)
    spread = a.frames.astype(float).std()
    assert 7.0 < spread < 13.0


def test_noise_clamps_and_zero_sigma_is_identity():
    clip = _solid((255, 0, 255))
    noisy = apply_noise(clip, 50.0, np.random.default_rng(0))
    assert noisy.frames.dtype == np.uint8
    assert np.array_equal(apply_noise(clip, 0.0, np.random.default_rng(0)).frames, clip.frames)
    with pytest.raises(ValueError):
        apply_noise(clip, -1.0, np.random.default_rng(0))


def test_hsv_conversion_roundtrip():
    assert np.allclose(rgb_to_hsv(np.array([255, 0, 0])), [0.0, 1.0, 1.0], atol=1e-4)
    assert np.allclose(rgb_to_hsv(np.array([0, 0, 255])), [240.0, 1.0, 1.0], atol=1e-3)
    samples = np.random.default_rng(3).integers(0, 256, size=(50, 3))
    assert np.allclose(hsv_to_rgb(rgb_to_hsv(samples)), samples, atol=1e-2)


@pytest.mark.parametrize("rgb, factor, expected", [
    ((100, 100, 100), 1.5, (150, 150, 150)),
    ((200, 200, 200), 1.5, (255, 255, 255)),
    ((200, 100, 50), 0.5, (100, 50, 25)),
    ((0, 0, 0), 1.5, (0, 0, 0)),
])
def test_brightness_scales_value_channel(rgb, factor, expected):
    out = apply_brightness(_solid(rgb), factor)
    assert np.abs(out.frames[0, 0, 0].astype(int) - np.array(expected)).max() <= 1


def test_brightness_rejects_non_positive_factor():
    with pytest.raises(ValueError):
        apply_brightness(_solid((1, 2, 3)), 0.0)


def test_flips():
    clip = make_clip(2, 5, 7)
    horizontal = apply_flip(clip, Flip.HORIZONTAL)
    assert np.array_equal(horizontal.frames, clip.frames[:, :, ::-1])
    vertical = apply_flip(clip, Flip.VERTICAL)
    assert np.array_equal(vertical.frames, clip.frames[:, ::-1])
    assert np.array_equal(apply_flip(horizontal, "Horizontal").frames, clip.frames)


def test_rotation_keeps_center_and_blanks_corners():
    clip = _solid((255, 255, 255), size=15)
    rotated = apply_rotation(clip, 45.0)
    assert rotated.shape == clip.shape
    assert tuple(rotated.frames[0, 7, 7]) == (255, 255, 255)
    assert not rotated.frames[0, 0, 0].any()
    assert np.array_equal(apply_rotation(clip, 0.0).frames, clip.frames)


def test_left_rotation_turns_counter_clockwise():
    data = np.zeros((1, 15, 15, 3), dtype=np.uint8)
    data[0, 6:9, 12:15] = 255
    rotated = apply_rotation(Clip(frames=data), 90.0)
    gray = rotated.frames[0].astype(float).mean(axis=-1)
    y, x = np.unravel_index(np.argmax(gray), gray.shape)
    assert y < 4
    assert abs(x - 7) <= 1


def test_photometric_levels_never_move_pixels():
    data = np.zeros((2, 10, 10, 3), dtype=np.uint8)
    data[:, 3:6, 3:6] = 180
    clip = Clip(frames=data)
    levels = FactorLevels.parse("None,Increase,None,None")
    out = apply_config(clip, levels, PARAMS)
    changed = np.any(out.frames != clip.frames, axis=-1)
    original_bright = np.any(clip.frames > 0, axis=-1)
    assert np.array_equal(changed, original_bright)


def test_level_intensities():
    assert brightness_factor(Brightness.INCREASE, PARAMS) == 1.5
    assert brightness_factor(Brightness.DECREASE, PARAMS) == 0.5
    assert brightness_factor(Brightness.SAME, PARAMS) == 1.0
    assert rotation_angle(Rotation.LEFT, PARAMS) == 45.0
    assert rotation_angle(Rotation.RIGHT, PARAMS) == -45.0
    assert rotation_angle(Rotation.NONE, PARAMS) == 0.0


def test_noise_statistics_over_a_million_samples():
    clip = _solid((128, 128, 128), frames=4, size=300)
    assert clip.frames.size >= 10 ** 6
    noisy = apply_noise(clip, 10.0, np.random.default_rng(11)).frames.astype(np.float64)
    assert abs(noisy.mean() - 128.0) <= 0.5
    assert abs(noisy.std() - 10.0) <= 1.0


def test_gray_levels_survive_hsv_roundtrip():
    grays = np.repeat(np.arange(256), 3).reshape(256, 3)
    hsv = rgb_to_hsv(grays)
    assert np.all(hsv[:, 1] == 0.0)
    assert np.abs(hsv_to_rgb(hsv) - grays).max() <= 1.0
    assert np.allclose(rgb_to_hsv(np.array([128, 128, 128])), [0.0, 0.0, 128 / 255], atol=1e-6)


def test_rotating_left_then_right_blanks_only_the_corners():
    clip = _solid((255, 255, 255), frames=1, size=31)
    there_and_back = apply_rotation(apply_rotation(clip, 45.0), -45.0).frames[0]
    assert np.all(there_and_back[11:20, 11:20] == 255)
    for y, x in ((0, 0), (0, 30), (30, 0), (30, 30)):
        assert not there_and_back[y, x].any(), (y, x)


def test_noise_then_darkening_matches_composed_factors():
    clip = make_clip(4, 12, 12, seed=3)
    levels = FactorLevels.parse("AddNoise,Decrease,None,None")
    combined = apply_config(clip, levels, PARAMS)
    stepwise = apply_brightness(apply_noise(clip, PARAMS.noise_sigma, np.random.default_rng(PARAMS.seed)), 0.5)
    assert np.array_equal(combined.frames, stepwise.frames)
