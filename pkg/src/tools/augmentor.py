#!/usr/bin/env python3
"""
The four augmentation factors and their seeded composition.

Composition order is fixed: noise, brightness, rotation, flip. Factors at
level None/Same are skipped, so the all-None configuration is the identity.
"""

from typing import Optional

import cv2
import numpy as np

from config.config import AugmentParams
from tools.clipstore import Clip
from tools.designer import Brightness, FactorLevels, Flip, Noise, Rotation


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """
    Hexcone HSV of RGB samples in [0, 255].

    Args:
        rgb: Array of shape (..., 3)

    Returns:
        Float array (..., 3): hue in degrees [0, 360), saturation and value in [0, 1]
    """
    rgb = np.asarray(rgb, dtype=np.float32)
    flat = (rgb / 255.0).reshape(-1, 1, 3)
    hsv = cv2.cvtColor(flat, cv2.COLOR_RGB2HSV)
    return hsv.reshape(rgb.shape).astype(np.float64)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Inverse of rgb_to_hsv; returns unrounded RGB in [0, 255]."""
    hsv = np.asarray(hsv, dtype=np.float32)
    flat = hsv.reshape(-1, 1, 3)
    rgb = cv2.cvtColor(flat, cv2.COLOR_HSV2RGB)
    return (rgb.reshape(hsv.shape) * 255.0).astype(np.float64)


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def apply_brightness(clip: Clip, factor: float) -> Clip:
    """Scale the HSV value channel by factor, clamped to 1; hue and saturation are kept."""
    if factor <= 0:
        raise ValueError(f"brightness factor must be positive, got {factor}")
    frames = clip.frames
    t, h, w, c = frames.shape
    flat = (frames.astype(np.float32) / 255.0).reshape(t * h, w, c)
    hsv = cv2.cvtColor(flat, cv2.COLOR_RGB2HSV)
    hsv[..., 2] = np.clip(hsv[..., 2] * np.float32(factor), 0.0, 1.0)
    rgb = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB) * 255.0
    return clip.with_frames(_to_uint8(rgb.reshape(t, h, w, c)))


def apply_noise(clip: Clip, sigma: float, rng: np.random.Generator) -> Clip:
    """Add independent Gaussian noise to every sample, round and clamp to [0, 255]."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return clip.with_frames(clip.frames.copy())
    noise = rng.normal(0.0, sigma, size=clip.shape)
    return clip.with_frames(_to_uint8(clip.frames.astype(np.float64) + noise))


def apply_rotation(clip: Clip, degrees: float) -> Clip:
    """
    Rotate every frame about its center.

    Positive angles turn counter-clockwise ("Left"). Sampling is bilinear,
    uncovered pixels are black and the frame size is kept.
    """
    if degrees == 0:
        return clip.with_frames(clip.frames.copy())
    h, w = clip.height, clip.width
    matrix = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), float(degrees), 1.0)
    rotated = np.stack([
        cv2.warpAffine(frame, matrix, (w, h), flags=cv2.INTER_LINEAR,
                       borderMode=cv2.BORDER_CONSTANT, borderValue=(0, 0, 0))
        for frame in clip.frames
    ])
    return clip.with_frames(rotated)


def apply_flip(clip: Clip, mode: Flip) -> Clip:
    """Mirror frames left-right (Horizontal) or top-bottom (Vertical)."""
    mode = Flip(mode)
    if mode is Flip.HORIZONTAL:
        frames = clip.frames[:, :, ::-1]
    elif mode is Flip.VERTICAL:
        frames = clip.frames[:, ::-1]
    else:
        frames = clip.frames
    return clip.with_frames(np.ascontiguousarray(frames).copy())


def brightness_factor(level: Brightness, params: AugmentParams) -> float:
    if level is Brightness.INCREASE:
        return params.brightness_increase
    if level is Brightness.DECREASE:
        return params.brightness_decrease
    return 1.0


def rotation_angle(level: Rotation, params: AugmentParams) -> float:
    if level is Rotation.LEFT:
        return params.rotation_degrees
    if level is Rotation.RIGHT:
        return -params.rotation_degrees
    return 0.0


def apply_config(clip: Clip, levels: FactorLevels, params: AugmentParams,
                 rng: Optional[np.random.Generator] = None) -> Clip:
    """
    Apply one factor combination: noise, then brightness, rotation and flip.

    Args:
        clip: Source clip
        levels: Factor levels (one L18 row or any point of the factor space)
        params: Factor intensities; params.seed seeds the noise stream
        rng: Optional explicit noise stream, overriding params.seed

    Returns:
        Augmented clip, fully determined by (clip, levels, params)
    """
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    out = clip
    if levels.noise is Noise.ADD_NOISE:
        out = apply_noise(out, params.noise_sigma, rng)
    if levels.brightness is not Brightness.SAME:
        out = apply_brightness(out, brightness_factor(levels.brightness, params))
    if levels.rotation is not Rotation.NONE:
        out = apply_rotation(out, rotation_angle(levels.rotation, params))
    if levels.flip is not Flip.NONE:
        out = apply_flip(out, levels.flip)
    if out is clip:
        out = clip.with_frames(clip.frames.copy())
    return out
