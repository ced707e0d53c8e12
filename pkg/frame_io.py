#!/usr/bin/env python3
"""
Frame input / output for Lumen
PNG images and masks on disk <-> numpy arrays in [-1, 1] <-> torch batches
"""

import os

import numpy as np
import torch
from PIL import Image

from lumen_config import ConfigurationError

IMAGE_EXTENSIONS = ('.png',)


def to_uint8(image):
    """[-1, 1] floats -> 8-bit values, round((x + 1) * 127.5)"""
    return np.clip(np.rint((np.asarray(image, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(pixels):
    """8-bit values -> float32 in [-1, 1]"""
    return (np.asarray(pixels, dtype=np.float32) / 127.5 - 1.0).astype(np.float32)


def load_image(path, size=None):
    """Read an RGB PNG as an (H, W, 3) float32 array in [-1, 1], optionally resized to size x size"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Frame not found: {path}")
    with Image.open(path) as img:
        img = img.convert('RGB')
        if size is not None and img.size != (size, size):
            img = img.resize((size, size), Image.BICUBIC)
        return from_uint8(np.array(img))


def save_image(path, image):
    """Write an (H, W, 3) array in [-1, 1] as an 8-bit RGB PNG"""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ConfigurationError(f"Image must be (H, W, 3), got {image.shape}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path)
    return path


def save_mask(path, mask):
    """Write a boolean mask as a single-channel 0/255 PNG"""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ConfigurationError(f"Mask must be (H, W), got {mask.shape}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(mask.astype(np.uint8) * 255).save(path)
    return path


def load_mask(path):
    """Read a mask PNG; pixels above 127 are set"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Mask not found: {path}")
    with Image.open(path) as img:
        return np.array(img.convert('L')) > 127


def image_to_tensor(image):
    """(H, W, 3) array -> (1, 3, H, W) tensor"""
    return torch.from_numpy(np.ascontiguousarray(np.asarray(image, dtype=np.float32).transpose(2, 0, 1)))[None]


def tensor_to_image(tensor):
    """(1, 3, H, W) or (3, H, W) tensor -> (H, W, 3) float32 array"""
    tensor = tensor.detach().cpu()
    if tensor.dim() == 4:
        if tensor.shape[0] != 1:
            raise ConfigurationError(f"Expected a single image, got batch of {tensor.shape[0]}")
        tensor = tensor[0]
    return tensor.float().numpy().transpose(1, 2, 0).copy()


def frame_id_of(path):
    return os.path.splitext(os.path.basename(path))[0]


def list_frames(directory):
    """Sorted PNG frames directly inside a directory (the masks/ subfolder is not descended into)"""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"Frame directory not found: {directory}")
    names = sorted(n for n in os.listdir(directory)
                   if n.lower().endswith(IMAGE_EXTENSIONS) and os.path.isfile(os.path.join(directory, n)))
    return [os.path.join(directory, n) for n in names]
