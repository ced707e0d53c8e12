#!/usr/bin/env python3
"""
Configuration for the Lumen shared-latent colonoscopy translator
Holds every default, the key = value config file parser and the config hash
"""

import hashlib
import os
from typing import Any, Dict, Iterable, Optional


class ConfigurationError(ValueError):
    """Raised for invalid shapes, parameters, config keys or values"""


# Lumen configuration, grouped the way the commands use it
LUMEN_CONFIG = {
    # Image / model
    'image_size': 64,  # pixels, must be a multiple of 4
    'base_channels': 64,  # width of the first generator stage
    'res_blocks': 5,  # residual blocks per encoder and per decoder
    'noise_dim': 8,  # channels of the OC decoder noise vector
    'disc_layers': 3,  # stride-2 stages of the patch discriminator

    # Loss weights
    'lambda_c': 10.0,
    'lambda_sls': 1.0,
    'lambda_iden': 1.0,
    'lambda_adv': 1.0,
    'lambda_noise': 1.0,
    'alpha': 0.1,  # minimum image distance between two noise draws
    'gan_mode': 'log',  # log or lsgan
    'noise_norm': 'mean_l1',  # mean_l1 or rms

    # Training
    'batch_size': 1,
    'iterations': 2000,
    'learning_rate': 2e-4,
    'adam_beta1': 0.5,
    'adam_beta2': 0.999,
    'pool_size': 50,
    'seed': 0,
    'checkpoint_every': 500,
    'loader_threads': 4,

    # Synthetic data
    'scenes': 4,  # scenes per domain
    'poses': 50,  # camera poses per scene
    'val_fraction': 0.25,
    'test_fraction': 0.25,
    'data_seed': 0,
    'mesh_axial_steps': 32,
    'mesh_radial_steps': 24,
    'fov_degrees': 90.0,
    'supersample': 2,  # extra sub-pixel rays per axis for visibility marking
    'missed_opacity': 0.6,
    'specular_strength': 0.6,
    'render_workers': 1,

    # Evaluation
    'tau': 0.2,
    'overlay_alpha': 0.5,
}

CHOICES = {
    'gan_mode': ('log', 'lsgan'),
    'noise_norm': ('mean_l1', 'rms'),
}

CONFIG_HELP = """
Config files are plain text, one `key = value` per line.
Lines starting with # are comments. Any key below may also be given
on the command line with --override key=value.
"""


def config_keys():
    """Get all known config keys"""
    return list(LUMEN_CONFIG.keys())


def get_config_value(key, config=None):
    """Get a config value, falling back to the default"""
    if key not in LUMEN_CONFIG:
        raise ConfigurationError(f"Unknown config key: {key}")
    if config is not None and key in config:
        return config[key]
    return LUMEN_CONFIG[key]


def default_config():
    """Get a fresh copy of the defaults"""
    return dict(LUMEN_CONFIG)


def coerce_value(key, raw):
    """Convert a raw string to the type of the key's default"""
    if key not in LUMEN_CONFIG:
        raise ConfigurationError(f"Unknown config key: {key}")

    default = LUMEN_CONFIG[key]
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ('1', 'true', 'yes', 'on'):
                value = True
            elif text.lower() in ('0', 'false', 'no', 'off'):
                value = False
            else:
                raise ValueError(text)
        elif isinstance(default, int):
            value = int(text)
        elif isinstance(default, float):
            value = float(text)
        else:
            value = text
    except ValueError:
        raise ConfigurationError(f"Bad value for {key}: {raw!r}")

    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigurationError(f"Bad value for {key}: {value!r} (choose from {', '.join(CHOICES[key])})")
    return value


def parse_config_text(text):
    """Parse key = value lines into a dict"""
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError(f"Line {line_no}: expected key = value, got {line!r}")
        key, raw = line.split('=', 1)
        key = key.strip()
        values[key] = coerce_value(key, raw)
    return values


def parse_overrides(pairs: Optional[Iterable[str]]):
    """Parse key=value override strings"""
    values = {}
    for pair in pairs or []:
        if '=' not in pair:
            raise ConfigurationError(f"Override must be key=value, got {pair!r}")
        key, raw = pair.split('=', 1)
        values[key.strip()] = coerce_value(key.strip(), raw)
    return values


def validate_config(config: Dict[str, Any]):
    """Check cross-key invariants"""
    if config['image_size'] <= 0 or config['image_size'] % 4 != 0:
        raise ConfigurationError(f"image_size must be a positive multiple of 4, got {config['image_size']}")
    if config['iterations'] <= 0:
        raise ConfigurationError("iterations must be > 0")
    if config['pool_size'] < 0:
        raise ConfigurationError("pool_size must be >= 0")
    if config['batch_size'] < 1:
        raise ConfigurationError("batch_size must be >= 1")
    if config['checkpoint_every'] < 1:
        raise ConfigurationError("checkpoint_every must be >= 1")
    for key in ('lambda_c', 'lambda_sls', 'lambda_iden', 'lambda_adv', 'lambda_noise', 'alpha'):
        if config[key] < 0:
            raise ConfigurationError(f"{key} must be non-negative")
    if not 0.0 <= config['tau'] <= 1.0:
        raise ConfigurationError("tau must lie in [0, 1]")
    if not 0.0 <= config['missed_opacity'] <= 1.0:
        raise ConfigurationError("missed_opacity must lie in [0, 1]")
    if config['val_fraction'] < 0 or config['test_fraction'] < 0 \
            or config['val_fraction'] + config['test_fraction'] >= 1.0:
        raise ConfigurationError("val_fraction + test_fraction must be < 1")
    return config


def load_config(path=None, overrides=None):
    """Load defaults, then the config file, then overrides"""
    config = default_config()

    if path:
        if not os.path.exists(path):
            raise ConfigurationError(f"Config file not found: {path}")
        with open(path, 'r') as f:
            config.update(parse_config_text(f.read()))

    if isinstance(overrides, dict):
        for key, value in overrides.items():
            config[key] = coerce_value(key, value)
    else:
        config.update(parse_overrides(overrides))

    return validate_config(config)


def config_to_text(config):
    """Render a config as sorted key = value lines"""
    return ''.join(f"{key} = {config[key]}\n" for key in sorted(config))


def config_hash(config):
    """SHA-256 of the sorted config text"""
    return hashlib.sha256(config_to_text(config).encode('utf-8')).hexdigest()


def describe_config_keys():
    """Help text listing every key with its default"""
    lines = [CONFIG_HELP.strip(), '', 'config keys (default):']
    for key, value in LUMEN_CONFIG.items():
        choices = f"  [{'|'.join(CHOICES[key])}]" if key in CHOICES else ''
        lines.append(f"  {key} = {value}{choices}")
    return '\n'.join(lines)


if __name__ == "__main__":
    print(describe_config_keys())
