#!/usr/bin/env python3
"""
Checkpoint archive for the Lumen translator
One file per checkpoint holding all four networks, optimizer moments,
image pools, random stream states, config and config hash
"""

import os
import tempfile

import numpy as np
import torch

CHECKPOINT_MAGIC = 'LUMEN-SLS-v1'


class CheckpointError(RuntimeError):
    """Raised for missing, foreign or corrupt checkpoint archives"""


class CheckpointStore:
    def __init__(self, directory):
        """
        Checkpoints of one training run

        Args:
            directory: folder holding ckpt_<step>.pt files and final.pt
        """
        self.directory = directory

    def path_for(self, step=None):
        """Path of a numbered checkpoint, or of `final` when step is None"""
        if step is None:
            return os.path.join(self.directory, 'final.pt')
        return os.path.join(self.directory, f'ckpt_{step:06d}.pt')

    def save(self, payload, step=None):
        """Write a checkpoint atomically and return its path"""
        path = self.path_for(step)
        save_checkpoint(path, payload)
        return path

    def list_checkpoints(self):
        """Numbered checkpoints in step order"""
        if not os.path.isdir(self.directory):
            return []
        names = sorted(n for n in os.listdir(self.directory) if n.startswith('ckpt_') and n.endswith('.pt'))
        return [os.path.join(self.directory, n) for n in names]

    def latest(self):
        """Most recent numbered checkpoint or None"""
        checkpoints = self.list_checkpoints()
        return checkpoints[-1] if checkpoints else None


def save_checkpoint(path, payload):
    """Write payload under the format magic; temp file then rename"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)

    archive = dict(payload)
    archive['magic'] = CHECKPOINT_MAGIC
    archive['versions'] = {'torch': torch.__version__, 'numpy': np.__version__}

    fd, tmp_path = tempfile.mkstemp(prefix='.ckpt-', suffix='.tmp', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            torch.save(archive, f)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def load_checkpoint(path):
    """Read and validate a checkpoint archive"""
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint not found: {path}")

    try:
        archive = torch.load(path, map_location='cpu', weights_only=False)
    except Exception as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}")

    if not isinstance(archive, dict) or archive.get('magic') != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Not a {CHECKPOINT_MAGIC} checkpoint: {path}")
    for key in ('model', 'config', 'config_hash', 'step'):
        if key not in archive:
            raise CheckpointError(f"Checkpoint {path} is missing '{key}'")
    return archive
