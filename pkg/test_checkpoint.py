#!/usr/bin/env python3
"""
Checkpoint archive tests: round trip, magic string, required keys and corrupt files
"""

import os

import torch

from checkpoint_store import CHECKPOINT_MAGIC, CheckpointError, CheckpointStore, load_checkpoint, save_checkpoint
from lumen_config import config_hash, default_config
from script_runner import run_tests
from sls_networks import SharedLatentModel


def small_payload(step=3):
    config = default_config()
    config.update(base_channels=4, res_blocks=1, disc_layers=1)
    torch.manual_seed(0)
    model = SharedLatentModel(4, 1, 8, 1)
    return {
        'model': model.state_dict(),
        'config': config,
        'config_hash': config_hash(config),
        'step': step,
        'noise_stream': torch.Generator().manual_seed(5).get_state(),
    }


def raises_checkpoint_error(path):
    try:
        load_checkpoint(path)
    except CheckpointError:
        return True
    return False


def test_round_trip(tmp_path):
    payload = small_payload()
    path = save_checkpoint(str(tmp_path / 'ckpt.pt'), payload)
    loaded = load_checkpoint(path)
    assert loaded['magic'] == CHECKPOINT_MAGIC
    assert loaded['step'] == 3
    assert loaded['config_hash'] == payload['config_hash']
    for key, tensor in payload['model'].items():
        assert torch.equal(loaded['model'][key], tensor)
    assert torch.equal(loaded['noise_stream'], payload['noise_stream'])


def test_model_restores_from_archive(tmp_path):
    payload = small_payload()
    path = save_checkpoint(str(tmp_path / 'ckpt.pt'), payload)
    model = SharedLatentModel(4, 1, 8, 1)
    model.load_state_dict(load_checkpoint(path)['model'])
    x = torch.zeros(1, 3, 8, 8)
    with torch.no_grad():
        reference = SharedLatentModel(4, 1, 8, 1)
        reference.load_state_dict(payload['model'])
        assert torch.equal(model.vc_from_oc(x), reference.vc_from_oc(x))


def test_missing_file(tmp_path):
    assert raises_checkpoint_error(str(tmp_path / 'absent.pt'))


def test_corrupt_file(tmp_path):
    path = tmp_path / 'broken.pt'
    path.write_bytes(b'not a checkpoint at all')
    assert raises_checkpoint_error(str(path))


def test_foreign_archive(tmp_path):
    path = str(tmp_path / 'foreign.pt')
    torch.save({'model': {}, 'step': 1}, path)
    assert raises_checkpoint_error(path)


def test_missing_required_key(tmp_path):
    payload = small_payload()
    del payload['config_hash']
    path = save_checkpoint(str(tmp_path / 'partial.pt'), payload)
    assert raises_checkpoint_error(path)


def test_store_paths_and_latest(tmp_path):
    store = CheckpointStore(str(tmp_path / 'checkpoints'))
    assert store.latest() is None
    for step in (10, 2, 5):
        store.save(small_payload(step), step)
    final = store.save(small_payload(12))

    assert os.path.basename(store.latest()) == 'ckpt_000010.pt'
    assert [os.path.basename(p) for p in store.list_checkpoints()] == \
        ['ckpt_000002.pt', 'ckpt_000005.pt', 'ckpt_000010.pt']
    assert os.path.basename(final) == 'final.pt'
    # Atomic writes leave no temp files behind
    assert not [n for n in os.listdir(store.directory) if n.endswith('.tmp')]


TESTS = [
    test_round_trip,
    test_model_restores_from_archive,
    test_missing_file,
    test_corrupt_file,
    test_foreign_archive,
    test_missing_required_key,
    test_store_paths_and_latest,
]


def main():
    """Run all tests"""
    run_tests("Testing checkpoints", TESTS)


if __name__ == "__main__":
    main()
