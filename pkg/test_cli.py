#!/usr/bin/env python3
"""
Command line tests: help text, exit codes, gen-data / train / infer / sample / eval end to end
"""

import contextlib
import io
import json
import os
import shutil

import numpy as np

from frame_io import list_frames, save_mask
from lumen_cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main as lumen_main
from lumen_config import config_keys, describe_config_keys
from run_lumen import launch
from script_runner import run_tests
from setup_dev import WORK_DIRS, missing_packages, package_versions, setup_dirs

DATA_OVERRIDES = ['scenes=4', 'poses=3', 'image_size=8', 'mesh_axial_steps=8', 'mesh_radial_steps=8',
                  'supersample=1']
MODEL_OVERRIDES = ['image_size=8', 'base_channels=4', 'res_blocks=1', 'disc_layers=1', 'pool_size=2',
                   'iterations=2', 'checkpoint_every=1', 'loader_threads=1']
HELP_GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'help_golden.txt')


def run(*argv):
    """Exit code, stdout and stderr of one CLI call"""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            code = lumen_main(list(argv))
        except SystemExit as e:
            code = e.code
    return code, out.getvalue(), err.getvalue()


def read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


def trained_run(tmp_path):
    """Tiny dataset plus a two-step model; returns (data root, run dir)"""
    data, run_dir = str(tmp_path / 'data'), str(tmp_path / 'run')
    assert run('gen-data', '--out', data, '--override', *DATA_OVERRIDES)[0] == EXIT_OK
    code, _, err = run('train', '--data', data, '--out', run_dir, '--override', *MODEL_OVERRIDES)
    assert code == EXIT_OK, err
    return data, run_dir


def test_help_matches_golden_file():
    with open(HELP_GOLDEN) as f:
        golden = f.read().rstrip('\n')
    assert describe_config_keys() == golden
    for command in ('gen-data', 'train', 'infer', 'sample', 'eval'):
        code, out, _ = run(command, '--help')
        assert code == 0, command
        assert golden in out, command
        for key in config_keys():
            assert f"  {key} = " in out, (command, key)


def test_bad_override_is_a_usage_error(tmp_path):
    code, _, err = run('gen-data', '--out', str(tmp_path), '--override', 'bogus_key=1')
    assert code == EXIT_USAGE
    assert 'bogus_key' in err
    code, _, err = run('gen-data', '--out', str(tmp_path), '--override', 'image_size=big')
    assert code == EXIT_USAGE and 'image_size' in err


def test_gen_data(tmp_path):
    out = str(tmp_path / 'data')
    code, _, err = run('gen-data', '--out', out, '--override', 'scenes=2', 'poses=10', 'image_size=16',
                       'mesh_axial_steps=8', 'mesh_radial_steps=8', 'supersample=1')
    assert code == EXIT_OK, err
    for name in ('trainA', 'trainB', 'valA', 'valB', 'testA', 'testB'):
        assert os.path.isdir(os.path.join(out, name))
    assert len(list_frames(os.path.join(out, 'trainA'))) == 20
    assert len(list_frames(os.path.join(out, 'trainB'))) == 20
    with open(os.path.join(out, 'run.json')) as f:
        record = json.load(f)
    assert record['command'] == 'gen-data' and record['frames'] == 40
    assert record['config']['poses'] == 10


def test_config_file(tmp_path):
    config_path = tmp_path / 'tiny.conf'
    config_path.write_text('# tiny dataset\nscenes = 2\nposes = 2\nimage_size = 8\n'
                           'mesh_axial_steps = 8\nmesh_radial_steps = 8\nsupersample = 1\n')
    out = str(tmp_path / 'data')
    assert run('gen-data', '--config', str(config_path), '--out', out, '--override', 'poses=3')[0] == EXIT_OK
    assert len(list_frames(os.path.join(out, 'trainB'))) == 6
    assert run('gen-data', '--config', str(tmp_path / 'absent.conf'), '--out', out)[0] == EXIT_USAGE


def test_eval(tmp_path):
    masks = str(tmp_path / 'masks')
    rng = np.random.default_rng(0)
    for index in range(3):
        save_mask(os.path.join(masks, f"frame_{index}.png"), rng.uniform(size=(8, 8)) < 0.3)
    out = str(tmp_path / 'eval')
    code, _, err = run('eval', '--pred', masks, '--gt', masks, '--out', out)
    assert code == EXIT_OK, err
    with open(os.path.join(out, 'metrics.json')) as f:
        metrics = json.load(f)
    assert metrics['accuracy'] == 1.0 and metrics['dice'] == 1.0
    assert os.path.exists(os.path.join(out, 'metrics.csv'))
    assert os.path.exists(os.path.join(out, 'run.json'))

    other = str(tmp_path / 'other')
    shutil.copytree(masks, other)
    os.remove(os.path.join(other, 'frame_2.png'))
    code, _, err = run('eval', '--pred', masks, '--gt', other, '--out', out)
    assert code == EXIT_USAGE and 'frame_2' in err

    empty = tmp_path / 'empty'
    empty.mkdir()
    assert run('eval', '--pred', str(empty), '--gt', str(empty), '--out', out)[0] == EXIT_USAGE


def test_train_without_dataset(tmp_path):
    code, _, _ = run('train', '--data', str(tmp_path / 'absent'), '--out', str(tmp_path / 'run'),
                     '--override', *MODEL_OVERRIDES)
    assert code == EXIT_USAGE


def test_missing_checkpoint(tmp_path):
    frames = tmp_path / 'frames'
    frames.mkdir()
    code, _, _ = run('infer', '--checkpoint', str(tmp_path / 'absent.pt'), '--frames', str(frames),
                     '--out', str(tmp_path / 'out'))
    assert code == EXIT_FAILURE


def test_train_infer_sample_end_to_end(tmp_path):
    data, run_dir = trained_run(tmp_path)
    checkpoint = os.path.join(run_dir, 'checkpoints', 'final.pt')
    assert os.path.exists(checkpoint)
    assert os.path.exists(os.path.join(run_dir, 'losses.csv'))

    # Inference on the held-out OC frames, scored against their masks
    infer_dir = str(tmp_path / 'infer')
    test_frames = os.path.join(data, 'testA')
    code, _, err = run('infer', '--checkpoint', checkpoint, '--frames', test_frames,
                       '--gt', os.path.join(test_frames, 'masks'), '--out', infer_dir)
    assert code == EXIT_OK, err
    with open(os.path.join(infer_dir, 'summary.json')) as f:
        summary = json.load(f)
    assert summary['frames'] == 3 and summary['skipped'] == 0
    assert 0.0 <= summary['metrics']['dice'] <= 1.0
    assert summary['temporal_stability'] is not None
    for folder in ('vc', 'masks', 'overlays'):
        assert len(list_frames(os.path.join(infer_dir, folder))) == 3
    assert os.path.exists(os.path.join(infer_dir, 'index.html'))

    # Per-frame processing is stateless: one frame alone gives the same mask
    first = list_frames(test_frames)[0]
    single = tmp_path / 'single'
    single.mkdir()
    shutil.copy(first, single)
    single_dir = str(tmp_path / 'infer_single')
    assert run('infer', '--checkpoint', checkpoint, '--frames', str(single), '--out', single_dir)[0] == EXIT_OK
    name = os.path.basename(first)
    assert read_bytes(os.path.join(single_dir, 'masks', name)) == read_bytes(os.path.join(infer_dir, 'masks', name))

    # An unreadable frame is skipped, the rest still processed
    (single / 'zz_garbage.png').write_bytes(b'not an image')
    garbage_dir = str(tmp_path / 'infer_garbage')
    code, out, _ = run('infer', '--checkpoint', checkpoint, '--frames', str(single), '--out', garbage_dir)
    assert code == EXIT_OK
    with open(os.path.join(garbage_dir, 'summary.json')) as f:
        summary = json.load(f)
    assert summary['frames'] == 1 and summary['skipped_ids'] == ['zz_garbage']

    # Samples are reproducible for a fixed noise seed
    vc_frame = list_frames(os.path.join(data, 'trainB'))[0]
    sample_dirs = [str(tmp_path / f'sample_{i}') for i in range(2)]
    for sample_dir in sample_dirs:
        code, _, err = run('sample', '--checkpoint', checkpoint, '--input', vc_frame, '--k', '3',
                           '--noise-seed', '7', '--out', sample_dir)
        assert code == EXIT_OK, err
    for index in range(3):
        name = f"sample_{index:02d}.png"
        assert read_bytes(os.path.join(sample_dirs[0], name)) == read_bytes(os.path.join(sample_dirs[1], name))
    assert os.path.exists(os.path.join(sample_dirs[0], 'samples_grid.png'))

    assert run('sample', '--checkpoint', checkpoint, '--input', vc_frame, '--k', '0',
               '--out', str(tmp_path / 'sample_none'))[0] == EXIT_USAGE
    assert run('sample', '--checkpoint', checkpoint, '--input', first, '--input-domain', 'oc', '--k', '2',
               '--out', str(tmp_path / 'sample_oc'))[0] == EXIT_OK


def test_cli_resume_matches_uninterrupted_run(tmp_path):
    data, run_dir = trained_run(tmp_path)
    resumed_dir = str(tmp_path / 'resumed')
    code, _, err = run('train', '--data', data, '--out', resumed_dir,
                       '--resume', os.path.join(run_dir, 'checkpoints', 'ckpt_000001.pt'),
                       '--override', *MODEL_OVERRIDES)
    assert code == EXIT_OK, err
    assert read_bytes(os.path.join(resumed_dir, 'losses.csv')) == read_bytes(os.path.join(run_dir, 'losses.csv'))
    with open(os.path.join(resumed_dir, 'run.json')) as f:
        assert json.load(f)['steps'] == 2


def test_setup_helpers(tmp_path):
    created = setup_dirs(str(tmp_path))
    assert len(created) == len(WORK_DIRS)
    assert all(os.path.isdir(path) for path in created)
    assert missing_packages({'json': 'json', 'no_such_module_for_lumen': 'lumen-extra'}) == ['lumen-extra']
    assert missing_packages() == []
    assert all(version is not None for version in package_versions().values())


def test_launcher_runs_the_cli(tmp_path):
    empty = tmp_path / 'empty'
    empty.mkdir()
    with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
        code = launch(['eval', '--pred', str(empty), '--gt', str(empty), '--out', str(tmp_path / 'out')])
    assert code == EXIT_USAGE


TESTS = [
    test_help_matches_golden_file,
    test_bad_override_is_a_usage_error,
    test_gen_data,
    test_config_file,
    test_eval,
    test_train_without_dataset,
    test_missing_checkpoint,
    test_train_infer_sample_end_to_end,
    test_cli_resume_matches_uninterrupted_run,
    test_setup_helpers,
    test_launcher_runs_the_cli,
]


def main():
    """Run all tests"""
    run_tests("Testing command line", TESTS)


if __name__ == "__main__":
    main()
