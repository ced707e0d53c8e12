#!/usr/bin/env python3
"""
Lumen command line
gen-data, train, infer, sample and eval subcommands over one config file
plus key=value overrides; every run writes run.json into --out
"""

import argparse
import json
import os
import platform
import sys
import time

import numpy as np
import pandas as pd
import torch
from PIL import UnidentifiedImageError
from torchvision.utils import make_grid, save_image as save_image_grid
from tqdm import tqdm

from build_dataset import generate_dataset
from checkpoint_store import CheckpointError
from evaluate_missed import (binarize_missed, evaluate_mask_dirs, overlay, temporal_stability,
                             write_contact_sheet, write_metrics_report)
from frame_io import (frame_id_of, image_to_tensor, list_frames, load_image, save_image, save_mask,
                      tensor_to_image)
from lumen_config import ConfigurationError, config_hash, describe_config_keys, load_config
from sls_networks import sample_noise
from train_sls import DatasetError, TrainingDivergedError, restore_model, train

__version__ = '1.0.0'

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def write_run_record(out_dir, command, config, extra=None):
    """run.json provenance: command, config hash, seed and library versions"""
    os.makedirs(out_dir, exist_ok=True)
    record = {
        'command': command,
        'config_hash': config_hash(config),
        'seed': config['seed'],
        'config': config,
        'versions': {
            'lumen': __version__,
            'python': platform.python_version(),
            'torch': torch.__version__,
            'numpy': np.__version__,
            'pandas': pd.__version__,
        },
    }
    if extra:
        record.update(extra)
    path = os.path.join(out_dir, 'run.json')
    with open(path, 'w') as f:
        json.dump(record, f, indent=2, sort_keys=True)
    return path


def cmd_gen_data(args, config):
    manifest = generate_dataset(config, args.out)
    write_run_record(args.out, 'gen-data', config, {'frames': len(manifest)})
    return EXIT_OK


def cmd_train(args, config):
    result = train(config, args.data, args.out, resume=args.resume)
    write_run_record(args.out, 'train', config, {
        'dataset': args.data,
        'resume': args.resume,
        'steps': result['steps'],
    })
    return EXIT_OK


def cmd_infer(args, config):
    """Translate OC frames to VC, binarize the missed overlay and write masks, overlays and a summary"""
    model, model_config = restore_model(args.checkpoint)
    size = model_config['image_size']
    tau = config['tau']
    alpha = config['overlay_alpha']

    folders = {name: os.path.join(args.out, name) for name in ('vc', 'masks', 'overlays')}
    for folder in folders.values():
        os.makedirs(folder, exist_ok=True)

    frames = list_frames(args.frames)
    masks = []
    skipped = []
    entries = []
    start = time.perf_counter()

    for path in tqdm(frames, desc='infer', unit='frame'):
        frame_id = frame_id_of(path)
        try:
            image = load_image(path, size)
        except (OSError, UnidentifiedImageError, ValueError) as e:
            tqdm.write(f"⚠️ Skipping unreadable frame {path}: {e}")
            skipped.append(frame_id)
            continue

        with torch.no_grad():
            vc_image = tensor_to_image(model.vc_from_oc(image_to_tensor(image)))
        mask = binarize_missed(vc_image, tau)
        masks.append(mask)

        entry = {'frame_id': frame_id, 'missed_fraction': round(float(mask.mean()), 6)}
        entry['input_path'] = path
        entry['vc_path'] = save_image(os.path.join(folders['vc'], f"{frame_id}.png"), vc_image)
        save_mask(os.path.join(folders['masks'], f"{frame_id}.png"), mask)
        entry['overlay_path'] = save_image(os.path.join(folders['overlays'], f"{frame_id}.png"),
                                           overlay(image, mask, alpha))
        entries.append(entry)

    elapsed = time.perf_counter() - start
    summary = {
        'frames': len(masks),
        'skipped': len(skipped),
        'skipped_ids': skipped,
        'frames_per_second': len(masks) / elapsed if elapsed > 0 else None,
        'temporal_stability': temporal_stability(masks) if len(masks) >= 2 else None,
    }

    if args.gt:
        report = evaluate_mask_dirs(folders['masks'], args.gt)
        write_metrics_report(report, args.out)
        summary['metrics'] = report.aggregate()
        print(f"✅ Dice {report.dice:.4f}, accuracy {report.accuracy:.4f} over {report.frame_count} frames")

    with open(os.path.join(args.out, 'summary.json'), 'w') as f:
        json.dump(summary, f, indent=2)
    write_contact_sheet(args.out, entries, title='Lumen missed-surface inference')
    write_run_record(args.out, 'infer', config, {'checkpoint': args.checkpoint, 'frames_dir': args.frames})

    print(f"✅ {len(masks)} frames translated, {len(skipped)} skipped")
    return EXIT_OK


def cmd_sample(args, config):
    """k OC renderings of one input's geometry, one noise draw each"""
    if args.k < 1:
        raise ConfigurationError(f"--k must be >= 1, got {args.k}")
    model, model_config = restore_model(args.checkpoint)
    image = image_to_tensor(load_image(args.input, model_config['image_size']))
    stream = torch.Generator().manual_seed(args.noise_seed)
    os.makedirs(args.out, exist_ok=True)

    samples = []
    with torch.no_grad():
        latent = model.latent_from(image, args.input_domain)
        for index in range(args.k):
            z = sample_noise(1, model.noise_dim, stream)
            sample = model.g_oc.decoder(latent, z)
            save_image(os.path.join(args.out, f"sample_{index:02d}.png"), tensor_to_image(sample))
            samples.append(sample)

    grid = make_grid(torch.cat([image] + samples), nrow=args.k + 1, normalize=True, value_range=(-1, 1))
    save_image_grid(grid, os.path.join(args.out, 'samples_grid.png'))
    write_run_record(args.out, 'sample', config, {
        'checkpoint': args.checkpoint,
        'input': args.input,
        'input_domain': args.input_domain,
        'k': args.k,
        'noise_seed': args.noise_seed,
    })
    print(f"✅ Wrote {args.k} samples to {args.out}")
    return EXIT_OK


def cmd_eval(args, config):
    report = evaluate_mask_dirs(args.pred, args.gt)
    write_metrics_report(report, args.out)
    write_run_record(args.out, 'eval', config, {'pred': args.pred, 'gt': args.gt})
    print("=== Missed-surface metrics ===")
    for key, value in report.aggregate().items():
        print(f"{key}: {value}")
    return EXIT_OK


COMMANDS = {
    'gen-data': (cmd_gen_data, "Render the synthetic OC / VC dataset"),
    'train': (cmd_train, "Train the translator on a dataset"),
    'infer': (cmd_infer, "Translate OC frames and mark missed surface"),
    'sample': (cmd_sample, "Draw k OC renderings of one frame's geometry"),
    'eval': (cmd_eval, "Score predicted masks against ground truth"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog='lumen', description="Lumen shared-latent OC <-> VC translator",
        epilog=describe_config_keys(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--version', action='version', version=f"lumen {__version__}")
    subparsers = parser.add_subparsers(dest='command', required=True)

    parsers = {}
    for name, (_, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text, epilog=describe_config_keys(),
                                    formatter_class=argparse.RawDescriptionHelpFormatter)
        sub.add_argument('--config', help="key = value config file")
        sub.add_argument('--override', nargs='+', action='extend', default=[], metavar='KEY=VALUE',
                         help="config overrides applied after the file")
        sub.add_argument('--out', default='.', help="output directory (all paths written below it)")
        parsers[name] = sub

    parsers['train'].add_argument('--data', required=True, help="dataset root")
    parsers['train'].add_argument('--resume', help="checkpoint to continue from")

    parsers['infer'].add_argument('--checkpoint', required=True)
    parsers['infer'].add_argument('--frames', required=True, help="directory of OC frames")
    parsers['infer'].add_argument('--gt', help="ground-truth mask directory to score against")

    parsers['sample'].add_argument('--checkpoint', required=True)
    parsers['sample'].add_argument('--input', required=True, help="input frame")
    parsers['sample'].add_argument('--k', type=int, default=5, help="number of samples")
    parsers['sample'].add_argument('--noise-seed', type=int, default=0)
    parsers['sample'].add_argument('--input-domain', choices=('vc', 'oc'), default='vc')

    parsers['eval'].add_argument('--pred', required=True, help="predicted mask directory")
    parsers['eval'].add_argument('--gt', required=True, help="ground-truth mask directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = COMMANDS[args.command][0]

    try:
        config = load_config(args.config, args.override)
        return handler(args, config)
    except (ConfigurationError, DatasetError, FileNotFoundError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, TrainingDivergedError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        print(f"❌ {args.command} failed: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
