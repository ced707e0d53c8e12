#!/usr/bin/env python3
"""
Smoke acceptance run for Lumen
Builds the smoke dataset, trains, then checks loss trends, noise diversity,
held-out Dice / accuracy and (with --determinism) rerun and resume identity
"""

import argparse
import filecmp
import json
import os
import sys

import pandas as pd

from build_dataset import generate_dataset, split_dir
from lumen_cli import main as lumen_main
from lumen_config import load_config
from train_sls import UnpairedFrames, noise_diversity, restore_model, train


def check(results, name, passed, detail):
    mark = '✅' if passed else '❌'
    print(f"{mark} {name}: {detail}")
    results.append(passed)


def main():
    parser = argparse.ArgumentParser(description='Lumen smoke acceptance run')
    parser.add_argument('--config', default='lumen_smoke.conf')
    parser.add_argument('--work', default='smoke_run')
    parser.add_argument('--determinism', action='store_true', help='also rerun and resume to compare CSVs')
    args = parser.parse_args()

    config = load_config(args.config)
    data_root = os.path.join(args.work, 'data')
    run_a = os.path.join(args.work, 'run_a')
    results = []

    print("=== Lumen smoke acceptance ===")
    if not os.path.exists(os.path.join(data_root, 'manifest.csv')):
        generate_dataset(config, data_root)
    train(config, data_root, run_a)

    # Loss trends
    losses = pd.read_csv(os.path.join(run_a, 'losses.csv'))
    check(results, "CSV rows", len(losses) == config['iterations'], f"{len(losses)} rows")
    first, last = losses['total'].head(100).median(), losses['total'].tail(100).median()
    check(results, "Total loss decreases", last < first, f"median {first:.4f} -> {last:.4f}")
    sls = losses['sls_vc'] + losses['sls_oc']
    check(results, "Shared latent loss halves", sls.iloc[-1] < 0.5 * sls.iloc[0],
          f"{sls.iloc[0]:.4f} -> {sls.iloc[-1]:.4f}")

    # Noise diversity on held-out VC frames
    final_checkpoint = os.path.join(run_a, 'checkpoints', 'final.pt')
    model, _ = restore_model(final_checkpoint)
    test_frames = UnpairedFrames(data_root, config['image_size'], split='test', threads=config['loader_threads'])
    diversity = noise_diversity(model, test_frames.stack('vc', 16), seed=config['seed'])
    check(results, "Noise diversity", diversity >= 0.05, f"mean L1 {diversity:.4f}")

    # Held-out missed-surface prediction
    infer_dir = os.path.join(args.work, 'infer')
    test_oc = split_dir(data_root, 'test', 'oc')
    code = lumen_main(['infer', '--config', args.config, '--checkpoint', final_checkpoint,
                       '--frames', test_oc, '--gt', os.path.join(test_oc, 'masks'), '--out', infer_dir])
    if code == 0:
        with open(os.path.join(infer_dir, 'metrics.json')) as f:
            metrics = json.load(f)
        check(results, "Held-out Dice", metrics['dice'] >= 0.5, f"{metrics['dice']:.4f}")
        check(results, "Held-out accuracy", metrics['accuracy'] >= 0.75, f"{metrics['accuracy']:.4f}")
    else:
        check(results, "Inference", False, f"exit code {code}")

    if args.determinism:
        run_b = os.path.join(args.work, 'run_b')
        train(config, data_root, run_b)
        check(results, "Rerun CSV identical",
              filecmp.cmp(os.path.join(run_a, 'losses.csv'), os.path.join(run_b, 'losses.csv'), shallow=False),
              "byte comparison")

        run_c = os.path.join(args.work, 'run_c')
        resume_from = os.path.join(run_a, 'checkpoints', f"ckpt_{config['checkpoint_every']:06d}.pt")
        train(config, data_root, run_c, resume=resume_from)
        check(results, "Resumed CSV identical",
              filecmp.cmp(os.path.join(run_a, 'losses.csv'), os.path.join(run_c, 'losses.csv'), shallow=False),
              f"resumed from {resume_from}")

    if all(results):
        print("\n🎉 All acceptance checks passed!")
    else:
        print(f"\n❌ {results.count(False)} acceptance check(s) failed")
        sys.exit(1)


if __name__ == "__main__":
    main()
