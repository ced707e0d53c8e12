#!/usr/bin/env python3
"""
Training loop for the Lumen shared latent translator
Alternates discriminator and generator updates over unpaired OC / VC batches,
with image pools, seeded noise, atomic checkpoints and a per-step loss CSV
"""

import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
from torch.utils.data import DataLoader, Dataset, Sampler
from tqdm import tqdm

from build_dataset import split_dir
from checkpoint_store import CheckpointError, CheckpointStore, load_checkpoint
from frame_io import list_frames, load_image
from lumen_config import ConfigurationError, config_hash, load_config
from sls_losses import (CSV_COLUMNS, LossWeights, TranslationPair, WiringAudit, discriminator_objective,
                        generator_objective, image_distance)
from sls_networks import SharedLatentModel, build_model, sample_noise

GENERATOR_NOISE_KEYS = ('excyc', 'cyc', 'sls', 'dir', 'gan', 'noise1', 'noise2')
DOMAINS = ('oc', 'vc')

# Keys that may change between a checkpoint and its resumed run
RESUME_FREE_KEYS = ('iterations', 'checkpoint_every', 'loader_threads')


class DatasetError(RuntimeError):
    """Raised when the dataset layout is missing or empty"""


class TrainingDivergedError(RuntimeError):
    """Raised when a loss term turns non-finite"""

    def __init__(self, step, values):
        self.step = step
        self.values = values
        super().__init__(f"Non-finite loss at step {step}: {values}")


@dataclass
class TrainConfig:
    image_size: int = 64
    batch_size: int = 1
    iterations: int = 2000
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    pool_size: int = 50
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 500
    gan_mode: str = 'log'
    noise_norm: str = 'mean_l1'

    def __post_init__(self):
        if self.image_size <= 0 or self.image_size % 4:
            raise ConfigurationError(f"image_size must be a positive multiple of 4, got {self.image_size}")
        if self.iterations <= 0:
            raise ConfigurationError("iterations must be > 0")
        if self.pool_size < 0:
            raise ConfigurationError("pool_size must be >= 0")

    @classmethod
    def from_config(cls, config):
        return cls(
            image_size=config['image_size'],
            batch_size=config['batch_size'],
            iterations=config['iterations'],
            learning_rate=config['learning_rate'],
            adam_beta1=config['adam_beta1'],
            adam_beta2=config['adam_beta2'],
            pool_size=config['pool_size'],
            weights=LossWeights.from_config(config),
            seed=config['seed'],
            checkpoint_every=config['checkpoint_every'],
            gan_mode=config['gan_mode'],
            noise_norm=config['noise_norm'],
        )


class ImagePool:
    def __init__(self, capacity, seed=0):
        """
        History of generated images shown to a discriminator

        Args:
            capacity: stored images, 0 disables the pool
            seed: seed of the pool's own random stream
        """
        self.capacity = capacity
        self.images = []
        self.rng = np.random.default_rng(seed)
        self.full_queries = 0
        self.stored_returns = 0

    def __len__(self):
        return len(self.images)

    def query(self, images):
        """Per image: return it while filling, then either it or a stored one (swapped in), 1/2 each"""
        if self.capacity == 0:
            return images
        out = []
        for image in images.detach():
            image = image[None].clone()
            if len(self.images) < self.capacity:
                self.images.append(image)
                out.append(image)
                continue
            self.full_queries += 1
            if self.rng.uniform() < 0.5:
                index = int(self.rng.integers(0, self.capacity))
                out.append(self.images[index])
                self.images[index] = image
                self.stored_returns += 1
            else:
                out.append(image)
        return torch.cat(out, dim=0)

    def stored_fraction(self):
        return self.stored_returns / self.full_queries if self.full_queries else 0.0

    def state_dict(self):
        return {
            'capacity': self.capacity,
            'images': [t.clone() for t in self.images],
            'rng': self.rng.bit_generator.state,
            'full_queries': self.full_queries,
            'stored_returns': self.stored_returns,
        }

    def load_state_dict(self, state):
        self.capacity = state['capacity']
        self.images = [t.clone() for t in state['images']]
        self.rng.bit_generator.state = state['rng']
        self.full_queries = state['full_queries']
        self.stored_returns = state['stored_returns']


def pool_query(pool: ImagePool, image):
    return pool.query(image)


class FrameFolder(Dataset):
    def __init__(self, folder, image_size):
        """Frames of one domain folder as (3, H, W) tensors in [-1, 1]"""
        if not os.path.isdir(folder):
            raise DatasetError(f"Missing dataset directory: {folder}")
        self.folder = folder
        self.image_size = image_size
        self.paths = list_frames(folder)
        if not self.paths:
            raise DatasetError(f"No frames in {folder}")

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, index):
        image = load_image(self.paths[index], self.image_size)
        return torch.from_numpy(image.transpose(2, 0, 1).copy())


class StepBatchSampler(Sampler):
    def __init__(self, frame_count, batch_size, seed, stream, start=0, stop=1):
        """
        Batch indices for steps start..stop-1, each drawn from a stream keyed by (seed, stream, step)
        so a resumed run sees the same batches as an uninterrupted one
        """
        self.frame_count = frame_count
        self.batch_size = batch_size
        self.seed = seed
        self.stream = stream
        self.start = start
        self.stop = stop

    def indices(self, step):
        rng = np.random.default_rng([self.seed, self.stream, step])
        return rng.integers(0, self.frame_count, size=self.batch_size).tolist()

    def __iter__(self):
        for step in range(self.start, self.stop):
            yield self.indices(step)

    def __len__(self):
        return max(0, self.stop - self.start)


class UnpairedFrames:
    def __init__(self, root, image_size, split='train', threads=4):
        """
        OC (A) and VC (B) frames of one split, read through DataLoaders

        Args:
            root: dataset root with <split>A and <split>B folders
            image_size: frames are resized to image_size x image_size
            threads: DataLoader workers; 1 or less loads in the calling process
        """
        self.root = root
        self.datasets = {domain: FrameFolder(split_dir(root, split, domain), image_size)
                         for domain in DOMAINS}
        self.workers = threads if threads > 1 else 0

    def counts(self):
        return {domain: len(dataset) for domain, dataset in self.datasets.items()}

    def loader(self, domain, seed, batch_size, start, stop):
        sampler = StepBatchSampler(len(self.datasets[domain]), batch_size, seed, DOMAINS.index(domain), start, stop)
        return DataLoader(self.datasets[domain], batch_sampler=sampler, num_workers=self.workers)

    def batches(self, seed, batch_size, start, stop):
        """Unpaired (OC, VC) batches for steps start..stop-1"""
        return zip(self.loader('oc', seed, batch_size, start, stop),
                   self.loader('vc', seed, batch_size, start, stop))

    def batch(self, seed, step, batch_size):
        return next(iter(self.batches(seed, batch_size, step, step + 1)))

    def stack(self, domain, limit=None):
        """The first `limit` frames of a domain as one batch"""
        dataset = self.datasets[domain]
        count = len(dataset) if limit is None else min(limit, len(dataset))
        return next(iter(DataLoader(dataset, batch_size=count, num_workers=self.workers)))


class Trainer:
    def __init__(self, config, model=None):
        """
        Optimization state of one run

        Args:
            config: Lumen config dict
            model: optional SharedLatentModel, built from config and seed when omitted
        """
        self.config = dict(config)
        self.settings = TrainConfig.from_config(config)
        seed = self.settings.seed

        self.model = model if model is not None else build_model(config, seed)
        betas = (self.settings.adam_beta1, self.settings.adam_beta2)
        lr = self.settings.learning_rate
        self.opt_g = torch.optim.Adam(self.model.generator_parameters(), lr=lr, betas=betas)
        self.opt_d_dir = torch.optim.Adam(self.model.d_dir.parameters(), lr=lr, betas=betas)
        self.opt_d_oc = torch.optim.Adam(self.model.d_oc.parameters(), lr=lr, betas=betas)

        self.noise_stream = torch.Generator().manual_seed(seed)
        self.pool_dir = ImagePool(self.settings.pool_size, seed=[seed, 11])
        self.pool_oc = ImagePool(self.settings.pool_size, seed=[seed, 12])

        self.step = 0
        self.loss_rows = []

    def noise(self, batch):
        param = next(self.model.parameters())
        return sample_noise(batch, self.model.noise_dim, self.noise_stream, dtype=param.dtype)

    def generator_noises(self, batch):
        return {key: self.noise(batch) for key in GENERATOR_NOISE_KEYS}

    def make_fakes(self, batch_oc, batch_vc):
        """Detached fakes for the discriminator phase, run through the pools"""
        with torch.no_grad():
            vc_from_oc = self.model.vc_from_oc(batch_oc)
            oc_from_vc = self.model.oc_from_vc(batch_vc, self.noise(len(batch_vc)))
            reconstruction = self.model.g_oc(vc_from_oc, self.noise(len(batch_oc)))

        pooled = pool_query(self.pool_dir, torch.cat([oc_from_vc, batch_vc], dim=1))
        fake_pair = TranslationPair(pooled[:, :3], pooled[:, 3:])
        cycle_fakes = pool_query(self.pool_oc, reconstruction)
        return vc_from_oc, fake_pair, cycle_fakes

    def discriminator_phase(self, batch_oc, batch_vc, audit=None):
        vc_from_oc, fake_pair, cycle_fakes = self.make_fakes(batch_oc, batch_vc)
        self.opt_d_dir.zero_grad()
        self.opt_d_oc.zero_grad()
        d_dir_loss, d_oc_loss = discriminator_objective(
            self.model, batch_oc, vc_from_oc, fake_pair, cycle_fakes, self.settings.gan_mode, audit)
        values = {'d_dir': d_dir_loss.item(), 'd_oc': d_oc_loss.item()}
        if not all(math.isfinite(v) for v in values.values()):
            raise TrainingDivergedError(self.step + 1, values)
        (d_dir_loss + d_oc_loss).backward()
        self.opt_d_dir.step()
        self.opt_d_oc.step()
        return values['d_dir'], values['d_oc']

    def generator_phase(self, batch_oc, batch_vc, audit=None):
        self.opt_g.zero_grad()
        total, report = generator_objective(
            self.model, batch_oc, batch_vc, self.generator_noises(len(batch_oc)), self.settings.weights,
            self.settings.gan_mode, self.settings.noise_norm, audit)
        values = report.detached()
        if not values.is_finite():
            raise TrainingDivergedError(self.step + 1, values.values())
        total.backward()
        self.opt_g.step()
        return values

    def train_step(self, batch_oc, batch_vc, audit=None):
        """One discriminator update then one generator update; returns the generator-phase LossReport"""
        self.model.train()
        self.discriminator_phase(batch_oc, batch_vc, audit)
        report = self.generator_phase(batch_oc, batch_vc, audit)
        self.step += 1
        self.loss_rows.append(report.to_row(self.step))
        return report

    def state_dict(self):
        return {
            'model': self.model.state_dict(),
            'optimizers': {
                'g': self.opt_g.state_dict(),
                'd_dir': self.opt_d_dir.state_dict(),
                'd_oc': self.opt_d_oc.state_dict(),
            },
            'pools': {'dir': self.pool_dir.state_dict(), 'oc': self.pool_oc.state_dict()},
            'noise_stream': self.noise_stream.get_state(),
            'step': self.step,
            'loss_rows': list(self.loss_rows),
            'seed': self.settings.seed,
            'config': dict(self.config),
            'config_hash': config_hash(self.config),
        }

    def load_state_dict(self, payload):
        self.model.load_state_dict(payload['model'])
        self.opt_g.load_state_dict(payload['optimizers']['g'])
        self.opt_d_dir.load_state_dict(payload['optimizers']['d_dir'])
        self.opt_d_oc.load_state_dict(payload['optimizers']['d_oc'])
        self.pool_dir.load_state_dict(payload['pools']['dir'])
        self.pool_oc.load_state_dict(payload['pools']['oc'])
        self.noise_stream.set_state(payload['noise_stream'])
        self.step = payload['step']
        self.loss_rows = list(payload['loss_rows'])


def resume_hash(config):
    return config_hash({k: v for k, v in config.items() if k not in RESUME_FREE_KEYS})


def write_loss_csv(rows, path):
    """One row per step: step plus the nine loss scalars"""
    frame = pd.DataFrame(rows, columns=list(CSV_COLUMNS))
    frame.to_csv(path, index=False, float_format='%.10g')
    return path


def write_divergence_dump(error: TrainingDivergedError, path):
    with open(path, 'w') as f:
        json.dump({'step': error.step, 'values': error.values}, f, indent=2)
    return path


def train(config, dataset_root, out_dir, resume=None, progress=True):
    """
    Run the training loop

    Args:
        config: Lumen config dict
        dataset_root: dataset with trainA / trainB folders
        out_dir: receives checkpoints/ and losses.csv
        resume: optional checkpoint path to continue from

    Returns:
        dict with the final checkpoint path, CSV path and step count
    """
    os.makedirs(out_dir, exist_ok=True)
    data = UnpairedFrames(dataset_root, config['image_size'], threads=config['loader_threads'])
    trainer = Trainer(config)
    store = CheckpointStore(os.path.join(out_dir, 'checkpoints'))
    csv_path = os.path.join(out_dir, 'losses.csv')

    if resume:
        payload = load_checkpoint(resume)
        if resume_hash(payload['config']) != resume_hash(config):
            raise CheckpointError(f"Checkpoint {resume} was written with a different config")
        trainer.load_state_dict(payload)
        print(f"🔄 Resuming from step {trainer.step}")

    settings = trainer.settings
    counts = data.counts()
    print(f"🔄 Training on {counts['oc']} OC / {counts['vc']} VC frames for {settings.iterations} iterations...")

    bar = tqdm(total=settings.iterations, initial=trainer.step, desc='train', unit='it', disable=not progress)
    try:
        for batch_oc, batch_vc in data.batches(settings.seed, settings.batch_size, trainer.step, settings.iterations):
            report = trainer.train_step(batch_oc, batch_vc)
            bar.update(1)
            bar.set_postfix(total=f"{float(report.total):.4f}")

            if trainer.step % settings.checkpoint_every == 0 and trainer.step < settings.iterations:
                path = store.save(trainer.state_dict(), trainer.step)
                write_loss_csv(trainer.loss_rows, csv_path)
                tqdm.write(f"💾 Checkpoint {path}")
    except TrainingDivergedError as e:
        write_loss_csv(trainer.loss_rows, csv_path)
        dump = write_divergence_dump(e, os.path.join(out_dir, 'divergence_dump.json'))
        tqdm.write(f"❌ {e} (dump: {dump})")
        raise
    finally:
        bar.close()

    final_path = store.save(trainer.state_dict())
    write_loss_csv(trainer.loss_rows, csv_path)
    print(f"✅ Training finished at step {trainer.step}: {final_path}")
    return {'checkpoint': final_path, 'losses': csv_path, 'steps': trainer.step}


def restore_model(path):
    """Model and config from a checkpoint, in eval mode"""
    payload = load_checkpoint(path)
    model = SharedLatentModel.from_config(payload['config'])
    model.load_state_dict(payload['model'])
    model.eval()
    return model, payload['config']


def noise_diversity(model, images_vc, seed=0):
    """Mean L1 distance between two noise draws decoded from the same VC latents"""
    stream = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        latent = model.latent_from(images_vc, 'vc')
        z1 = sample_noise(len(images_vc), model.noise_dim, stream)
        z2 = sample_noise(len(images_vc), model.noise_dim, stream)
        distance = image_distance(model.g_oc.decoder(latent, z1), model.g_oc.decoder(latent, z2))
    return float(distance.mean())


def audited_step(trainer, batch_oc, batch_vc):
    """Run one training step while recording which tensors each loss term consumed"""
    audit = WiringAudit()
    with audit.watch(trainer.model):
        trainer.train_step(batch_oc, batch_vc, audit)
    return audit


def main():
    """Train from a config file: train_sls.py <config> <dataset_root> <out_dir>"""
    if len(sys.argv) < 4:
        print("Usage: train_sls.py <config> <dataset_root> <out_dir>")
        sys.exit(2)
    try:
        config = load_config(sys.argv[1])
        train(config, sys.argv[2], sys.argv[3])
    except (ConfigurationError, DatasetError) as e:
        print(f"❌ {e}")
        sys.exit(2)


if __name__ == "__main__":
    main()
