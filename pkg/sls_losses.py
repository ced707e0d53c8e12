#!/usr/bin/env python3
"""
Loss terms for the shared latent space translator
Cycle, extended cycle, shared latent, identity, directional and OC GAN,
and noise diversity losses, plus the weighted objectives of both phases
"""

import math
from collections import namedtuple
from contextlib import contextmanager
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Optional

import torch

from lumen_config import ConfigurationError
from sls_networks import discriminate, discriminate_dir

EPS = 1e-7

LOSS_TERMS = ('cyc', 'excyc', 'sls_vc', 'sls_oc', 'iden', 'dir', 'gan_oc', 'noise')
CSV_COLUMNS = ('step',) + LOSS_TERMS + ('total',)

# Directional discriminator input, always ordered (OC image, VC image)
TranslationPair = namedtuple('TranslationPair', ['oc', 'vc'])


@dataclass
class LossWeights:
    lambda_c: float = 10.0
    lambda_sls: float = 1.0
    lambda_iden: float = 1.0
    lambda_adv: float = 1.0
    lambda_noise: float = 1.0
    alpha: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigurationError(f"Loss weight {f.name} must be non-negative")

    @classmethod
    def from_config(cls, config):
        return cls(**{f.name: float(config[f.name]) for f in fields(cls)})


def _scalar(value):
    return value.item() if torch.is_tensor(value) else float(value)


@dataclass
class LossReport:
    cyc: Any = 0.0
    excyc: Any = 0.0
    sls_vc: Any = 0.0
    sls_oc: Any = 0.0
    iden: Any = 0.0
    dir: Any = 0.0
    gan_oc: Any = 0.0
    noise: Any = 0.0
    total: Any = 0.0

    def values(self):
        """Plain float values of every term"""
        return {name: _scalar(getattr(self, name)) for name in LOSS_TERMS + ('total',)}

    def to_row(self, step):
        row = {'step': int(step)}
        row.update(self.values())
        return row

    def detached(self):
        return LossReport(**self.values())

    def is_finite(self):
        return all(math.isfinite(v) for v in self.values().values())


class WiringAudit:
    """
    Records what each loss term consumed during one step

    Terms log the tensors they were handed; watch(model) additionally hooks the
    encoders and discriminators so every network call is logged with its real input
    """

    WATCHED = {
        'en_oc': lambda model: model.g_oc.encoder,
        'en_vc': lambda model: model.g_vc.encoder,
        'd_oc': lambda model: model.d_oc,
        'd_dir': lambda model: model.d_dir,
    }

    def __init__(self):
        self.records: List[Dict[str, Any]] = []

    def record(self, term, role, tensor):
        self.records.append({
            'term': term,
            'role': role,
            'tensor': tensor.detach().clone(),
            'ptr': tensor.data_ptr(),
        })

    def find(self, term, role=None):
        return [r for r in self.records if r['term'] == term and (role is None or r['role'] == role)]

    def calls(self, network):
        """Inputs of every call into a watched network, in call order"""
        return [r['tensor'] for r in self.find(network, 'call')]

    def call_ptrs(self, network):
        return [r['ptr'] for r in self.find(network, 'call')]

    @contextmanager
    def watch(self, model):
        handles = []
        for name, pick in self.WATCHED.items():
            def hook(module, inputs, output, name=name):
                self.record(name, 'call', inputs[0])
            handles.append(pick(model).register_forward_hook(hook))
        try:
            yield self
        finally:
            for handle in handles:
                handle.remove()

    def terms(self):
        return [r['term'] for r in self.records]


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ConfigurationError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _apply(g, x, z=None):
    return g(x) if z is None else g(x, z)


def l1_distance(a, b):
    """Mean absolute difference over all elements"""
    _check_same_shape(a, b, "L1 distance")
    return (a - b).abs().mean()


def cycle_loss(y, y_reconstructed):
    return l1_distance(y, y_reconstructed)


def extended_cycle_loss(g_a, g_b, y, z=None):
    """|G_b(y) - G_b(G_a(G_b(y)))|, compared in G_b's output domain; z feeds G_a"""
    common = g_b(y)
    return l1_distance(common, g_b(_apply(g_a, common, z)))


def shared_latent_loss(en_b, g_b, en_a, y, z=None):
    """|En_b(y) - En_a(G_b(y))|; z feeds G_b when it is the OC generator"""
    latent_b = en_b(y)
    latent_a = en_a(_apply(g_b, y, z))
    _check_same_shape(latent_b, latent_a, "Shared latent codes")
    return l1_distance(latent_b, latent_a)


def identity_loss(g_vc, y_vc):
    return l1_distance(g_vc(y_vc), y_vc)


def translation_loss(weights: LossWeights, terms):
    """lambda_c [excyc + cyc] + lambda_sls [sls_vc + sls_oc] + lambda_iden iden"""
    return (weights.lambda_c * (terms['excyc'] + terms['cyc'])
            + weights.lambda_sls * (terms['sls_vc'] + terms['sls_oc'])
            + weights.lambda_iden * terms['iden'])


def _real_term(scores, mode):
    if mode == 'lsgan':
        return ((scores - 1.0) ** 2).mean()
    return -torch.log(scores.clamp(EPS, 1.0)).mean()


def _fake_term(scores, mode):
    if mode == 'lsgan':
        return (scores ** 2).mean()
    return -torch.log((1.0 - scores).clamp(EPS, 1.0)).mean()


def _check_mode(mode):
    if mode not in ('log', 'lsgan'):
        raise ConfigurationError(f"Unknown gan_mode: {mode}")


def gan_loss_discriminator(d, real, fake, mode='log'):
    """-mean log D(real) - mean log(1 - D(fake)); fake is detached here"""
    _check_mode(mode)
    _check_same_shape(real, fake, "GAN real/fake batches")
    return _real_term(discriminate(d, real), mode) + _fake_term(discriminate(d, fake.detach()), mode)


def gan_loss_generator(d, fake, mode='log'):
    """Non-saturating generator side: -mean log D(fake)"""
    _check_mode(mode)
    return _real_term(discriminate(d, fake), mode)


def _check_pairs(*pairs):
    for pair in pairs:
        if not isinstance(pair, TranslationPair):
            raise ConfigurationError("Directional pairs must be TranslationPair(oc, vc)")
        if pair.oc.shape != pair.vc.shape:
            raise ConfigurationError(
                f"Directional pair shapes differ: {tuple(pair.oc.shape)} vs {tuple(pair.vc.shape)}")


def dir_loss_discriminator(d_dir, real_pair, fake_pair, mode='log'):
    """
    Directional discriminator side

    Args:
        real_pair: TranslationPair(y, G_vc(y)) for y from OC
        fake_pair: TranslationPair(G_oc(x, z), x) for x from VC
    """
    _check_mode(mode)
    _check_pairs(real_pair, fake_pair)
    real_scores = discriminate_dir(d_dir, real_pair.oc.detach(), real_pair.vc.detach())
    fake_scores = discriminate_dir(d_dir, fake_pair.oc.detach(), fake_pair.vc.detach())
    return _real_term(real_scores, mode) + _fake_term(fake_scores, mode)


def dir_loss_generator(d_dir, real_pair, fake_pair, mode='log'):
    """Generator side: both translation directions try to pass for the other"""
    _check_mode(mode)
    _check_pairs(real_pair, fake_pair)
    real_scores = discriminate_dir(d_dir, real_pair.oc, real_pair.vc)
    fake_scores = discriminate_dir(d_dir, fake_pair.oc, fake_pair.vc)
    return _fake_term(real_scores, mode) + _real_term(fake_scores, mode)


def adversarial_loss(dir_term, gan_term):
    return dir_term + gan_term


def image_distance(a, b, norm='mean_l1'):
    """Per-sample distance between two image batches"""
    _check_same_shape(a, b, "Noise images")
    diff = (a - b).flatten(1)
    if norm == 'mean_l1':
        return diff.abs().mean(dim=1)
    if norm == 'rms':
        return torch.sqrt((diff ** 2).mean(dim=1) + 1e-12)
    raise ConfigurationError(f"Unknown noise_norm: {norm}")


def noise_hinge(distance, alpha=0.1):
    """max(0, alpha - distance), averaged over the batch"""
    return (alpha - distance).clamp(min=0.0).mean()


def noise_loss(de_oc, latent, z1, z2, alpha=0.1, norm='mean_l1'):
    """Push images decoded from one latent with two noise draws at least alpha apart"""
    distance = image_distance(de_oc(latent, z1), de_oc(latent, z2), norm)
    return noise_hinge(distance, alpha)


def total_loss(weights: LossWeights, terms):
    """Objective = translation + adversarial + noise; returns the full LossReport"""
    trans = translation_loss(weights, terms)
    adv = weights.lambda_adv * adversarial_loss(terms['dir'], terms['gan_oc'])
    noise = weights.lambda_noise * terms['noise']
    report = LossReport(**{name: terms[name] for name in LOSS_TERMS})
    report.total = trans + adv + noise
    return report


class _CachedGenerator:
    """Reuses a generator output when the same input and noise tensors come back"""

    def __init__(self, generator):
        self.generator = generator
        self._cache = {}

    def __call__(self, x, z=None):
        key = (id(x), id(z) if z is not None else None)
        if key not in self._cache:
            # Inputs are kept alive so their ids stay unique for this step
            self._cache[key] = (x, z, self.generator(x, z))
        return self._cache[key][2]


def generator_objective(model, batch_oc, batch_vc, noises, weights: LossWeights,
                        gan_mode='log', noise_norm='mean_l1', audit: Optional[WiringAudit] = None):
    """
    Generator-phase objective with the exact invocation pattern of the translation and adversarial losses

    Args:
        model: SharedLatentModel
        batch_oc, batch_vc: unpaired image batches
        noises: dict of noise batches keyed excyc, cyc, sls, dir, gan, noise1, noise2
        weights: LossWeights
        audit: optional WiringAudit filled with the tensors each term consumed

    Returns:
        (total loss tensor, LossReport of tensors)
    """
    g_oc = _CachedGenerator(model.g_oc)
    g_vc = _CachedGenerator(model.g_vc)
    en_oc = model.g_oc.encoder
    en_vc = model.g_vc.encoder

    terms = {}
    consumed = {}

    # Translation: extended cycle on OC, cycle on VC, shared latent both ways, identity on VC only
    consumed['excyc'] = batch_oc
    terms['excyc'] = extended_cycle_loss(g_oc, g_vc, consumed['excyc'], noises['excyc'])
    consumed['cyc'] = batch_vc
    terms['cyc'] = cycle_loss(consumed['cyc'], g_vc(g_oc(consumed['cyc'], noises['cyc'])))
    consumed['sls_vc'] = batch_vc
    terms['sls_vc'] = shared_latent_loss(en_oc, g_oc, en_vc, consumed['sls_vc'], noises['sls'])
    consumed['sls_oc'] = batch_oc
    terms['sls_oc'] = shared_latent_loss(en_vc, g_vc, en_oc, consumed['sls_oc'])
    consumed['iden'] = batch_vc
    terms['iden'] = identity_loss(g_vc, consumed['iden'])

    # Adversarial: directional pairs and the OC discriminator on cycle reconstructions
    real_pair = TranslationPair(batch_oc, g_vc(batch_oc))
    fake_pair = TranslationPair(g_oc(batch_vc, noises['dir']), batch_vc)
    terms['dir'] = dir_loss_generator(model.d_dir, real_pair, fake_pair, gan_mode)
    reconstruction = g_oc(g_vc(batch_oc), noises['gan'])
    terms['gan_oc'] = gan_loss_generator(model.d_oc, reconstruction, gan_mode)

    # Noise diversity on the latent of the VC batch
    latent = en_oc(batch_vc)
    terms['noise'] = noise_loss(model.g_oc.decoder, latent, noises['noise1'], noises['noise2'],
                                weights.alpha, noise_norm)

    if audit is not None:
        for term, tensor in consumed.items():
            audit.record(term, 'input', tensor)
        audit.record('dir', 'real_pair_oc', real_pair.oc)
        audit.record('dir', 'real_pair_vc', real_pair.vc)
        audit.record('dir', 'fake_pair_oc', fake_pair.oc)
        audit.record('dir', 'fake_pair_vc', fake_pair.vc)
        audit.record('gan_oc', 'fake', reconstruction)

    report = total_loss(weights, terms)
    return report.total, report


def discriminator_objective(model, batch_oc, vc_from_oc, fake_pair, cycle_fakes,
                            gan_mode='log', audit: Optional[WiringAudit] = None):
    """
    Discriminator-phase losses on detached, pooled fakes

    Args:
        batch_oc: real OC batch
        vc_from_oc: G_vc(batch_oc), the real-direction partner
        fake_pair: pooled TranslationPair(G_oc(x, z), x)
        cycle_fakes: pooled G_oc(G_vc(y), z) reconstructions

    Returns:
        (directional loss, OC discriminator loss)
    """
    real_pair = TranslationPair(batch_oc, vc_from_oc)
    d_dir_loss = dir_loss_discriminator(model.d_dir, real_pair, fake_pair, gan_mode)
    d_oc_loss = gan_loss_discriminator(model.d_oc, batch_oc, cycle_fakes, gan_mode)

    if audit is not None:
        audit.record('d_dir', 'real_pair_oc', real_pair.oc)
        audit.record('d_dir', 'real_pair_vc', real_pair.vc)
        audit.record('d_dir', 'fake_pair_oc', fake_pair.oc)
        audit.record('d_dir', 'fake_pair_vc', fake_pair.vc)
        audit.record('d_oc', 'real', batch_oc)
        audit.record('d_oc', 'fake', cycle_fakes)

    return d_dir_loss, d_oc_loss
