#!/usr/bin/env python3
"""
Gradient checks: analytic gradients of every loss term against central finite differences
on a miniature float64 translator with 8x8 images
"""

import numpy as np
import torch

from script_runner import run_tests
from sls_losses import LossWeights, generator_objective
from sls_networks import SharedLatentModel

STEP = 1e-4
MAX_RELATIVE_ERROR = 1e-3
MIN_GRADIENT = 1e-6
# FD(h) and FD(h/2) must agree this closely, otherwise a kink lies within the step
KINK_TOLERANCE = 1e-4
SAMPLES_PER_TERM = 50
MAX_ATTEMPTS = 400

PARAMETER_GROUPS = ('g_oc.encoder', 'g_oc.decoder', 'g_vc.encoder', 'g_vc.decoder', 'd_dir', 'd_oc')


def miniature_setup(seed=0):
    """Model, inputs, fixed noises and weights for one deterministic objective"""
    torch.manual_seed(seed)
    model = SharedLatentModel(base_channels=4, res_blocks=1, noise_dim=8, disc_layers=1).double()
    stream = torch.Generator().manual_seed(seed + 1)
    batch_oc = torch.rand(1, 3, 8, 8, generator=stream, dtype=torch.float64) * 2 - 1
    batch_vc = torch.rand(1, 3, 8, 8, generator=stream, dtype=torch.float64) * 2 - 1
    noises = {key: torch.randn(1, 8, generator=stream, dtype=torch.float64)
              for key in ('excyc', 'cyc', 'sls', 'dir', 'gan', 'noise1', 'noise2')}
    # Alpha above any reachable distance keeps the noise hinge active
    weights = LossWeights(alpha=10.0)
    return model, batch_oc, batch_vc, noises, weights


def term_value(setup, term):
    model, batch_oc, batch_vc, noises, weights = setup
    _, report = generator_objective(model, batch_oc, batch_vc, noises, weights)
    return getattr(report, term)


def group_of(name):
    for group in PARAMETER_GROUPS:
        if name.startswith(group + '.'):
            return group
    return name.split('.')[0]


def central_difference(setup, term, param, index, step):
    flat = param.data.view(-1)
    original = flat[index].item()
    with torch.no_grad():
        flat[index] = original + step
        plus = term_value(setup, term).item()
        flat[index] = original - step
        minus = term_value(setup, term).item()
        flat[index] = original
    return (plus - minus) / (2 * step)


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def check_term(term, seed=0):
    """Returns (accepted samples, worst relative error, groups covered)"""
    setup = miniature_setup(seed)
    model = setup[0]
    named = [(n, p) for n, p in model.named_parameters()]
    loss = term_value(setup, term)
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)

    # Candidates with a usable analytic gradient, grouped by network part
    candidates = {}
    for (name, param), grad in zip(named, grads):
        if grad is None:
            continue
        flat = grad.reshape(-1)
        for index in torch.nonzero(flat.abs() > MIN_GRADIENT).flatten().tolist():
            candidates.setdefault(group_of(name), []).append((param, index, flat[index].item()))

    rng = np.random.default_rng(seed)
    for group in candidates:
        order = rng.permutation(len(candidates[group]))
        candidates[group] = [candidates[group][i] for i in order]

    # Round robin over groups so every part with gradient is sampled
    queue = []
    longest = max((len(v) for v in candidates.values()), default=0)
    for i in range(longest):
        for group in sorted(candidates):
            if i < len(candidates[group]):
                queue.append((group, candidates[group][i]))

    accepted = 0
    worst = 0.0
    covered = set()
    for group, (param, index, analytic) in queue[:MAX_ATTEMPTS]:
        coarse = central_difference(setup, term, param, index, STEP)
        fine = central_difference(setup, term, param, index, STEP / 2)
        if relative_error(coarse, fine) > KINK_TOLERANCE:
            continue
        worst = max(worst, relative_error(analytic, coarse))
        accepted += 1
        covered.add(group)
        if accepted >= SAMPLES_PER_TERM and covered == set(candidates):
            break
    return accepted, worst, covered, set(candidates)


def assert_term(term):
    accepted, worst, covered, groups = check_term(term)
    assert accepted >= SAMPLES_PER_TERM, f"{term}: only {accepted} usable parameters"
    assert worst < MAX_RELATIVE_ERROR, f"{term}: relative error {worst:.2e}"
    assert covered == groups, f"{term}: groups {sorted(groups - covered)} never sampled"


def test_gradient_cyc():
    assert_term('cyc')


def test_gradient_excyc():
    assert_term('excyc')


def test_gradient_sls_vc():
    assert_term('sls_vc')


def test_gradient_sls_oc():
    assert_term('sls_oc')


def test_gradient_iden():
    assert_term('iden')


def test_gradient_dir():
    assert_term('dir')


def test_gradient_gan_oc():
    assert_term('gan_oc')


def test_gradient_noise():
    assert_term('noise')


def test_gradient_total():
    assert_term('total')


def test_shared_latent_reaches_both_encoders():
    setup = miniature_setup()
    model = setup[0]
    loss = term_value(setup, 'sls_vc')
    loss.backward()
    for part in (model.g_oc.encoder, model.g_vc.encoder, model.g_oc.decoder):
        assert any(p.grad is not None and p.grad.abs().max() > 0 for p in part.parameters())


def test_identity_term_only_touches_vc_generator():
    setup = miniature_setup()
    model = setup[0]
    term_value(setup, 'iden').backward()
    assert all(p.grad is None or p.grad.abs().max() == 0 for p in model.g_oc.parameters())
    assert any(p.grad is not None and p.grad.abs().max() > 0 for p in model.g_vc.parameters())


TESTS = [
    test_gradient_cyc,
    test_gradient_excyc,
    test_gradient_sls_vc,
    test_gradient_sls_oc,
    test_gradient_iden,
    test_gradient_dir,
    test_gradient_gan_oc,
    test_gradient_noise,
    test_gradient_total,
    test_shared_latent_reaches_both_encoders,
    test_identity_term_only_touches_vc_generator,
]


def main():
    """Run all tests"""
    run_tests("Testing loss gradients", TESTS)


if __name__ == "__main__":
    main()
