import numpy as np
import pytest

from brainnet_moe.data_synth import SynthSpec, generate, split_stratified
from brainnet_moe.losses import LossWeights
from brainnet_moe.model import BrainNetMoE, ModelConfig


def toy_config(learnable=False, **kw):
    base = dict(n_regions=6, n_classes=3, experts_per_group=2, expert_hidden=5, model_dim=8,
                transformer_layers=1, gate_hidden=4, seed=0,
                loss=LossWeights(learnable=learnable))
    base.update(kw)
    return ModelConfig(**base)


def toy_batch(n_regions=6, batch=4, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, n_regions, n_regions))
    return (x + x.transpose(0, 2, 1)) / 2.0


@pytest.fixture
def toy_model():
    return BrainNetMoE(toy_config())


@pytest.fixture(scope="session")
def small_cohort():
    spec = SynthSpec(n_regions=12, n_classes=3, subjects_per_class=8, seed=3)
    return split_stratified(generate(spec), 0.25, seed=3)


# criterion number -> (description, passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        desc, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {desc}: {detail}")
