import numpy as np
import pytest

from mbnf.corpus import LanguageSpec, SynthConfig, make_phoneset, synth_corpus

REFERENCE_SEED = 7


def reference_synth_config(seed=REFERENCE_SEED, num_utterances=30):
    """Separable feature-domain corpus: +/-5 state means, unit variance."""
    return SynthConfig(
        languages=[
            LanguageSpec(make_phoneset("l1", 0, 3, 3), num_utterances, 4, 8),
            LanguageSpec(make_phoneset("l2", 1, 3, 3), num_utterances, 4, 8),
        ],
        emission_dim=8,
        mean_scale=5.0,
        noise_level=1.0,
        min_frames_per_state=2,
        max_frames_per_state=8,
        seed=seed,
    )


@pytest.fixture(scope="session")
def reference_corpus():
    cfg = reference_synth_config()
    records, emissions, gold = synth_corpus(cfg)
    return cfg, records, emissions, gold


@pytest.fixture
def rng():
    return np.random.default_rng(0)
