import numpy as np
import pytest

from leafroi.data import (
    BLOTCH_PALETTE,
    BROWN_PALETTE,
    GenConfig,
    gen_dataset,
    gen_scene,
    palette_distance,
    sample_seed,
)
from leafroi.errors import ConfigurationError, ContractError


@pytest.fixture(scope="module")
def standard():
    return gen_dataset()


def test_normal_class_mask_is_all_background():
    s = gen_scene(123, 0)
    counts = np.bincount(s.mask.ravel(), minlength=3)
    assert counts[1] == 0 and counts[2] == 0


def test_scene_is_deterministic():
    a, b = gen_scene(99, 1), gen_scene(99, 1)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.mask.tobytes() == b.mask.tobytes()


def test_spots_inside_primary_leaf():
    for seed in range(10):
        s = gen_scene(seed, 1)
        assert (s.mask == 2).any()
        assert s.support[s.mask == 2].all()
        assert ((s.mask > 0) == s.support).all()


def test_invalid_class():
    with pytest.raises(ContractError):
        gen_scene(0, 3)


def test_default_counts(standard):
    assert len(standard) == 404
    assert standard.class_counts().tolist() == [118, 120, 166]


def test_minimal_counts():
    ds = gen_dataset(GenConfig(counts=(1, 1, 1)))
    assert ds.labels.tolist() == [0, 1, 2]


def test_class_subset_matches_full_generation(standard):
    part = gen_dataset(GenConfig(), classes=(2,))
    full = standard.subset(np.flatnonzero(standard.labels == 2))
    assert part.images.tobytes() == full.images.tobytes()
    assert part.masks.tobytes() == full.masks.tobytes()


def test_sample_seeds_are_split_by_class_and_index():
    seeds = {sample_seed(5, c, i) for c in range(3) for i in range(50)}
    assert len(seeds) == 150


def test_size_must_divide_by_16():
    with pytest.raises(ConfigurationError):
        GenConfig(size=90)


def test_all_samples_respect_invariants(standard):
    assert standard.images.min() >= 0.0 and standard.images.max() <= 1.0
    assert set(np.unique(standard.masks)) <= {0, 1, 2}
    for i in range(len(standard)):
        m, label = standard.masks[i], standard.labels[i]
        if label == 0:
            assert not m.any()
        else:
            assert (m == 1).any() and (m == 2).any()


def test_blotch_palette_is_the_confusable_one():
    assert palette_distance(BLOTCH_PALETTE) < palette_distance(BROWN_PALETTE)
