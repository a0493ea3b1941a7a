"""Negative sampler: determinism, exclusion, uniformity."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ranklab import sampling


def cfg(**kw):
    base = dict(catalog_size=100, sample_count=8, exclude_target=True, seed=7)
    base.update(kw)
    return sampling.SamplerConfig(**base)


class TestDeterminism:
    def test_same_draw_index_same_ids(self):
        c = cfg()
        a = sampling.sample_uniform(c, target=5, draw_index=42)
        b = sampling.sample_uniform(c, target=5, draw_index=42)
        np.testing.assert_array_equal(a, b)

    def test_draw_index_changes_stream(self):
        c = cfg(sample_count=64)
        a = sampling.sample_uniform(c, target=5, draw_index=1)
        b = sampling.sample_uniform(c, target=5, draw_index=2)
        assert not np.array_equal(a, b)

    def test_seed_changes_stream(self):
        a = sampling.sample_uniform(cfg(seed=1, sample_count=64), target=5, draw_index=0)
        b = sampling.sample_uniform(cfg(seed=2, sample_count=64), target=5, draw_index=0)
        assert not np.array_equal(a, b)

    def test_block_matches_per_index_draws(self):
        c = cfg(sample_count=5)
        block = sampling.sample_block(c, target=3, first_index=20, count=4)
        assert block.shape == (4, 5)
        for i in range(4):
            row = sampling.sample_uniform(c, target=3, draw_index=20 + i)
            np.testing.assert_array_equal(block[i], row)


class TestExclusion:
    @given(
        n=st.integers(min_value=2, max_value=50),
        k=st.integers(min_value=1, max_value=32),
        seed=st.integers(min_value=0, max_value=2 ** 63),
        draw=st.integers(min_value=0, max_value=10 ** 6),
        frac=st.floats(min_value=0.0, max_value=1.0, exclude_max=True),
    )
    @settings(max_examples=200, deadline=None)
    def test_never_hits_target_and_stays_in_range(self, n, k, seed, draw, frac):
        target = int(frac * n)
        c = sampling.SamplerConfig(catalog_size=n, sample_count=k,
                                   exclude_target=True, seed=seed)
        ids = sampling.sample_uniform(c, target=target, draw_index=draw)
        assert ids.shape == (k,)
        assert np.all(ids >= 0) and np.all(ids < n)
        assert not np.any(ids == target)

    def test_inclusive_mode_can_hit_target(self):
        c = cfg(exclude_target=False, catalog_size=3, sample_count=200)
        ids = sampling.sample_uniform(c, target=1, draw_index=0)
        assert np.any(ids == 1)

    def test_exclusion_covers_all_other_items(self):
        c = cfg(catalog_size=5, sample_count=400)
        ids = sampling.sample_uniform(c, target=2, draw_index=3)
        assert set(np.unique(ids)) == {0, 1, 3, 4}


class TestUniformity:
    def test_chi_square_inclusive(self):
        # 100k draws over 100 cells; critical value for df=99 at p=0.001
        # is 148.23 (standard chi-square table)
        c = sampling.SamplerConfig(catalog_size=100, sample_count=100_000,
                                   exclude_target=False, seed=12)
        ids = sampling.sample_uniform(c, target=0, draw_index=0)
        counts = np.bincount(ids, minlength=100)
        expected = 1000.0
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 148.23, f"chi2={chi2:.1f}"

    def test_chi_square_exclusive(self):
        # same test over the 99 allowed cells when one item is excluded;
        # critical value for df=98 at p=0.001 is 147.01
        n, k = 100, 99_000
        c = sampling.SamplerConfig(catalog_size=n, sample_count=k,
                                   exclude_target=True, seed=13)
        ids = sampling.sample_uniform(c, target=37, draw_index=0)
        counts = np.bincount(ids, minlength=n)
        assert counts[37] == 0
        counts = np.delete(counts, 37)
        expected = k / (n - 1)
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 147.01, f"chi2={chi2:.1f}"


class TestValidation:
    def test_bad_catalog(self):
        with pytest.raises(ValueError):
            sampling.SamplerConfig(catalog_size=0, sample_count=1,
                                   exclude_target=False, seed=0)

    def test_exclusion_needs_two_items(self):
        with pytest.raises(ValueError):
            sampling.SamplerConfig(catalog_size=1, sample_count=1,
                                   exclude_target=True, seed=0)

    def test_bad_sample_count(self):
        with pytest.raises(ValueError):
            sampling.SamplerConfig(catalog_size=10, sample_count=0,
                                   exclude_target=False, seed=0)

    def test_target_out_of_range(self):
        c = cfg(catalog_size=10)
        with pytest.raises(ValueError):
            sampling.sample_uniform(c, target=10, draw_index=0)

    def test_negative_draw_index(self):
        with pytest.raises(ValueError):
            sampling.sample_uniform(cfg(), target=0, draw_index=-1)
