"""Synthetic benchmark generator tests: determinism, construction guarantees,
and enough visual separation between species textures to train against."""

import numpy as np
import pytest

from plotgrid.collage import (
    assign_cells,
    make_benchmark,
    render_plot_image,
    species_palette,
    texture,
)


class TestTexture:
    def test_deterministic_for_fixed_stream(self):
        a = texture(100, 32, np.random.default_rng(5))
        b = texture(100, 32, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_same_species_varies_across_draws(self):
        rng = np.random.default_rng(5)
        a = texture(100, 32, rng)
        b = texture(100, 32, rng)
        assert np.abs(a.astype(int) - b.astype(int)).max() > 10

    def test_species_separate_in_feature_space(self):
        """Class centroids sit farther apart than any within-class scatter.

        Mean pixel color alone is a poor separator here (two-tone palettes
        average toward gray), so the check runs on extractor features, which
        is what the classifier actually sees.
        """
        from plotgrid.features import ToyEmbedder

        rng = np.random.default_rng(0)
        emb = ToyEmbedder(0)
        feats = {
            100 + 3 * i: np.stack(
                [emb.feature(texture(100 + 3 * i, 128, rng), "cls768") for _ in range(3)]
            )
            for i in range(10)
        }
        centroids = {sid: f.mean(axis=0) for sid, f in feats.items()}
        max_scatter = max(
            np.linalg.norm(f - centroids[sid], axis=1).max() for sid, f in feats.items()
        )
        ids = list(centroids)
        min_gap = min(
            np.linalg.norm(centroids[a] - centroids[b])
            for i, a in enumerate(ids)
            for b in ids[i + 1 :]
        )
        assert min_gap > 2.0 * max_scatter

    def test_palette_depends_only_on_id(self):
        b1, d1 = species_palette(103)
        b2, d2 = species_palette(103)
        np.testing.assert_array_equal(b1, b2)
        np.testing.assert_array_equal(d1, d2)
        assert not np.allclose(species_palette(106)[0], b1)


class TestAssignCells:
    def test_every_species_present(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            cells = assign_cells([1, 2, 3, 4], 3, rng)
            assert len(cells) == 9
            assert set(cells) == {1, 2, 3, 4}

    def test_single_species_fills_grid(self):
        cells = assign_cells([9], 2, np.random.default_rng(0))
        assert cells == [9, 9, 9, 9]

    def test_too_many_species_rejected(self):
        with pytest.raises(ValueError, match="not fit"):
            assign_cells(list(range(10)), 3, np.random.default_rng(0))

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            assign_cells([1, 1], 2, np.random.default_rng(0))


class TestRenderPlot:
    def test_dimensions(self):
        img = render_plot_image([1] * 9, 3, np.random.default_rng(0), cell_side=32)
        assert img.shape == (96, 96, 3)

    def test_cell_count_must_match(self):
        with pytest.raises(ValueError, match="cell assignments"):
            render_plot_image([1, 2, 3], 2, np.random.default_rng(0))


def bench_kwargs(**overrides):
    base = dict(
        num_species=3,
        images_per_species=4,
        num_plots=5,
        species_per_plot=2,
        grid_n=2,
        seed=1,
        cell_side=32,
    )
    base.update(overrides)
    return base


class TestMakeBenchmark:
    def test_shapes_and_counts(self):
        bench = make_benchmark(**bench_kwargs())
        assert len(bench.training) == 12
        assert len(bench.plots) == 5
        assert len(bench.truth) == 5
        assert bench.training[0].pixels.shape == (32, 32, 3)
        assert bench.plots[0].pixels.shape == (64, 64, 3)
        assert len(bench.catalog) == 3

    def test_same_seed_is_identical(self):
        a = make_benchmark(**bench_kwargs(seed=7))
        b = make_benchmark(**bench_kwargs(seed=7))
        for ra, rb in zip(a.training + a.plots, b.training + b.plots):
            assert ra.image_id == rb.image_id
            np.testing.assert_array_equal(ra.pixels, rb.pixels)
        assert a.truth == b.truth

    def test_different_seed_differs(self):
        a = make_benchmark(**bench_kwargs(seed=7))
        b = make_benchmark(**bench_kwargs(seed=8))
        assert any(
            np.abs(ra.pixels.astype(int) - rb.pixels.astype(int)).max() > 0
            for ra, rb in zip(a.training, b.training)
        )

    def test_truth_within_generated_species(self):
        bench = make_benchmark(**bench_kwargs(num_species=5, species_per_plot=3, grid_n=3))
        universe = set(bench.catalog.species_ids)
        for species in bench.truth.values():
            assert species <= universe
            assert len(species) == 3

    def test_single_species_plots(self):
        bench = make_benchmark(**bench_kwargs(species_per_plot=1))
        assert all(len(s) == 1 for s in bench.truth.values())

    def test_plots_are_unlabeled(self):
        bench = make_benchmark(**bench_kwargs())
        assert all(p.species is None for p in bench.plots)

    def test_validation(self):
        with pytest.raises(ValueError):
            make_benchmark(**bench_kwargs(num_species=0))
        with pytest.raises(ValueError):
            make_benchmark(**bench_kwargs(num_species=3, species_per_plot=4))
        with pytest.raises(ValueError):
            make_benchmark(**bench_kwargs(num_species=9, species_per_plot=5, grid_n=2))
