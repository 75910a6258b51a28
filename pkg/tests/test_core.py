"""Domain type tests: records, label sets, and the species catalog."""

import numpy as np
import pytest

from plotgrid.core import ImageRecord, PlotLabelSet, SpeciesCatalog, build_catalog


def pixels(h=4, w=4, value=0):
    return np.full((h, w, 3), value, dtype=np.uint8)


class TestImageRecord:
    def test_holds_pixels_and_label(self):
        rec = ImageRecord("img_1", pixels(), species=12)
        assert rec.image_id == "img_1"
        assert rec.species == 12

    def test_unlabeled_allowed(self):
        assert ImageRecord("plot_1", pixels(), species=None).species is None

    def test_rejects_bad_shapes_and_dtypes(self):
        with pytest.raises(ValueError):
            ImageRecord("a", np.zeros((4, 4), dtype=np.uint8), None)
        with pytest.raises(ValueError):
            ImageRecord("a", np.zeros((4, 4, 3), dtype=np.float32), None)
        with pytest.raises(ValueError):
            ImageRecord("a", np.zeros((0, 4, 3), dtype=np.uint8), None)
        with pytest.raises(ValueError):
            ImageRecord("", pixels(), None)


class TestPlotLabelSet:
    def test_species_is_a_frozenset(self):
        labels = PlotLabelSet("p1", frozenset({3, 1}))
        assert labels.species == frozenset({1, 3})

    def test_rejects_empty_plot_id(self):
        with pytest.raises(ValueError):
            PlotLabelSet("", frozenset({1}))


class TestSpeciesCatalog:
    def test_indices_follow_ascending_id(self):
        catalog = SpeciesCatalog({30: 5, 10: 2, 20: 9})
        assert catalog.species_ids == (10, 20, 30)
        assert [catalog.encode(s) for s in (10, 20, 30)] == [0, 1, 2]
        assert [catalog.decode(i) for i in range(3)] == [10, 20, 30]

    def test_encode_unknown_species(self):
        catalog = SpeciesCatalog({1: 1})
        with pytest.raises(KeyError, match="not in catalog"):
            catalog.encode(99)

    def test_decode_out_of_range(self):
        catalog = SpeciesCatalog({1: 1})
        with pytest.raises(IndexError):
            catalog.decode(1)

    def test_counts_and_membership(self):
        catalog = SpeciesCatalog({7: 42})
        assert catalog.image_count(7) == 42
        assert 7 in catalog and 8 not in catalog
        assert len(catalog) == 1

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            SpeciesCatalog({1: 0})
        with pytest.raises(ValueError):
            SpeciesCatalog({-5: 3})

    def test_csv_round_trip(self, tmp_path):
        catalog = SpeciesCatalog({1355868: 4208, 1363227: 1300, 14: 100})
        path = tmp_path / "catalog.csv"
        catalog.save_csv(path)
        assert SpeciesCatalog.load_csv(path) == catalog

    def test_csv_text_layout(self):
        text = SpeciesCatalog({20: 3, 10: 7}).to_csv_text()
        assert text == "species_id,image_count\n10,7\n20,3\n"

    def test_csv_rejects_bad_header(self):
        with pytest.raises(ValueError, match="header"):
            SpeciesCatalog.from_csv_text("id,count\n1,2\n")

    def test_csv_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            SpeciesCatalog.from_csv_text("species_id,image_count\n5,1\n5,2\n")

    def test_empty_catalog_round_trips(self):
        catalog = SpeciesCatalog({})
        assert len(catalog) == 0
        assert SpeciesCatalog.from_csv_text(catalog.to_csv_text()) == catalog


class TestBuildCatalog:
    def test_counts_by_species(self):
        records = [
            ImageRecord("a", pixels(), 5),
            ImageRecord("b", pixels(), 5),
            ImageRecord("c", pixels(), 9),
        ]
        catalog = build_catalog(records)
        assert catalog.image_count(5) == 2
        assert catalog.image_count(9) == 1

    def test_rejects_unlabeled(self):
        with pytest.raises(ValueError, match="plot_x"):
            build_catalog([ImageRecord("plot_x", pixels(), None)])

    def test_empty_input_gives_empty_catalog(self):
        assert len(build_catalog([])) == 0
