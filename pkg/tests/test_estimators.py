import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dotin.estimators import DotinClassifier, DotinGedEncoder, check_graphs
from dotin.exceptions import DimensionError
from dotin.graphs import GraphInstance, SyntheticSpec, make_synthetic

FAST = dict(hidden=8, n_layers=2, epochs=3, patience=0, batch_size=4)


@pytest.fixture(scope="module")
def gset():
    return make_synthetic(SyntheticSpec(graphs_per_class=6, n_min=8, n_max=11), seed=0)


class TestCheckGraphs:
    def test_single_graph(self, gset):
        with pytest.raises(TypeError):
            check_graphs(gset[0])

    def test_empty(self):
        with pytest.raises(ValueError):
            check_graphs([])

    def test_wrong_item(self, gset):
        with pytest.raises(TypeError, match="item 1"):
            check_graphs([gset[0], np.zeros((3, 3))])

    def test_mixed_widths(self, gset):
        other = GraphInstance(np.ones((3, gset.num_features + 1)), np.zeros((3, 3)))
        with pytest.raises(DimensionError):
            check_graphs([gset[0], other])

    def test_expected_width(self, gset):
        with pytest.raises(DimensionError):
            check_graphs(gset, gset.num_features + 2)
        assert len(check_graphs(gset, gset.num_features)) == len(gset)


class TestClassifier:
    def test_params_and_clone(self):
        est = DotinClassifier(alpha=0.5, hidden=16)
        c = clone(est)
        assert c.get_params() == est.get_params() and c is not est
        assert est.set_params(hidden=4).hidden == 4

    def test_not_fitted(self, gset):
        with pytest.raises(NotFittedError):
            DotinClassifier().predict(gset)

    def test_fit_predict(self, gset):
        est = DotinClassifier(alpha=0.5, **FAST).fit(gset)
        proba = est.predict_proba(gset)
        assert proba.shape == (len(gset), 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        assert set(est.predict(gset)) <= set(est.classes_)
        assert 0.0 <= est.score(gset, [g.label for g in gset.graphs]) <= 1.0
        assert est.transform(gset).shape == (len(gset), 8)

    def test_string_labels_round_trip(self, gset):
        y = np.array(["ring" if g.label else "tree" for g in gset.graphs])
        est = DotinClassifier(**FAST).fit(gset, y)
        assert list(est.classes_) == ["ring", "tree"]
        assert set(est.predict(gset)) <= {"ring", "tree"}

    def test_bad_labels(self, gset):
        with pytest.raises(ValueError):
            DotinClassifier(**FAST).fit(gset, [0, 1])

    def test_width_checked_at_predict(self, gset):
        est = DotinClassifier(**FAST).fit(gset)
        other = GraphInstance(np.ones((4, gset.num_features + 1)), np.zeros((4, 4)))
        with pytest.raises(DimensionError):
            est.predict([other])

    def test_deterministic(self, gset):
        a = DotinClassifier(alpha=0.5, **FAST).fit(gset).decision_function(gset)
        b = DotinClassifier(alpha=0.5, **FAST).fit(gset).decision_function(gset)
        assert np.array_equal(a, b)


class TestGedEncoder:
    def test_fit_distance_score(self, gset):
        enc = DotinGedEncoder(**FAST).fit(gset)
        d = enc.distance(gset.graphs[:3], gset.graphs[3:6])
        assert d.shape == (3,) and np.all(d >= 0)
        assert np.all(enc.distance(gset.graphs[:3], gset.graphs[:3]) == 0)
        assert 0.0 <= enc.score(gset) <= 1.0

    def test_length_mismatch(self, gset):
        enc = DotinGedEncoder(**FAST).fit(gset)
        with pytest.raises(ValueError):
            enc.distance(gset.graphs[:2], gset.graphs[:3])
