import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

import quadrature
from evidence_da.evidence import HyperParams, Variant
from evidence_da.predictor import (
    ModelFormatError,
    class_log_scores,
    classify,
    classify_many,
    fit,
    load_model,
    model_from_dict,
    model_from_stats,
    model_to_dict,
    predict,
    predict_many,
    save_model,
    softmax,
    with_hyperparameters,
)
from evidence_da.stats import LabeledDataset, compute_class_stats


def _data(seed=0, n=(8, 10, 6), d=4, names=None):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(size=(k, d)) + 1.5 * z for z, k in enumerate(n)])
    y = np.concatenate([np.full(k, z + 1) for z, k in enumerate(n)])
    return LabeledDataset(X, y, len(n), names)


def _fixed_hyper(stats, variant, k, r, g0):
    n = np.array([stats[z].n for z in sorted(stats)], dtype=float)
    return HyperParams(Variant.parse(variant), n / n.sum(), np.asarray(k, float), np.asarray(r, float),
                       np.asarray(g0, float))


def _student_t_log_density(x, mean, scale_matrix, dof):
    # textbook multivariate t density
    d = x.size
    diff = x - mean
    _, logdet = np.linalg.slogdet(scale_matrix)
    q = diff @ np.linalg.solve(scale_matrix, diff)
    return (gammaln((dof + d) / 2) - gammaln(dof / 2) - 0.5 * d * math.log(dof * math.pi) - 0.5 * logdet
            - 0.5 * (dof + d) * math.log1p(q / dof))


class TestAgainstQuadrature:
    @pytest.mark.parametrize("variant,exact", [("B", False), ("A", True)])
    @pytest.mark.parametrize("seed", [0, 1])
    def test_two_classes_one_dimension(self, variant, exact, seed):
        rng = np.random.default_rng(seed)
        X = np.concatenate([rng.normal(0.0, 1.0, 3), rng.normal(1.2, 0.7, 3)])[:, None]
        data = LabeledDataset(X, np.array([1, 1, 1, 2, 2, 2]), 2)
        stats = compute_class_stats(data)
        k, r = rng.uniform(0.2, 3.0, 2), rng.uniform(1.0, 6.0, 2)
        g0 = [stats[z].d / float(stats[z].mean @ stats[z].mean) for z in (1, 2)] if variant == "B" else [0, 0]
        model = model_from_stats(stats, variant, _fixed_hyper(stats, variant, k, r, g0), exact_model_a=exact)
        classes = [(X[data.y == z, 0], model.hyper.p[z - 1], k[z - 1], r[z - 1], g0[z - 1]) for z in (1, 2)]
        for x0 in rng.normal(0.6, 1.5, size=4):
            expected = quadrature.predictive_probabilities(classes, float(x0), variant)
            assert np.allclose(predict(model, np.array([x0])).probabilities, expected, atol=1e-7)


class TestStudentT:
    def test_exact_model_a_is_a_student_t(self):
        # flat mean prior and Wishart(kI, r): the class predictive is multivariate t
        data = _data(3, n=(9, 7), d=3)
        stats = compute_class_stats(data)
        k, r = np.array([0.4, 2.0]), np.array([5.0, 8.5])
        model = model_from_stats(stats, "A", _fixed_hyper(stats, "A", k, r, [0, 0]), exact_model_a=True)
        x0 = np.array([0.3, -0.2, 1.0])
        scores = model.log_scores(x0)
        for z in (1, 2):
            s = stats[z]
            n, d = s.n, s.d
            dof = r[z - 1] + n + 1 - d
            scatter = n * s.cov + np.eye(d) / k[z - 1]
            scale = scatter * (n + 1) / (n * dof)
            expected = math.log(model.hyper.p[z - 1]) + _student_t_log_density(x0, s.mean, scale, dof)
            # the score drops the (2 pi)-type constants shared by every class
            offset = scores[z - 1] - expected
            assert offset == pytest.approx(0.5 * d * math.log(math.pi), rel=1e-10)


class TestConsistency:
    def test_model_a_default_equals_b_without_mean_prior(self):
        data = _data(1)
        stats = compute_class_stats(data)
        a = fit(data, "A")
        h = replace(a.hyper, variant=Variant.B, gamma0=np.zeros(3))
        b = model_from_stats(stats, "B", h)
        X = np.random.default_rng(2).normal(size=(50, 4))
        assert np.allclose(a.log_scores(X), b.log_scores(X), rtol=0, atol=1e-12)

    def test_class_log_scores_matches_model(self):
        data = _data(2)
        model = fit(data, "B")
        X = np.random.default_rng(0).normal(size=(7, 4))
        for z, s in enumerate(model.stats):
            h = model.hyper
            direct = class_log_scores(s, h.p[z], h.k[z], h.r[z], h.gamma0[z], X, "B")
            assert np.allclose(direct, model.log_scores(X)[:, z], atol=1e-13)

    def test_batch_equals_single(self):
        model = fit(_data(4), "B")
        X = np.random.default_rng(1).normal(size=(5, 4))
        probs, scores = predict_many(model, X)
        for i, x in enumerate(X):
            single = predict(model, x)
            assert np.allclose(single.probabilities, probs[i], atol=1e-15)
            assert classify(model, x) == classify_many(model, X)[i]


class TestSimplex:
    @given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
    @settings(max_examples=30, deadline=None)
    def test_probabilities_sum_to_one(self, seed, spread):
        model = fit(_data(5), "A")
        X = np.random.default_rng(seed).normal(scale=spread, size=(20, 4))
        probs, _ = predict_many(model, X)
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_extreme(self):
        p = softmax(np.array([-1e6, 0.0, -2e6]))
        assert p.tolist() == [0.0, 1.0, 0.0]

    def test_far_query_stays_finite(self):
        model = fit(_data(6), "B")
        out = predict(model, np.full(4, 1e8))
        assert np.all(np.isfinite(out.log_scores))
        assert out.probabilities.sum() == pytest.approx(1.0, abs=1e-12)


class TestValidation:
    def test_dimension_mismatch(self):
        model = fit(_data(), "B")
        with pytest.raises(ValueError):
            predict(model, np.zeros(3))
        with pytest.raises(ValueError):
            predict(model, np.zeros((2, 4)))

    def test_models_are_immutable(self):
        model = fit(_data(), "B")
        with pytest.raises(ValueError):
            model.log_w[0] = 0.0

    def test_with_hyperparameters(self):
        model = fit(_data(), "B")
        h = replace(model.hyper, k=model.hyper.k * 2)
        other = with_hyperparameters(model, h)
        assert np.allclose(other.hyper.k, 2 * model.hyper.k)
        assert not np.allclose(other.log_w, model.log_w)

    def test_better_than_chance_on_separated_classes(self):
        train, test = _data(7, n=(30, 30, 30)), _data(8, n=(30, 30, 30))
        for variant in "AB":
            acc = np.mean(classify_many(fit(train, variant), test.X) == test.y)
            assert acc > 0.8


class TestSerialization:
    @pytest.mark.parametrize("variant,exact", [("A", False), ("A", True), ("B", False)])
    def test_round_trip(self, tmp_path, variant, exact):
        data = _data(9, names=("cat", "dog", "eel"))
        model = fit(data, variant, exact_model_a=exact)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        X = np.random.default_rng(0).normal(size=(10, 4))
        assert np.allclose(loaded.log_scores(X), model.log_scores(X), rtol=1e-12, atol=1e-12)
        assert loaded.label_names == ("cat", "dog", "eel")
        assert loaded.exact_model_a == exact
        assert loaded.label_name(2) == "dog"

    def test_unnamed_labels(self):
        model = fit(_data(), "B")
        assert model.label_name(3) == "3"
        assert model_from_dict(model_to_dict(model)).label_names is None

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda p: p.update(format="other"),
            lambda p: p.update(version=99),
            lambda p: p.pop("classes"),
            lambda p: p.update(n_classes=7),
            lambda p: p["classes"][0].update(mean=[1.0]),
            lambda p: p["classes"][1].pop("k"),
            lambda p: p.update(label_names=["x"]),
        ],
    )
    def test_malformed(self, mutate):
        payload = model_to_dict(fit(_data(), "B"))
        mutate(payload)
        with pytest.raises(ModelFormatError):
            model_from_dict(payload)

    def test_not_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_not_an_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text(json.dumps([1, 2]))
        with pytest.raises(ModelFormatError):
            load_model(path)
