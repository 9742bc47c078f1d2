"""Distance models: embedding contracts, metric properties, persistence."""

import numpy as np
import pytest

from perceptmetric import models as md
from perceptmetric.errors import ConfigurationError, ModelFileError


class TestEmbed:
    def test_euclidean_is_identity(self):
        model = md.init_model("euclidean", 5)
        x = np.array([1.0, -2.0, 0.5, 3.0, 0.0])
        np.testing.assert_array_equal(model.embed(x), x)

    def test_mahalanobis_identity_map(self):
        model = md.MahalanobisModel(4, embed_dim=4, params={"W": np.eye(4)})
        x = np.array([0.25, -1.0, 2.0, 0.0])
        np.testing.assert_array_equal(model.embed(x), x)

    def test_perceptnet_output_is_128d_finite(self):
        model = md.init_model("perceptnet", 32, seed=0)
        x = np.random.default_rng(0).standard_normal(32)
        e = model.embed(x)
        assert e.shape == (128,)
        assert np.all(np.isfinite(e))

    def test_dimension_mismatch_raises(self):
        model = md.init_model("perceptnet", 32, seed=0)
        with pytest.raises(ConfigurationError, match="32"):
            model.embed(np.zeros(16))

    def test_distinct_inputs_distinct_embeddings(self):
        model = md.init_model("perceptnet", 32, seed=1)
        X = np.random.default_rng(1).standard_normal((6, 32))
        E = model.embed(X)
        assert len({tuple(np.round(row, 9)) for row in E}) == 6


class TestDistance:
    def test_zero_on_identical_inputs(self):
        for kind in ("euclidean", "mahalanobis", "perceptnet"):
            model = md.init_model(kind, 32, seed=0)
            x = np.random.default_rng(2).standard_normal(32)
            assert model.distance(x, x) == 0.0

    def test_three_four_five(self):
        model = md.init_model("euclidean", 2)
        assert model.distance([0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0)

    def test_mahalanobis_quadratic_form_identity(self):
        model = md.init_model("mahalanobis", 8, seed=3)
        M = model.induced_matrix()
        rng = np.random.default_rng(3)
        for _ in range(10):
            x, y = rng.standard_normal(8), rng.standard_normal(8)
            d = x - y
            want = np.sqrt(d @ M @ d)
            assert model.distance(x, y) == pytest.approx(want, abs=1e-10)

    def test_pseudo_metric_properties(self):
        rng = np.random.default_rng(4)
        for kind in ("mahalanobis", "perceptnet"):
            model = md.init_model(kind, 16, seed=4)
            X = rng.standard_normal((3, 16))
            dxy = model.distance(X[0], X[1])
            dyx = model.distance(X[1], X[0])
            dxz = model.distance(X[0], X[2])
            dyz = model.distance(X[1], X[2])
            assert dxy >= 0
            assert dxy == pytest.approx(dyx, abs=1e-12)
            assert dxz <= dxy + dyz + 1e-9  # triangle inequality

    def test_perceptnet_distance_invariant_under_output_rotation(self):
        model = md.init_model("perceptnet", 32, seed=5)
        rng = np.random.default_rng(5)
        Q, _ = np.linalg.qr(rng.standard_normal((128, 128)))
        X = rng.standard_normal((4, 32))
        before = [model.distance(X[i], X[j]) for i in range(4) for j in range(i)]
        model._params["linear.W"].data = model._params["linear.W"].data @ Q
        after = [model.distance(X[i], X[j]) for i in range(4) for j in range(i)]
        np.testing.assert_allclose(before, after, atol=1e-9)


class TestSchedule:
    def test_default_has_six_convs_three_pools(self):
        model = md.init_model("perceptnet", 32, seed=0)
        ops = [l["op"] for l in model.layers]
        assert ops.count("conv") == 6
        assert ops.count("pool") == 3
        assert model.flat_dim == 512

    def test_final_layer_has_no_bias(self):
        model = md.init_model("perceptnet", 32, seed=0)
        assert "linear.bias" not in model.parameters()
        assert model.parameters()["linear.W"].data.shape == (512, 128)

    def test_short_input_reduced_width(self):
        model = md.init_model("perceptnet", 8, seed=0)
        assert model.channels == md.REDUCED_CHANNELS
        assert model.embed(np.zeros(8)).shape == (128,)

    def test_very_short_input_still_builds(self):
        model = md.init_model("perceptnet", 4, seed=0)
        e = model.embed(np.random.default_rng(0).standard_normal(4))
        assert e.shape == (128,)
        assert np.all(np.isfinite(e))

    def test_mahalanobis_induced_matrix_psd(self):
        model = md.init_model("mahalanobis", 8, seed=1)
        eigs = np.linalg.eigvalsh(model.induced_matrix())
        assert eigs.min() >= -1e-12


class TestInit:
    def test_same_seed_identical_parameters(self):
        a = md.init_model("perceptnet", 32, seed=7)
        b = md.init_model("perceptnet", 32, seed=7)
        for k in a.parameters():
            np.testing.assert_array_equal(a.parameters()[k].data,
                                          b.parameters()[k].data)

    def test_different_seed_differs(self):
        a = md.init_model("perceptnet", 32, seed=7)
        b = md.init_model("perceptnet", 32, seed=8)
        assert any(not np.array_equal(a.parameters()[k].data,
                                      b.parameters()[k].data)
                   for k in a.parameters())

    def test_euclidean_parameterless(self):
        assert md.init_model("euclidean", 12).parameters() == {}

    def test_conv_biases_start_zero(self):
        model = md.init_model("perceptnet", 32, seed=0)
        for name, p in model.parameters().items():
            if name.endswith(".bias"):
                assert np.all(p.data == 0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError, match="kind"):
            md.init_model("resnet", 32)


class TestSaveLoad:
    @pytest.mark.parametrize("kind", ["euclidean", "mahalanobis", "perceptnet"])
    def test_roundtrip_preserves_distances(self, kind, tmp_path):
        model = md.init_model(kind, 32, seed=9)
        path = tmp_path / "model.json"
        md.save_model(model, path)
        back = md.load_model(path)
        assert back.kind == kind
        rng = np.random.default_rng(9)
        for _ in range(5):
            x, y = rng.standard_normal(32), rng.standard_normal(32)
            assert model.distance(x, y) == back.distance(x, y)  # bitwise

    def test_roundtrip_parameters_bitwise(self, tmp_path):
        model = md.init_model("perceptnet", 32, seed=10)
        path = tmp_path / "model.json"
        md.save_model(model, path)
        back = md.load_model(path)
        for k, p in model.parameters().items():
            np.testing.assert_array_equal(p.data, back.parameters()[k].data)

    def test_wrong_input_dim_rejected(self, tmp_path):
        import json
        model = md.init_model("mahalanobis", 8, seed=0)
        path = tmp_path / "model.json"
        md.save_model(model, path)
        doc = json.loads(path.read_text())
        doc["input_dim"] = 16  # inconsistent with the stored W
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFileError, match="inconsistent"):
            md.load_model(path)

    def test_corrupted_file_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"format": "perceptmetric-model", "format_version": 1,'
                        ' "kind": "mahalanobis", "input_dim": 4,'
                        ' "params": {"W": {"shape": [4, 8], "dtype": "<f8",'
                        ' "data": "!!!notbase64"}}}')
        with pytest.raises(ModelFileError, match="corrupted"):
            md.load_model(path)

    def test_version_mismatch_rejected(self, tmp_path):
        import json
        model = md.init_model("euclidean", 4)
        path = tmp_path / "model.json"
        md.save_model(model, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFileError, match="version"):
            md.load_model(path)

    def test_non_model_file_rejected(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"something": "else"}')
        with pytest.raises(ModelFileError):
            md.load_model(path)
