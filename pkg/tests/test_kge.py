import numpy as np
import pytest
import torch

from helpers import gradient_check, val
from kanrec.errors import ConfigurationError, DataError
from kanrec.kge import (
    EmbeddingTable,
    KgeConfig,
    score_transe,
    score_transh,
    score_transr,
    train_kge,
)


class TestScoreTransE:
    def test_zero_case(self):
        assert val(score_transe([0.0, 0.0], [0.0, 0.0], [0.0, 0.0])) == 0.0

    def test_exact_translation(self):
        assert val(score_transe([1.0, 0.0], [0.0, 1.0], [1.0, 1.0])) == 0.0

    def test_hand_evaluated(self):
        # residual (2, 2) -> -(4 + 4)
        assert val(score_transe([1.0, 2.0], [1.0, 0.0], [0.0, 0.0])) == -8.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            score_transe([1.0, 2.0], [1.0], [0.0, 0.0])

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            h, r, t = rng.normal(size=(3, 6))
            c = rng.normal(size=6)
            base = val(score_transe(h, r, t))
            shifted = val(score_transe(h + c, r, t + c))
            assert abs(base - shifted) < 1e-6

    def test_never_positive(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            h, r, t = rng.normal(size=(3, 5))
            assert val(score_transe(h, r, t)) <= 0.0


class TestScoreTransH:
    def test_identical_entities_zero_translation(self):
        h = [2.0, -1.0, 0.5]
        w = [0.0, 1.0, 0.0]
        assert val(score_transh(h, h, w, [0.0, 0.0, 0.0])) == 0.0

    def test_projection_collapses_difference(self):
        # both project to (0, 3) on the plane orthogonal to e_x
        assert val(score_transh([2.0, 3.0], [5.0, 3.0], [1.0, 0.0], [0.0, 0.0])) == 0.0

    def test_hand_projection_residual(self):
        # h and t both project to the origin, leaving the translation (1, 0)
        assert val(score_transh([0.0, 0.0], [0.0, 5.0], [0.0, 1.0], [1.0, 0.0])) == -1.0

    def test_non_unit_normal_rejected(self):
        with pytest.raises(ValueError):
            score_transh([1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0])

    def test_projection_idempotent(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = torch.tensor(rng.normal(size=4))
            w = torch.tensor(rng.normal(size=4))
            w = w / w.norm()
            once = x - (x @ w) * w
            twice = once - (once @ w) * w
            assert float((once - twice).abs().max()) < 1e-6

    def test_never_positive(self):
        rng = np.random.default_rng(30)
        for _ in range(50):
            h, t, d = rng.normal(size=(3, 5))
            w = rng.normal(size=5)
            w = w / np.linalg.norm(w)
            assert val(score_transh(h, t, w, d)) <= 0.0


class TestScoreTransR:
    def test_identity_projection_reduces_to_transe(self):
        rng = np.random.default_rng(4)
        eye = np.eye(5)
        for _ in range(100):
            h, r, t = rng.normal(size=(3, 5))
            assert val(score_transr(h, t, r, eye)) == pytest.approx(val(score_transe(h, r, t)), abs=1e-6)

    def test_equal_entities_zero_relation(self):
        h = [1.0, 2.0]
        m = [[0.3], [-0.7]]
        assert val(score_transr(h, h, [0.0], m)) == 0.0

    def test_rectangular_projection_hand_case(self):
        # both entities project to the scalar 1, so the residual vanishes
        assert val(score_transr([1.0, 0.0], [0.0, 1.0], [0.0], [[1.0], [1.0]])) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            score_transr([1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [[1.0], [1.0]])

    def test_never_positive(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            h, t = rng.normal(size=(2, 5))
            r = rng.normal(size=3)
            m = rng.normal(size=(5, 3))
            assert val(score_transr(h, t, r, m)) <= 0.0


class TestScoreGradients:
    """Analytic (autograd) gradients of each scorer vs central differences."""

    def test_transe_gradients(self):
        gen = torch.Generator().manual_seed(10)
        h, r, t = (torch.randn(6, generator=gen, requires_grad=True) for _ in range(3))
        assert gradient_check(lambda: score_transe(h, r, t), [h, r, t]) < 1e-4

    def test_transh_gradients(self):
        gen = torch.Generator().manual_seed(11)
        h, t, d = (torch.randn(6, generator=gen, requires_grad=True) for _ in range(3))
        raw = torch.randn(6, generator=gen)
        w = (raw / raw.norm()).requires_grad_(True)

        def f():
            unit = w / w.norm()  # training-path normalisation
            return score_transh(h, t, unit, d)

        assert gradient_check(f, [h, t, d, w]) < 1e-4

    def test_transr_gradients(self):
        gen = torch.Generator().manual_seed(12)
        h = torch.randn(5, generator=gen, requires_grad=True)
        t = torch.randn(5, generator=gen, requires_grad=True)
        r = torch.randn(3, generator=gen, requires_grad=True)
        m = torch.randn(5, 3, generator=gen, requires_grad=True)
        assert gradient_check(lambda: score_transr(h, t, r, m), [h, t, r, m]) < 1e-4


class TestConfig:
    def test_unknown_model_kind(self):
        with pytest.raises(ConfigurationError):
            KgeConfig(model_kind="RESCAL")

    def test_transe_rejects_distinct_relation_dim(self):
        with pytest.raises(ConfigurationError):
            KgeConfig(model_kind="TransE", entity_dim=8, relation_dim=4)

    def test_transr_allows_distinct_relation_dim(self):
        cfg = KgeConfig(model_kind="TransR", entity_dim=8, relation_dim=4)
        assert cfg.relation_dim == 4


class TestTrainKge:
    def test_zero_epochs_returns_seeded_initialization(self, mini_kg):
        cfg = KgeConfig(model_kind="TransE", entity_dim=8, epochs=0, seed=5)
        a = train_kge(mini_kg, cfg)
        b = train_kge(mini_kg, cfg)
        assert torch.equal(a.entity_vectors, b.entity_vectors)
        assert torch.equal(a.relation_vectors, b.relation_vectors)
        assert a.epoch_losses == []

    @pytest.mark.parametrize("kind", ["TransE", "TransH", "TransR"])
    def test_true_triples_outscore_corrupted(self, mini_kg, kind):
        cfg = KgeConfig(model_kind=kind, entity_dim=8, epochs=25, batch_size=4, seed=1)
        table = train_kge(mini_kg, cfg)
        triples = torch.tensor([(t.head, t.relation, t.tail) for t in mini_kg.triples])
        true_scores = table.score_triples(triples[:, 0], triples[:, 1], triples[:, 2])
        rng = np.random.default_rng(9)
        corrupted = triples.clone()
        for i in range(len(corrupted)):
            if rng.uniform() < 0.5:
                corrupted[i, 0] = int(rng.integers(0, mini_kg.entity_count))
            else:
                corrupted[i, 2] = int(rng.integers(0, mini_kg.entity_count))
        fake_scores = table.score_triples(corrupted[:, 0], corrupted[:, 1], corrupted[:, 2])
        assert float(true_scores.mean()) > float(fake_scores.mean())

    def test_final_epoch_loss_not_worse_than_first(self, mini_kg):
        cfg = KgeConfig(model_kind="TransE", entity_dim=8, epochs=25, batch_size=4, seed=1)
        table = train_kge(mini_kg, cfg)
        assert table.epoch_losses[-1] <= table.epoch_losses[0]

    def test_deterministic_bit_identical(self, mini_kg):
        cfg = KgeConfig(model_kind="TransR", entity_dim=6, relation_dim=4, epochs=5, batch_size=4, seed=2)
        a = train_kge(mini_kg, cfg)
        b = train_kge(mini_kg, cfg)
        assert torch.equal(a.entity_vectors, b.entity_vectors)
        assert torch.equal(a.relation_vectors, b.relation_vectors)
        assert torch.equal(a.projections, b.projections)

    def test_transh_normals_stay_unit(self, mini_kg):
        cfg = KgeConfig(model_kind="TransH", entity_dim=8, epochs=10, batch_size=4, seed=3)
        table = train_kge(mini_kg, cfg)
        norms = table.hyperplane_normals.norm(dim=-1)
        assert torch.allclose(norms, torch.ones_like(norms), atol=1e-9)

    def test_transr_entity_norms_clipped(self, mini_kg):
        cfg = KgeConfig(model_kind="TransR", entity_dim=8, epochs=10, batch_size=4, seed=3)
        table = train_kge(mini_kg, cfg)
        assert float(table.entity_vectors.norm(dim=-1).max()) <= 1.0 + 1e-9

    def test_empty_graph_rejected(self, tmp_path):
        with pytest.raises(DataError):
            path = tmp_path / "kg.tsv"
            path.write_text("#\n")
            from kanrec.kg_store import load_triples

            train_kge(load_triples(path), KgeConfig(model_kind="TransE", entity_dim=4))

    def test_all_values_finite(self, mini_kg):
        cfg = KgeConfig(model_kind="TransH", entity_dim=8, epochs=5, batch_size=4, seed=4)
        table = train_kge(mini_kg, cfg)
        assert torch.isfinite(table.entity_vectors).all()
        assert torch.isfinite(table.relation_vectors).all()
        assert torch.isfinite(table.hyperplane_normals).all()


class TestEmbeddingRoundTrip:
    @pytest.mark.parametrize("kind", ["TransE", "TransH", "TransR"])
    def test_save_load_lossless(self, mini_kg, tmp_path, kind):
        cfg = KgeConfig(model_kind=kind, entity_dim=6, epochs=3, batch_size=4, seed=6)
        table = train_kge(mini_kg, cfg)
        path = tmp_path / "emb.pkl"
        table.save(path)
        loaded = EmbeddingTable.load(path)
        assert loaded.model_kind == kind
        assert torch.equal(loaded.entity_vectors, table.entity_vectors)
        assert torch.equal(loaded.relation_vectors, table.relation_vectors)
        if kind == "TransH":
            assert torch.equal(loaded.normals, table.normals)
        if kind == "TransR":
            assert torch.equal(loaded.projections, table.projections)
        assert loaded.epoch_losses == table.epoch_losses

    def test_reject_foreign_file(self, tmp_path):
        path = tmp_path / "junk.pkl"
        import pickle

        path.write_bytes(pickle.dumps({"magic": "something-else"}))
        with pytest.raises(DataError):
            EmbeddingTable.load(path)
