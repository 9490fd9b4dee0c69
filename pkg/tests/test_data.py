import numpy as np
import pytest

from choicenet import data as D
from choicenet import model as M


def write_single_csv(path, rows):
    lines = ["obs_id,kind,assortment,candidates,choice,basket"]
    lines += rows
    path.write_text("\n".join(lines) + "\n")


class TestLoadCsv:
    def test_two_row_single_file(self, tmp_path):
        p = tmp_path / "d.csv"
        write_single_csv(p, ["0,single,A;B,,A,", "1,single,A;B,,B,"])
        ds = D.load_csv(p)
        assert ds.kind == D.SINGLE
        assert len(ds) == 2
        assert ds.catalog.item_count == 2
        np.testing.assert_array_equal(ds.catalog.features, np.eye(2))

    def test_choice_outside_assortment_names_row(self, tmp_path):
        p = tmp_path / "d.csv"
        write_single_csv(p, ["0,single,A;B,,A,", "1,single,A,,B,"])
        with pytest.raises(D.DataError, match="line 3"):
            D.load_csv(p)

    def test_malformed_feature_names_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text(
            "obs_id,kind,assortment,candidates,choice,basket,f_0\n"
            "0,single,A;B,,A,,1.5\n"
            "1,single,A;B,,B,,oops\n"
        )
        with pytest.raises(D.DataError, match="line 3"):
            D.load_csv(p)

    def test_sequential_roundtrip(self, tmp_path):
        ds = D.generate_boosted_synthetic(25, seed=3)
        p = tmp_path / "seq.csv"
        D.save_csv(ds, p)
        back = D.load_csv(p)
        assert back.kind == D.SEQUENTIAL
        assert len(back) == 25
        # same sets/choices under name mapping
        for a, b in zip(ds.observations, back.observations):
            names_a = {ds.catalog.names[i] for i in a.assortment}
            names_b = {back.catalog.names[i] for i in b.assortment}
            assert names_a == names_b
            assert ds.catalog.names[a.choice] == back.catalog.names[b.choice]


class TestTransactions:
    def test_basket_lines(self, tmp_path):
        p = tmp_path / "trans.txt"
        p.write_text("1, 3, 5, 7\n2, 1, 2\n3, 7\n")
        ds = D.load_basket_transactions(p)
        assert ds.kind == D.MULTI
        assert len(ds) == 3
        sizes = [len(o.basket) for o in ds.observations]
        assert sizes == [3, 2, 1]


class TestSplit:
    def test_sizes_10(self):
        ds = D.generate_boosted_synthetic(10, seed=0)
        tr, va, te = D.split(ds, seed=1)
        assert (len(tr), len(va), len(te)) == (6, 2, 2)

    def test_deterministic(self):
        ds = D.generate_boosted_synthetic(50, seed=0)
        a = D.split(ds, seed=7)
        b = D.split(ds, seed=7)
        for x, y in zip(a, b):
            assert x.observations == y.observations

    def test_sizes_20000(self):
        ds = D.generate_boosted_synthetic(20_000, seed=0)
        tr, va, te = D.split(ds, seed=1)
        assert (len(tr), len(va), len(te)) == (12_000, 4_000, 4_000)

    def test_disjoint_cover(self):
        ds = D.generate_boosted_synthetic(40, seed=2)
        tr, va, te = D.split(ds, seed=3)
        assert len(tr) + len(va) + len(te) == 40


class TestSingleToSequential:
    def test_definition(self):
        cat = D.ItemCatalog.one_hot(["a", "b", "c"])
        obs = D.ChoiceObservation(D.SINGLE, frozenset({0, 1, 2}), choice=1)
        ds = D.ChoiceDataset(cat, [obs], D.SINGLE)
        seq = D.single_to_sequential(ds)
        assert seq.observations[0].candidates == frozenset({0, 1, 2})
        assert seq.observations[0].choice == 1

    def test_wrong_kind(self):
        ds = D.generate_boosted_synthetic(3, seed=0)
        with pytest.raises(D.DataError):
            D.single_to_sequential(ds)

    def test_count_preserved(self):
        cat = D.ItemCatalog.one_hot(["a", "b"])
        obs = [
            D.ChoiceObservation(D.SINGLE, frozenset({0, 1}), choice=i % 2) for i in range(500)
        ]
        ds = D.ChoiceDataset(cat, obs, D.SINGLE)
        assert len(D.single_to_sequential(ds)) == 500


class TestMultiToSequential:
    def make_ds(self, baskets, assortment, n=4):
        cat = D.ItemCatalog.one_hot([f"i{k}" for k in range(n)])
        obs = [
            D.ChoiceObservation(D.MULTI, frozenset(assortment), basket=frozenset(b))
            for b in baskets
        ]
        return D.ChoiceDataset(cat, obs, D.MULTI)

    def test_singleton_basket(self):
        ds = self.make_ds([{0}], {0, 3})
        seq = D.multi_to_sequential(ds, np.random.default_rng(0))
        assert len(seq) == 1
        assert seq.observations[0].candidates == frozenset({0, 3})
        assert seq.observations[0].choice == 0

    def test_both_orders_enumerated(self):
        ds = self.make_ds([{0, 1}], {0, 1, 3})
        seen = set()
        for seed in range(200):
            seq = D.multi_to_sequential(ds, np.random.default_rng(seed))
            order = tuple(o.choice for o in seq.observations)
            cands = tuple(tuple(sorted(o.candidates)) for o in seq.observations)
            seen.add((order, cands))
        assert seen == {
            ((0, 1), ((0, 1, 3), (1, 3))),
            ((1, 0), ((0, 1, 3), (0, 3))),
        }

    def test_first_item_uniform_chi_square(self):
        basket = {0, 1, 2, 3}
        ds = self.make_ds([basket], basket)
        counts = {i: 0 for i in basket}
        n_draws = 10_000
        rng = np.random.default_rng(42)
        for _ in range(n_draws):
            seq = D.multi_to_sequential(ds, rng)
            counts[seq.observations[0].choice] += 1
        expected = n_draws / 4
        chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
        assert chi2 < 11.34  # chi-square 1% critical value, 3 dof

    def test_expansion_count(self):
        ds = self.make_ds([{0, 1, 2}, {1, 3}], {0, 1, 2, 3})
        seq = D.multi_to_sequential(ds, np.random.default_rng(1))
        assert len(seq) == 5

    def test_append_stop(self):
        ds = self.make_ds([{0, 1}], {0, 1, 2})
        ds = D.ChoiceDataset(ds.catalog.with_stop_item(), ds.observations, ds.kind)
        seq = D.multi_to_sequential(ds, np.random.default_rng(0), append_stop=True)
        assert len(seq) == 3
        stop = ds.catalog.stop_index
        assert seq.observations[-1].choice == stop
        for o in seq.observations:
            assert stop in o.assortment

    def test_wrong_kind(self):
        ds = D.generate_boosted_synthetic(3, seed=0)
        with pytest.raises(D.DataError):
            D.multi_to_sequential(ds, np.random.default_rng(0))


class TestBoostedSynthetic:
    def test_no_boost_uniform(self):
        C = frozenset({D._A, D._B, D._L})
        S = frozenset({D._A, D._B, D._L})
        items, probs = D._boost_choice_probs(C, S, D.CANDIDATE_BOOST, 100.0)
        np.testing.assert_allclose(probs, np.full(3, 1 / 3))

    def test_boost_dominates(self):
        C = frozenset({D._A, D._AP, D._B, D._L})
        S = C
        items, probs = D._boost_choice_probs(C, S, D.CANDIDATE_BOOST, 100.0)
        assert probs[items.index(D._A)] > 0.999999

    def test_monte_carlo_conditional(self):
        ds = D.generate_boosted_synthetic(24_000, boost_kind=D.CANDIDATE_BOOST, seed=5)
        hits = total = 0
        for o in ds.observations:
            if D._AP in o.candidates and D._A in o.candidates:
                total += 1
                hits += o.choice == D._A
        assert total > 1000
        assert hits / total > 0.99

    def test_entropy_closed_form_matches_monte_carlo(self):
        ds = D.generate_boosted_synthetic(40_000, boost_kind=D.CANDIDATE_BOOST, seed=6)
        # empirical CE of the true model equals conditional entropy in expectation
        total = 0.0
        for o in ds.observations:
            items, probs = D._boost_choice_probs(
                o.candidates, o.assortment, D.CANDIDATE_BOOST, 100.0
            )
            total += -np.log(probs[items.index(o.choice)])
        ent = D.boosted_conditional_entropy(D.CANDIDATE_BOOST)
        assert abs(total / len(ds) - ent) < 0.02

    def test_multi_variant_nonempty(self):
        ds = D.generate_boosted_multi(200, seed=0)
        assert all(o.basket for o in ds.observations)
        assert ds.kind == D.MULTI


class TestBatching:
    def test_batch_sizes(self):
        ds = D.generate_boosted_synthetic(5, seed=1)
        sizes = [b.size for b in D.make_batches(ds, 2, np.random.default_rng(0))]
        assert sizes == [2, 2, 1]

    def test_padding_and_masks(self):
        cat = D.ItemCatalog.one_hot([f"i{k}" for k in range(6)])
        obs = [
            D.ChoiceObservation(
                D.SEQUENTIAL, frozenset(range(3)), candidates=frozenset(range(3)), choice=0
            ),
            D.ChoiceObservation(
                D.SEQUENTIAL, frozenset(range(5)), candidates=frozenset(range(5)), choice=4
            ),
        ]
        batch = D.pad_batch(cat, obs)
        assert batch.cand_features.shape == (2, 5, 6)
        assert batch.cand_mask.sum(axis=1).tolist() == [3, 5]
        # padded rows carry zero features
        assert (batch.cand_features[0, 3:] == 0).all()

    def test_batched_vs_unbatched_forward(self):
        ds = D.generate_boosted_synthetic(30, seed=2)
        cfg = M.TCNetConfig(input_dim=4, hidden_dim=8, n_heads=2, dropout_rate=0.0, seed=1)
        params = M.init_params(cfg)
        big = D.pad_batch(ds.catalog, ds.observations)
        probs_big = M.forward(big, params, cfg).probs
        for k, obs in enumerate(ds.observations):
            single = D.pad_batch(ds.catalog, [obs])
            probs_one = M.forward(single, params, cfg).probs[0]
            nc = len(obs.candidates)
            assert np.abs(probs_big[k, :nc] - probs_one[:nc]).max() < 1e-10

    def test_padding_inertness(self):
        ds = D.generate_boosted_synthetic(16, seed=4)
        cfg = M.TCNetConfig(input_dim=4, hidden_dim=8, n_heads=2, dropout_rate=0.0, seed=2)
        params = M.init_params(cfg)
        batch = D.pad_batch(ds.catalog, ds.observations)
        base = M.forward(batch, params, cfg).probs.copy()
        rng = np.random.default_rng(0)
        batch.cand_features[~batch.cand_mask] = rng.normal(size=batch.cand_features[~batch.cand_mask].shape)
        batch.assort_features[~batch.assort_mask] = rng.normal(
            size=batch.assort_features[~batch.assort_mask].shape
        )
        perturbed = M.forward(batch, params, cfg).probs
        real = batch.cand_mask
        assert np.abs(base[real] - perturbed[real]).max() == 0.0

    def test_context_features_concatenated(self):
        cat = D.ItemCatalog.one_hot(["a", "b"])
        obs = D.ChoiceObservation(
            D.SEQUENTIAL,
            frozenset({0, 1}),
            candidates=frozenset({0, 1}),
            choice=0,
            context=(0.5, -1.0),
        )
        batch = D.pad_batch(cat, [obs])
        assert batch.cand_features.shape == (1, 2, 4)
        np.testing.assert_array_equal(batch.cand_features[0, 0, 2:], [0.5, -1.0])
