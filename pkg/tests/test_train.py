import numpy as np
import pytest

from saros.blocks import pack_sequences, segment_dataset
from saros.core import DataError, ModelParams, TrainConfig, init_params
from saros.ingest import TRAIN
from saros.loss import block_loss_and_grad, dataset_loss, triplet_loss
from saros.train import (
    MomentumState,
    NumericError,
    TrainTrace,
    train,
    train_bpr,
    train_bpr_batch,
    train_saros_b,
    train_saros_m,
)
from tests.conftest import dataset_from_feedback


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    return np.array_equal(a.user_embeddings, b.user_embeddings) and np.array_equal(
        a.item_embeddings, b.item_embeddings
    )


class TestSarosBGating:
    def test_rollback_below_b_leaves_params_untouched(self):
        # one block formed, b=2: the whole user is rolled back
        ds = dataset_from_feedback([[-1, 1]], train_fraction=0.999)
        cfg = TrainConfig(k=4, epochs=3, eta=0.5, b=2, B=10, seed=0)
        init = init_params(ds.n_users, ds.n_items, cfg)
        final, trace = train_saros_b(ds, cfg)
        assert params_equal(final, init)
        assert trace.total_updates == 0

    def test_block_count_equal_to_b_also_rolls_back(self):
        # literal t <= b comparison: exactly b blocks is still rolled back
        ds = dataset_from_feedback([[-1, 1, -1, 1]], train_fraction=0.999)
        cfg = TrainConfig(k=3, epochs=1, eta=0.5, b=2, B=10, seed=0)
        final, trace = train_saros_b(ds, cfg)
        assert params_equal(final, init_params(ds.n_users, ds.n_items, cfg))
        assert trace.total_updates == 0

    def test_upper_cap_processes_b_plus_one_blocks(self):
        # 10 blocks, B=3: the literal loop admits updates at t = 0..B
        ds = dataset_from_feedback([[-1, 1] * 10], train_fraction=0.999)
        cfg = TrainConfig(k=3, epochs=1, eta=0.1, b=0, B=3, seed=1)
        _, trace = train_saros_b(ds, cfg)
        assert trace.total_updates == 4

    def test_blocks_beyond_cap_untouched(self):
        ds = dataset_from_feedback([[-1, 1] * 10], train_fraction=0.999)
        cfg = TrainConfig(k=3, epochs=1, eta=0.1, b=0, B=3, seed=1)
        init = init_params(ds.n_users, ds.n_items, cfg)
        final, _ = train_saros_b(ds, cfg)
        # items of blocks 0..3 are rows 0..7; later items never updated
        assert np.array_equal(final.item_embeddings[8:], init.item_embeddings[8:])
        assert not np.array_equal(final.item_embeddings[:8], init.item_embeddings[:8])

    def test_bot_user_capped_normal_user_not(self):
        ds = dataset_from_feedback([[-1, 1] * 2, [-1, 1] * 40], train_fraction=0.999)
        cfg = TrainConfig(k=3, epochs=1, eta=0.1, b=0, B=3, seed=1)
        _, trace = train_saros_b(ds, cfg)
        assert trace.total_updates == 2 + 4

    def test_update_locality(self):
        # three users over disjoint items: training only changes rows of
        # users that kept updates, and only their items
        ds = dataset_from_feedback([[-1, 1], [-1, 1, -1, 1], [-1, 1]], train_fraction=0.999)
        cfg = TrainConfig(k=4, epochs=1, eta=0.3, b=1, B=10, seed=3)
        init = init_params(ds.n_users, ds.n_items, cfg)
        final, _ = train_saros_b(ds, cfg)
        # users 0 and 2 have one block each -> rolled back (t <= b)
        assert np.array_equal(final.user_embeddings[0], init.user_embeddings[0])
        assert np.array_equal(final.user_embeddings[2], init.user_embeddings[2])
        assert not np.array_equal(final.user_embeddings[1], init.user_embeddings[1])
        items1, _, _ = ds.user_arrays(1, TRAIN)
        untouched = np.setdiff1d(np.arange(ds.n_items), items1)
        assert np.array_equal(final.item_embeddings[untouched], init.item_embeddings[untouched])

    def test_zero_eta_freezes_params(self, small_planted):
        cfg = TrainConfig(k=4, epochs=2, eta=0.0, seed=9)
        init = init_params(small_planted.n_users, small_planted.n_items, cfg)
        final, trace = train_saros_b(small_planted, cfg)
        assert params_equal(final, init)
        assert trace.initial_loss == trace.final_loss


class TestSarosBMechanics:
    def test_single_block_update_matches_reference(self):
        ds = dataset_from_feedback([[-1, -1, 1]], train_fraction=0.999)
        cfg = TrainConfig(k=4, epochs=1, eta=0.2, lam=0.05, seed=4)
        init = init_params(ds.n_users, ds.n_items, cfg)
        items, fb, _ = ds.user_arrays(0, TRAIN)
        _, ref = block_loss_and_grad(init, 0, items[fb < 0], items[fb > 0], 0.05)
        expect = init.copy()
        expect.item_embeddings[ref.item_ids] -= 0.2 * ref.grad_items
        expect.user_embeddings[0] -= 0.2 * ref.grad_user
        final, _ = train_saros_b(ds, cfg)
        np.testing.assert_allclose(final.user_embeddings, expect.user_embeddings, rtol=1e-12)
        np.testing.assert_allclose(final.item_embeddings, expect.item_embeddings, rtol=1e-12)

    def test_weights_flow_across_users_and_epochs(self):
        # the second user's update must see the first user's change
        ds = dataset_from_feedback(
            [[-1, 1], [-1, 1]],
            per_user_items=[[0, 1], [1, 0]],  # shared items, reversed roles
            train_fraction=0.999,
        )
        cfg = TrainConfig(k=3, epochs=1, eta=0.2, seed=8)
        init = init_params(ds.n_users, ds.n_items, cfg)
        # manual: user 0 block, then user 1 block on the updated weights
        step1 = init.copy()
        _, g0 = block_loss_and_grad(step1, 0, [0], [1], 0.0)
        step1.item_embeddings[g0.item_ids] -= 0.2 * g0.grad_items
        step1.user_embeddings[0] -= 0.2 * g0.grad_user
        _, g1 = block_loss_and_grad(step1, 1, [1], [0], 0.0)
        step1.item_embeddings[g1.item_ids] -= 0.2 * g1.grad_items
        step1.user_embeddings[1] -= 0.2 * g1.grad_user
        final, _ = train_saros_b(ds, cfg)
        np.testing.assert_allclose(final.user_embeddings, step1.user_embeddings, rtol=1e-12)
        np.testing.assert_allclose(final.item_embeddings, step1.item_embeddings, rtol=1e-12)

    def test_two_epochs_equal_two_chained_single_epochs(self, small_planted):
        cfg2 = TrainConfig(k=4, epochs=2, eta=0.1, lam=0.01, seed=6)
        full, _ = train_saros_b(small_planted, cfg2)
        cfg1 = TrainConfig(k=4, epochs=1, eta=0.1, lam=0.01, seed=6)
        step, _ = train_saros_b(small_planted, cfg1)
        step, _ = train_saros_b(small_planted, cfg1, params=step)
        assert params_equal(full, step)

    def test_input_params_not_mutated(self, small_planted):
        cfg = TrainConfig(k=4, epochs=1, eta=0.2, seed=6)
        warm = init_params(small_planted.n_users, small_planted.n_items, cfg)
        snapshot = warm.copy()
        train_saros_b(small_planted, cfg, params=warm)
        assert params_equal(warm, snapshot)

    def test_numeric_abort_diagnostic(self):
        ds = dataset_from_feedback([[-1, 1]], train_fraction=0.999)
        cfg = TrainConfig(k=3, epochs=50, eta=1e155, lam=1e155, seed=2)
        with pytest.raises(NumericError) as exc:
            train_saros_b(ds, cfg)
        assert "user" in str(exc.value) and "block" in str(exc.value)


class TestSarosM:
    def test_mu_zero_equals_plain_sgd(self, small_planted):
        cfg_m = TrainConfig(k=4, epochs=3, alpha=0.15, mu=0.0, lam=0.01, seed=13)
        cfg_b = TrainConfig(k=4, epochs=3, eta=0.15, lam=0.01, b=0, B=None, seed=13)
        pm, _ = train_saros_m(small_planted, cfg_m)
        pb, _ = train_saros_b(small_planted, cfg_b)
        assert params_equal(pm, pb)

    def test_zero_alpha_freezes(self, small_planted):
        cfg = TrainConfig(k=4, epochs=2, alpha=0.0, mu=0.9, seed=13)
        init = init_params(small_planted.n_users, small_planted.n_items, cfg)
        final, _ = train_saros_m(small_planted, cfg)
        assert params_equal(final, init)

    def test_single_block_half_momentum(self):
        # one block, zero initial velocity, mu = 0.5:
        # v = 0.5 * grad and w -= alpha * 0.5 * grad
        ds = dataset_from_feedback([[-1, 1]], train_fraction=0.999)
        cfg = TrainConfig(k=4, epochs=1, alpha=0.4, mu=0.5, lam=0.0, seed=21)
        init = init_params(ds.n_users, ds.n_items, cfg)
        items, fb, _ = ds.user_arrays(0, TRAIN)
        _, ref = block_loss_and_grad(init, 0, items[fb < 0], items[fb > 0], 0.0)
        expect = init.copy()
        expect.item_embeddings[ref.item_ids] -= 0.4 * 0.5 * ref.grad_items
        expect.user_embeddings[0] -= 0.4 * 0.5 * ref.grad_user
        final, _ = train_saros_m(ds, cfg)
        np.testing.assert_allclose(final.user_embeddings, expect.user_embeddings, rtol=1e-12)
        np.testing.assert_allclose(final.item_embeddings, expect.item_embeddings, rtol=1e-12)

    def test_velocity_persists_across_epochs(self):
        # second epoch's update must use the velocity left by the first
        ds = dataset_from_feedback([[-1, 1]], train_fraction=0.999)
        mu, alpha = 0.7, 0.3
        cfg2 = TrainConfig(k=3, epochs=2, alpha=alpha, mu=mu, seed=31)
        final2, _ = train_saros_m(ds, cfg2)
        # manual two-step evolution
        p = init_params(ds.n_users, ds.n_items, cfg2)
        items, fb, _ = ds.user_arrays(0, TRAIN)
        neg, pos = items[fb < 0], items[fb > 0]
        vU = np.zeros_like(p.user_embeddings)
        vI = np.zeros_like(p.item_embeddings)
        for _ in range(2):
            _, g = block_loss_and_grad(p, 0, neg, pos, 0.0)
            gI = np.zeros_like(vI)
            gI[g.item_ids] = g.grad_items
            vI[g.item_ids] = mu * vI[g.item_ids] + (1 - mu) * gI[g.item_ids]
            p.item_embeddings[g.item_ids] -= alpha * vI[g.item_ids]
            vU[0] = mu * vU[0] + (1 - mu) * g.grad_user
            p.user_embeddings[0] -= alpha * vU[0]
        np.testing.assert_allclose(final2.user_embeddings, p.user_embeddings, rtol=1e-12)
        np.testing.assert_allclose(final2.item_embeddings, p.item_embeddings, rtol=1e-12)

    def test_external_state_continuation(self, small_planted):
        cfg2 = TrainConfig(k=3, epochs=2, alpha=0.1, mu=0.9, seed=31)
        full, _ = train_saros_m(small_planted, cfg2)
        cfg1 = TrainConfig(k=3, epochs=1, alpha=0.1, mu=0.9, seed=31)
        init = init_params(small_planted.n_users, small_planted.n_items, cfg1)
        state = MomentumState.zeros_like(init)  # mutated in place by the trainer
        p1, _ = train_saros_m(small_planted, cfg1, state=state)
        p2, _ = train_saros_m(small_planted, cfg1, params=p1, state=state)
        assert params_equal(full, p2)

    def test_no_gating_in_momentum_variant(self):
        ds = dataset_from_feedback([[-1, 1]], train_fraction=0.999)
        cfg = TrainConfig(k=3, epochs=1, alpha=0.2, mu=0.5, b=5, B=7, seed=1)
        init = init_params(ds.n_users, ds.n_items, cfg)
        final, trace = train_saros_m(ds, cfg)
        assert trace.total_updates == 1
        assert not params_equal(final, init)


class TestBPR:
    def test_zero_steps_keeps_params(self, small_planted):
        cfg = TrainConfig(k=3, epochs=1, eta=0.1, seed=17)
        init = init_params(small_planted.n_users, small_planted.n_items, cfg)
        final, trace = train_bpr(small_planted, cfg, n_steps=0)
        assert params_equal(final, init)
        assert trace.total_updates == 0

    def test_single_triplet_descent(self):
        ds = dataset_from_feedback([[-1, 1]], train_fraction=0.999)
        cfg = TrainConfig(k=4, epochs=1, eta=0.1, lam=0.0, seed=23)
        losses = []
        for steps in range(6):
            p, _ = train_bpr(ds, cfg, n_steps=steps)
            items, fb, _ = ds.user_arrays(0, TRAIN)
            losses.append(triplet_loss(p, 0, int(items[fb > 0][0]), int(items[fb < 0][0]), 0.0))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_reproducible_across_runs(self, small_planted):
        cfg = TrainConfig(k=3, epochs=1, eta=0.1, seed=29)
        pa, ta = train_bpr(small_planted, cfg, n_steps=2000)
        pb, tb = train_bpr(small_planted, cfg, n_steps=2000)
        assert params_equal(pa, pb)
        assert [(e, u, l) for _, e, u, l in ta.entries] == [(e, u, l) for _, e, u, l in tb.entries]

    def test_ineligible_users_never_sampled(self):
        # second user has no train negative: their rows must stay put
        ds = dataset_from_feedback([[-1, 1, -1, 1], [1, 1, 1, -1]], train_fraction=0.75)
        cfg = TrainConfig(k=3, epochs=1, eta=0.2, seed=3)
        init = init_params(ds.n_users, ds.n_items, cfg)
        final, _ = train_bpr(ds, cfg, n_steps=300)
        assert np.array_equal(final.user_embeddings[1], init.user_embeddings[1])

    def test_no_eligible_users_raises(self):
        ds = dataset_from_feedback([[1, 1, 1, -1]], train_fraction=0.75)
        with pytest.raises(DataError):
            train_bpr(ds, TrainConfig(k=2, seed=1), n_steps=10)

    def test_default_step_count(self, small_planted):
        n_train = int((small_planted.split == TRAIN).sum())
        cfg = TrainConfig(k=3, epochs=2, eta=0.05, seed=3)
        _, trace = train_bpr(small_planted, cfg)
        assert trace.total_updates == 2 * n_train

    def test_trajectory_invariant_to_trace_period(self, small_planted):
        cfg = TrainConfig(k=3, epochs=1, eta=0.1, seed=41)
        a, _ = train_bpr(small_planted, cfg, n_steps=900)
        b, _ = train_bpr(small_planted, cfg, n_steps=900, trace_period=77)
        assert params_equal(a, b)


class TestBPRBatch:
    def test_single_pair_equals_triplet_step(self):
        ds = dataset_from_feedback([[-1, 1]], train_fraction=0.999)
        cfg = TrainConfig(k=4, epochs=1, eta=0.3, lam=0.02, seed=19)
        init = init_params(ds.n_users, ds.n_items, cfg)
        from saros.loss import triplet_grad

        items, fb, _ = ds.user_arrays(0, TRAIN)
        ip, ineg = int(items[fb > 0][0]), int(items[fb < 0][0])
        tg = triplet_grad(init, 0, ip, ineg, 0.02)
        expect = init.copy()
        expect.user_embeddings[0] -= 0.3 * tg.grad_user
        expect.item_embeddings[ip] -= 0.3 * tg.grad_item_pos
        expect.item_embeddings[ineg] -= 0.3 * tg.grad_item_neg
        final, _ = train_bpr_batch(ds, cfg)
        np.testing.assert_allclose(final.user_embeddings, expect.user_embeddings, rtol=1e-12)
        np.testing.assert_allclose(final.item_embeddings, expect.item_embeddings, rtol=1e-12)

    def test_monotone_descent_on_tiny_set(self):
        ds = dataset_from_feedback(
            [[-1, 1, -1, 1, 1], [1, -1, -1, 1, -1]], train_fraction=0.999
        )
        cfg = TrainConfig(k=3, epochs=100, eta=0.5, lam=0.0, seed=37)
        _, trace = train_bpr_batch(ds, cfg, trace_period=1)
        losses = [l for _, _, _, l in trace.entries]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_one_update_per_epoch(self, small_planted):
        cfg = TrainConfig(k=3, epochs=7, eta=0.5, seed=3)
        _, trace = train_bpr_batch(small_planted, cfg)
        assert trace.total_updates == 7


class TestTracing:
    def test_period_larger_than_run_gives_start_and_end(self, small_planted):
        cfg = TrainConfig(k=3, epochs=1, eta=0.1, seed=5)
        _, trace = train_saros_b(small_planted, cfg, trace_period=10**9)
        assert len(trace.entries) == 2
        assert trace.entries[0][2] == 0

    def test_periodic_entries_between_bounds(self, small_planted):
        cfg = TrainConfig(k=3, epochs=2, eta=0.1, seed=5)
        _, trace = train_saros_b(small_planted, cfg, trace_period=50)
        updates = [u for _, _, u, _ in trace.entries]
        assert updates == sorted(updates)
        assert len(trace.entries) > 3

    def test_subsample_loss_fixed_across_runs(self, small_planted):
        cfg = TrainConfig(k=3, epochs=1, eta=0.1, seed=5)
        _, ta = train_saros_b(small_planted, cfg, trace_period=100)
        _, tb = train_saros_b(small_planted, cfg, trace_period=100)
        assert [l for _, _, _, l in ta.entries] == [l for _, _, _, l in tb.entries]

    def test_trace_csv_roundtrip(self, small_planted, tmp_path):
        cfg = TrainConfig(k=3, epochs=1, eta=0.1, seed=5)
        _, trace = train_saros_b(small_planted, cfg, trace_period=40)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        rows = TrainTrace.read_csv(path)
        assert [(e, u, l) for _, e, u, l in rows] == [(e, u, l) for _, e, u, l in trace.entries]

    def test_wall_clock_non_decreasing(self, small_planted):
        cfg = TrainConfig(k=3, epochs=2, eta=0.1, seed=5)
        _, trace = train_saros_b(small_planted, cfg, trace_period=100)
        secs = [s for s, _, _, _ in trace.entries]
        assert all(b >= a for a, b in zip(secs, secs[1:]))


def test_eta_over_sqrt_n_scaling(small_planted):
    n = small_planted.n_users
    scaled = TrainConfig(k=3, epochs=1, eta=0.8, eta_over_sqrt_n=True, seed=5)
    manual = TrainConfig(k=3, epochs=1, eta=0.8 / np.sqrt(n), seed=5)
    a, _ = train_saros_b(small_planted, scaled)
    b, _ = train_saros_b(small_planted, manual)
    assert params_equal(a, b)
    c, _ = train_bpr(small_planted, scaled, n_steps=300)
    d, _ = train_bpr(small_planted, manual, n_steps=300)
    assert params_equal(c, d)


def test_test_only_items_receive_no_training_gradient():
    # the last item of each user only occurs in the test split; its
    # embedding must stay at its initialization for every trainer
    ds = dataset_from_feedback([[-1, 1, -1, 1, -1], [1, -1, 1, -1, -1]], train_fraction=0.8)
    from saros.ingest import TEST

    test_only = np.setdiff1d(ds.items[ds.split == TEST], ds.items[ds.split == TRAIN])
    assert len(test_only) > 0
    cfg = TrainConfig(k=3, epochs=2, eta=0.2, alpha=0.2, seed=6, bpr_steps=100)
    init = init_params(ds.n_users, ds.n_items, cfg)
    for kind in ("saros_b", "saros_m", "bpr", "bpr_batch"):
        final, _ = train(ds, kind, cfg)
        assert np.array_equal(final.item_embeddings[test_only], init.item_embeddings[test_only]), kind


def test_dispatcher_rejects_unknown_trainer(small_planted):
    with pytest.raises(DataError):
        train(small_planted, "adam", TrainConfig())


def test_dispatcher_covers_all_kinds(small_planted):
    cfg = TrainConfig(k=3, epochs=1, eta=0.05, seed=1, bpr_steps=50)
    for kind in ("saros_b", "saros_m", "bpr", "bpr_batch"):
        params, trace = train(small_planted, kind, cfg)
        assert trace.trainer == kind
        assert params.all_finite()
