"""Acceptance gate: one test per criterion, each printing a PASS line with
the measured values (run with -s to see them).

The training criterion uses a seeded synthetic power-law interaction graph
in place of a downsampled public dataset (this build environment has no
network access); the graph carries cluster structure so there is a real
collaborative signal to learn.  Bandwidth trends are asserted on the
best-rate-of-repetitions statistic (STREAM practice) because this may run on
a noisy shared host; absolute figures are never asserted.
"""

import time

import numpy as np
import pytest

import oracles
from conftest import random_graph
from gnnrec import kernels as K
from gnnrec import models as M
from gnnrec.datagen import powerlaw_bipartite
from gnnrec.evaluate import (random_ranking_recall, recall_at_k,
                             sampled_forward)
from gnnrec.graph import (degree_histogram, from_edges, loglog_slope,
                          split_train_test)
from gnnrec.kron import SeedBlock, expand
from gnnrec.membench import BenchSpec, sweep
from gnnrec.redundancy import (batch_redundancy, item_vertex,
                               max_batch_under_budget,
                               redundancy_from_groups, subgraph_footprint)
from gnnrec.train import TrainConfig, batch_schedule, fit, sample_bpr_batch, scaled_lr


def announce(criterion, detail):
    print(f"\nACCEPTANCE {criterion}: PASS - {detail}")


def naive_stack(g, params, num_layers, d_top_u, d_top_i):
    """L-layer NGCF forward + backward on the per-edge reference dataflow."""
    xu, xi = params.user_embed, params.item_embed
    stages = [(xu, xi)]
    for layer in range(num_layers):
        xu, xi = M.naive_ngcf_layer_forward(g, xu, xi, params.w1[layer],
                                            params.w2[layer])
        stages.append((xu, xi))
    d_xu, d_xi = d_top_u, d_top_i
    grads_w1 = [None] * num_layers
    grads_w2 = [None] * num_layers
    for layer in range(num_layers - 1, -1, -1):
        xu_in, xi_in = stages[layer]
        d_xu, d_xi, dw1, dw2 = M.naive_ngcf_layer_backward(
            g, xu_in, xi_in, params.w1[layer], params.w2[layer], d_xu, d_xi)
        grads_w1[layer] = dw1
        grads_w2[layer] = dw2
    return stages[-1], (d_xu, d_xi, grads_w1, grads_w2)


def optimized_stack(g, params, num_layers, d_top_u, d_top_i):
    xu, xi = params.user_embed, params.item_embed
    caches = []
    for layer in range(num_layers):
        xu, xi, cache = M.ngcf_layer_forward(g, xu, xi, params.w1[layer],
                                             params.w2[layer])
        caches.append(cache)
    d_xu, d_xi = d_top_u, d_top_i
    grads_w1 = [None] * num_layers
    grads_w2 = [None] * num_layers
    for layer in range(num_layers - 1, -1, -1):
        d_xu, d_xi, dw1, dw2 = M.ngcf_layer_backward(g, caches[layer],
                                                     d_xu, d_xi)
        grads_w1[layer] = dw1
        grads_w2[layer] = dw2
    return (xu, xi), (d_xu, d_xi, grads_w1, grads_w2)


def test_criterion_1_dataflow_equivalence():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    instances = 200
    for trial in range(instances):
        nu = int(rng.integers(2, 65))
        ni = int(rng.integers(2, 65))
        d = int(rng.integers(1, 17))
        layers = int(rng.integers(1, 4))
        g = random_graph(rng, nu, ni, int(rng.integers(1, 4 * (nu + ni))))
        params = M.ModelParams(
            rng.normal(size=(nu, d)), rng.normal(size=(ni, d)),
            [rng.normal(size=(d, d)) for _ in range(layers)],
            [rng.normal(size=(d, d)) for _ in range(layers)])
        d_top_u = rng.normal(size=(nu, d))
        d_top_i = rng.normal(size=(ni, d))
        (ou, oi), o_grads = optimized_stack(g, params, layers, d_top_u, d_top_i)
        (ru, ri), r_grads = naive_stack(g, params, layers, d_top_u, d_top_i)
        np.testing.assert_allclose(ou, ru, rtol=1e-5, atol=1e-10)
        np.testing.assert_allclose(oi, ri, rtol=1e-5, atol=1e-10)
        for got, want in zip(o_grads[:2], r_grads[:2]):
            np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-10)
        for got_list, want_list in zip(o_grads[2:], r_grads[2:]):
            for got, want in zip(got_list, want_list):
                np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-10)
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"equivalence suite took {elapsed:.1f}s"
    announce(1, f"{instances} random graphs, forward+backward within 1e-5 "
                f"relative, {elapsed:.1f}s")


def test_criterion_2_complexity_counters():
    users, items = [], []
    for u in range(10):
        for j in range(3):
            users.append(u)
            items.append((u + 3 * j) % 8)
    g = from_edges(users, items, num_users=10, num_items=8)
    assert g.num_edges == 30
    rng = np.random.default_rng(2)
    xu = rng.normal(size=(10, 4)).astype(np.float32)
    xi = rng.normal(size=(8, 4)).astype(np.float32)
    w1 = rng.normal(size=(4, 4)).astype(np.float32)
    w2 = rng.normal(size=(4, 4)).astype(np.float32)
    K.reset_counters()
    M.naive_ngcf_layer_forward(g, xu, xi, w1, w2)
    naive_rows = K.counters.get("weight_matmul").rows
    K.reset_counters()
    M.ngcf_layer_forward(g, xu, xi, w1, w2)
    opt_rows = K.counters.get("weight_matmul").rows
    sddmm_calls = K.counters.get("sddmm.mul").calls
    assert naive_rows == 60, f"naive weight-matmul rows {naive_rows} != 60"
    assert opt_rows == 18, f"optimized weight-matmul rows {opt_rows} != 18"
    assert sddmm_calls == 1, f"sddmm.mul called {sddmm_calls}x per layer"
    # the reuse holds per layer across a full forward as well
    config = M.ModelConfig(model="ngcf", num_layers=3, embed_dim=4)
    params = M.init_params(10, 8, config, seed=0)
    K.reset_counters()
    M.model_forward(g, params, config)
    assert K.counters.get("sddmm.mul").calls == config.num_layers
    announce(2, f"weight-matmul rows naive={naive_rows} optimized={opt_rows}; "
                f"one SDDMM-mul per layer")


def test_criterion_3_kernel_oracles():
    rng = np.random.default_rng(3003)
    checked = 0
    for op in ("mul", "add", "dot"):
        for _ in range(10):
            g = random_graph(rng, int(rng.integers(2, 65)),
                             int(rng.integers(2, 65)),
                             int(rng.integers(1, 200)))
            d = int(rng.integers(1, 9))
            xu = rng.normal(size=(g.num_users, d)).astype(np.float32)
            xi = rng.normal(size=(g.num_items, d)).astype(np.float32)
            got = K.sddmm(g, xu, xi, op)
            np.testing.assert_allclose(got, oracles.sddmm_oracle(g, xu, xi, op),
                                       atol=1e-6)
            checked += 1
    for reduce in ("sum", "mean", "max"):
        for mode in ("edge", "copy_src"):
            for target in ("item", "user"):
                for _ in range(4):
                    g = random_graph(rng, int(rng.integers(2, 65)),
                                     int(rng.integers(2, 65)),
                                     int(rng.integers(1, 200)))
                    d = int(rng.integers(1, 9))
                    rows = (g.num_edges if mode == "edge"
                            else (g.num_users if target == "item" else g.num_items))
                    vals = rng.normal(size=(rows, d)).astype(np.float32)
                    got = K.spmm(g, vals, reduce, target=target, mode=mode)
                    want = oracles.spmm_oracle(g, vals, reduce, target, mode)
                    np.testing.assert_allclose(got, want, atol=1e-6)
                    checked += 1
    # gradient kernels against central differences, 64-bit
    for op in ("mul", "add", "dot"):
        g = random_graph(rng, 6, 5, 15)
        xu = rng.normal(size=(6, 3))
        xi = rng.normal(size=(5, 3))
        dout = 1 if op == "dot" else 3
        weights = rng.normal(size=(g.num_edges, dout))
        f = lambda: float(np.sum(weights * K.sddmm(g, xu, xi, op)))
        gs, gd = K.sddmm_backward(g, xu, xi, op, weights)
        oracles.check_grad(f, xu, gs, rng, max_rel=1e-4)
        oracles.check_grad(f, xi, gd, rng, max_rel=1e-4)
        checked += 2
    for reduce in ("sum", "mean"):
        g = random_graph(rng, 6, 5, 15)
        values = rng.normal(size=(g.num_edges, 3))
        weights = rng.normal(size=(g.num_items, 3))
        f = lambda: float(np.sum(weights * K.spmm(g, values, reduce,
                                                  target="item")))
        grad = K.spmm_backward(g.view("item"), reduce, weights)
        oracles.check_grad(f, values, grad, rng, max_rel=1e-4)
        checked += 1
    announce(3, f"{checked} kernel-oracle and finite-difference checks")


def test_criterion_4_kronecker():
    g = powerlaw_bipartite(500, 350, 3000, zipf_exponent=1.1, seed=44)
    k = 3
    out = expand(g, SeedBlock.all_ones(k))
    assert out.num_users == k * g.num_users
    assert out.num_items == k * g.num_items
    assert out.num_edges == k * k * g.num_edges
    assert round(out.density, 3) == round(g.density, 3)
    s_in = loglog_slope(degree_histogram(g, "user"))
    s_out = loglog_slope(degree_histogram(out, "user"))
    assert abs(s_in - s_out) <= 0.05
    announce(4, f"x{k} per side, x{k * k} edges, density "
                f"{g.density:.4%} -> {out.density:.4%}, "
                f"slope {s_in:.3f} -> {s_out:.3f}")


@pytest.fixture(scope="module")
def trained_model():
    g = powerlaw_bipartite(2000, 1200, 100_000, zipf_exponent=0.9,
                           clusters=12, seed=77)
    train, test = split_train_test(g, 0.9, seed=7)
    model_cfg = M.ModelConfig(model="lightgcn", num_layers=2, embed_dim=64)
    train_cfg = TrainConfig(base_batch=1000, base_lr=1e-4, large_batch=30_000,
                            warmup_epochs=2, warmup_divisor=10, epochs=100,
                            seed=7)
    params = M.init_params(g.num_users, g.num_items, model_cfg, seed=7)
    t0 = time.perf_counter()
    result = fit(train, params, model_cfg, train_cfg)
    seconds = time.perf_counter() - t0
    return dict(train=train, test=test, model_cfg=model_cfg,
                train_cfg=train_cfg, params=params, result=result,
                seconds=seconds)


def test_criterion_5_training_behavior(trained_model):
    tm = trained_model
    assert tm["seconds"] < 1800, f"training took {tm['seconds']:.0f}s"
    losses = tm["result"].losses()
    assert losses[-1] < 0.5 * losses[0], \
        f"loss {losses[-1]:.4f} not below half of epoch-1 loss {losses[0]:.4f}"
    fu, fi, _ = M.model_forward(tm["train"], tm["params"], tm["model_cfg"])
    recall = recall_at_k(fu, fi, tm["train"], tm["test"], 20).recall
    baseline = random_ranking_recall(tm["train"], tm["test"], 20)
    assert recall >= 5 * baseline, \
        f"recall {recall:.4f} below 5x random baseline {baseline:.5f}"
    sampled = [recall_at_k(*sampled_forward(tm["train"], tm["params"],
                                            tm["model_cfg"], 2, seed),
                           tm["train"], tm["test"], 20).recall
               for seed in range(5)]
    assert np.mean(sampled) <= recall, \
        f"sampling improved recall: {np.mean(sampled):.4f} > {recall:.4f}"
    announce(5, f"recall@20 {recall:.4f} = {recall / baseline:.1f}x baseline; "
                f"loss {losses[0]:.3f} -> {losses[-1]:.3f}; "
                f"sampled(s=2, 5 seeds) {np.mean(sampled):.4f} <= full; "
                f"{tm['seconds']:.0f}s")


def test_criterion_6_schedule_fidelity():
    cfg = TrainConfig(base_batch=1000, base_lr=1e-4, large_batch=150_000,
                      warmup_epochs=2, warmup_divisor=10)
    observed = []
    for epoch in (0, 1, 2, 50, 99):
        batch = batch_schedule(cfg, epoch)
        lr = scaled_lr(cfg.base_lr, cfg.base_batch, batch)
        observed.append((epoch, batch, lr))
    for epoch, batch, lr in observed[:2]:
        assert batch == 15_000
        assert lr == pytest.approx(1.5e-3, rel=1e-12)
    for epoch, batch, lr in observed[2:]:
        assert batch == 150_000
        assert lr == pytest.approx(1.5e-2, rel=1e-12)
    announce(6, "epochs 0-1: (15000, 1.5e-3); epochs 2+: (150000, 1.5e-2)")


def test_criterion_7_redundancy():
    g = from_edges([0, 1, 1], [0, 0, 1])   # u0-i0-u1-i1 path
    report = redundancy_from_groups(
        g, [[item_vertex(g, 0)], [item_vertex(g, 1)]], 2)
    assert report.ratio_vertices == pytest.approx(1.75)
    rng = np.random.default_rng(7007)
    budget_checks = 0
    for trial in range(500):
        gg = random_graph(rng, int(rng.integers(4, 16)),
                          int(rng.integers(4, 16)),
                          int(rng.integers(4, 60)))
        total = gg.num_users + gg.num_items
        targets = rng.choice(total, size=min(3, total), replace=False)
        prev_v = prev_e = 0
        for layers in range(4):
            fp = subgraph_footprint(gg, targets, layers, rng=trial)
            assert fp.vertices >= prev_v and fp.edges >= prev_e
            sampled = subgraph_footprint(gg, targets, layers,
                                         sampling_factor=2, rng=trial)
            assert sampled.vertices <= fp.vertices
            assert sampled.edges <= fp.edges
            prev_v, prev_e = fp.vertices, fp.edges
        workers = int(rng.integers(1, 4))
        batch = int(rng.integers(1, 1 + gg.num_edges // workers))
        rep = batch_redundancy(gg, batch, workers, 2, rng=trial)
        assert rep.ratio_vertices >= 1.0
        assert rep.ratio_edges >= 1.0 - 1e-12
        if trial % 10 == 0:
            cfg = M.ModelConfig(model="lightgcn", num_layers=2, embed_dim=8)
            small = max_batch_under_budget(gg, cfg, 10**4, 2, seed=trial)
            large = max_batch_under_budget(gg, cfg, 10**8, 2, seed=trial)
            assert small <= large
            budget_checks += 1
    cfg = M.ModelConfig(model="lightgcn", num_layers=2, embed_dim=8)
    assert max_batch_under_budget(g, cfg, 8, 2) == 0   # the "/" case
    announce(7, f"path ratio 1.75; 500-instance containment fuzz with "
                f"{budget_checks} budget-monotonicity pairs; tiny budget -> 0")


def test_criterion_8_membench_properties():
    # this container hides its cache topology; 384 MiB is comfortably above
    # any plausible cache/buffering layer (128 MiB showed warm-cache bleed
    # between sweep cells)
    region = 384 * 1024 * 1024
    reps = 5
    base = BenchSpec(region_bytes=region, repetitions=reps,
                     min_region_bytes=32 * 1024 * 1024)
    records, rows = sweep(base, patterns=["sequential"], ops=["read"],
                          access_sizes=[64], thread_counts=[1, 2],
                          cooldown_s=0.05)
    for record in records:
        assert record.bandwidth == record.bytes_moved / record.elapsed_seconds
    single, multi = records[0], records[1]
    assert multi.best_gbps() >= single.best_gbps(), \
        f"2-thread read {multi.best_gbps():.2f} < 1-thread {single.best_gbps():.2f}"
    sizes = [64, 128, 256, 512, 1024, 2048, 4096]
    sweep_records, _ = sweep(base, patterns=["random"], ops=["write"],
                             access_sizes=sizes, thread_counts=[1],
                             cooldown_s=0.05)
    for record in sweep_records:
        assert record.bandwidth == record.bytes_moved / record.elapsed_seconds
    rates = [r.best_gbps() for r in sweep_records]
    for smaller, larger, s in zip(rates, rates[1:], sizes):
        assert larger >= smaller, \
            f"random-write bandwidth dropped {smaller:.2f} -> {larger:.2f} " \
            f"GB/s after {s}B"
    announce(8, f"identity exact on {len(records) + len(sweep_records)} "
                f"records; seq read 1t {single.best_gbps():.2f} <= 2t "
                f"{multi.best_gbps():.2f} GB/s; random write "
                f"{rates[0]:.2f} -> {rates[-1]:.2f} GB/s over 64B -> 4KB")


def test_criterion_9_determinism():
    g = powerlaw_bipartite(300, 200, 5000, clusters=4, seed=5)
    model_cfg = M.ModelConfig(model="ngcf", num_layers=2, embed_dim=16)
    train_cfg = TrainConfig(base_batch=500, large_batch=2000, epochs=8,
                            base_lr=1e-3, seed=21)
    opts = K.EngineOpts(sddmm=K.KernelOptions(workers=2),
                        spmm=K.KernelOptions(workers=2))
    runs = []
    for _ in range(2):
        params = M.init_params(300, 200, model_cfg, seed=21)
        runs.append(fit(g, params, model_cfg, train_cfg, opts))
    for a, b in zip(runs[0].losses(), runs[1].losses()):
        assert a == pytest.approx(b, rel=1e-5)
    b1 = sample_bpr_batch(g, 256, np.random.default_rng(9))
    b2 = sample_bpr_batch(g, 256, np.random.default_rng(9))
    assert b1.users.tobytes() == b2.users.tobytes()
    assert b1.pos_items.tobytes() == b2.pos_items.tobytes()
    assert b1.neg_items.tobytes() == b2.neg_items.tobytes()
    s1, t1 = split_train_test(g, 0.9, seed=13)
    s2, t2 = split_train_test(g, 0.9, seed=13)
    assert s1.edge_users.tobytes() == s2.edge_users.tobytes()
    assert t1.edge_items.tobytes() == t2.edge_items.tobytes()
    announce(9, f"two 8-epoch runs identical within 1e-5 "
                f"(final loss {runs[0].losses()[-1]:.6f}); samplers "
                f"byte-reproducible")
