import numpy as np
import pytest
import torch

from gridsense import denoiser as dn
from gridsense.diffusion import make_schedule, sample_prior
from conftest import fd_check


def permute_state(node, edge, perm):
    n = len(node)
    iu = np.triu_indices(n, 1)
    A = np.zeros((n, n), int)
    A[iu] = edge
    A = A + A.T
    return node[perm], A[np.ix_(perm, perm)][iu]


def dense_edges(pe, n):
    iu = np.triu_indices(n, 1)
    E = np.zeros((n, n, 2))
    E[iu] = pe
    E[iu[1], iu[0]] = pe
    return E


def test_init_deterministic():
    a = dn.init(dn.DenoiserHyper(8, 1), 3)
    b = dn.init(dn.DenoiserHyper(8, 1), 3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb)


@pytest.mark.parametrize("h,L", [(8, 1), (4, 1), (32, 2), (16, 3)])
def test_param_count_closed_form(h, L):
    model = dn.init(dn.DenoiserHyper(h, L), 0)
    assert sum(p.numel() for p in model.parameters()) == dn.param_count(h, L)


def test_param_count_h8_l1_value():
    assert dn.param_count(8, 1) == 1244


def test_bad_hyper():
    with pytest.raises(ValueError):
        dn.DenoiserHyper(hidden=1)
    with pytest.raises(ValueError):
        dn.DenoiserHyper(layers=0)


@pytest.mark.parametrize("n", [2, 3, 7, 12])
def test_outputs_are_distributions_any_n(n):
    model = dn.init(dn.DenoiserHyper(8, 2, 0.1), 1)
    g = sample_prior(n, np.random.default_rng(n), (4,), 10)
    pv, pe = dn.predict(model, g.node_states, g.edge_states, [1, 4, 7, 10], 10)
    assert pv.shape == (4, n, 2) and pe.shape == (4, n * (n - 1) // 2, 2)
    np.testing.assert_allclose(pv.sum(-1), 1, atol=1e-12)
    np.testing.assert_allclose(pe.sum(-1), 1, atol=1e-12)


def test_predict_rejects_bad_t():
    model = dn.init(dn.DenoiserHyper(4, 1), 0)
    g = sample_prior(3, np.random.default_rng(0), (1,), 5)
    with pytest.raises(ValueError):
        dn.predict(model, g.node_states, g.edge_states, [0], 5)
    with pytest.raises(ValueError):
        dn.predict(model, g.node_states, g.edge_states, [6], 5)


def test_inference_deterministic():
    model = dn.init(dn.DenoiserHyper(8, 2, 0.5), 2)
    g = sample_prior(5, np.random.default_rng(0), (2,), 10)
    a = dn.predict(model, g.node_states, g.edge_states, [3, 3], 10)
    b = dn.predict(model, g.node_states, g.edge_states, [3, 3], 10)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@pytest.mark.parametrize("seed", range(5))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    n = 6
    model = dn.init(dn.DenoiserHyper(8, 2), seed)
    g = sample_prior(n, rng)
    perm = rng.permutation(n)
    pnode, pedge = permute_state(g.node_states, g.edge_states, perm)
    pv, pe = dn.predict(model, g.node_states[None], g.edge_states[None], [5], 20)
    qv, qe = dn.predict(model, pnode[None], pedge[None], [5], 20)
    np.testing.assert_allclose(qv[0], pv[0][perm], atol=1e-12)
    np.testing.assert_allclose(dense_edges(qe[0], n), dense_edges(pe[0], n)[np.ix_(perm, perm)], atol=1e-12)


def test_zero_attention_gives_local_node_outputs():
    model = dn.init(dn.DenoiserHyper(8, 2), 0)
    with torch.no_grad():
        for block in model.blocks:
            for lin in (block.q, block.k, block.v, block.e_mul, block.e_add):
                lin.weight.zero_()
                lin.bias.zero_()
    g = sample_prior(5, np.random.default_rng(0))
    pv, _ = dn.predict(model, g.node_states[None], g.edge_states[None], [4], 20)
    other_nodes = g.node_states.copy()
    other_nodes[1:] = 1 - other_nodes[1:]
    qv, _ = dn.predict(model, other_nodes[None], (1 - g.edge_states)[None], [4], 20)
    np.testing.assert_allclose(qv[0, 0], pv[0, 0], atol=1e-14)


def small_batches(rng, n=3, B=2, T=20):
    g = sample_prior(n, rng, (B,), T)
    tgt = sample_prior(n, rng, (B,), 0)
    t = rng.integers(1, T + 1, size=B)
    coef = rng.normal(size=B)
    x0 = dn.LossBatch(g.node_states, g.edge_states, t, tgt.node_states, tgt.edge_states, coef, "x0")
    step = dn.LossBatch(g.node_states, g.edge_states, t, tgt.node_states, tgt.edge_states, coef, "step")
    return x0, step


@pytest.mark.parametrize("kind", ["x0", "step"])
def test_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(7)
    model = dn.init(dn.DenoiserHyper(4, 1, 0.1), 11)
    x0, step = small_batches(rng)
    batch = x0 if kind == "x0" else step
    _, worst = fd_check(model, [batch], 20, make_schedule(20), seed=5)
    assert worst < 1e-4


def test_zero_weights_zero_gradient():
    rng = np.random.default_rng(0)
    model = dn.init(dn.DenoiserHyper(4, 1), 0)
    x0, _ = small_batches(rng)
    x0.coef = np.zeros_like(x0.coef)
    loss, grads = dn.loss_and_grad(model, [x0], 20, None, 1)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def test_gradient_linear_in_weights():
    rng = np.random.default_rng(1)
    model = dn.init(dn.DenoiserHyper(4, 1), 0)
    x0, _ = small_batches(rng)
    l1, g1 = dn.loss_and_grad(model, [x0], 20, None, 3)
    x0.coef = 2 * x0.coef
    l2, g2 = dn.loss_and_grad(model, [x0], 20, None, 3)
    assert l2 == pytest.approx(2 * l1, rel=1e-12)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-10, atol=1e-14)


def test_nonfinite_loss_identifies_term():
    rng = np.random.default_rng(0)
    model = dn.init(dn.DenoiserHyper(4, 1), 0)
    x0, _ = small_batches(rng)
    x0.coef = np.array([1.0, np.inf])
    with pytest.raises(FloatingPointError, match="term 1"):
        dn.loss_and_grad(model, [x0], 20)


def test_step_kind_needs_schedule():
    rng = np.random.default_rng(0)
    _, step = small_batches(rng)
    with pytest.raises(ValueError):
        dn.loss_and_grad(dn.init(dn.DenoiserHyper(4, 1), 0), [step], 20)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = dn.init(dn.DenoiserHyper(8, 2, 0.1), 9)
    dn.save(model, tmp_path / "ck", seed=9)
    back = dn.load(tmp_path / "ck")
    assert back.hyper == model.hyper
    for (na, pa), (nb, pb) in zip(model.named_parameters(), back.named_parameters()):
        assert na == nb and torch.equal(pa, pb) and pb.dtype == torch.float64
    manifest = (tmp_path / "ck.json").read_text()
    assert '"seed": 9' in manifest and "float64" in manifest
