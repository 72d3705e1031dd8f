import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tslr_csi import fista_solver as fs
from tslr_csi.errors import InvalidArgument, NumericFailure
from tslr_csi.fista_net import (
    ArchConfig,
    FistaNet,
    count_macc,
    count_trainable_params,
    gradient_step,
    init_params,
    network_forward,
    preset,
    st_net,
    stage_forward,
)
from tslr_csi.tslr_codec import decompose, ls_warm_start
from tslr_csi.channel_sim import GeometryConfig, make_sample
from tslr_csi.train_eval import nmse_ratios


def t(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def embed_classical(net, eta, gammas):
    """Kernels that turn every stage into one plain FISTA iteration.

    R lifts channel c to (+g_c, -g_c); S = ReLU pair recombination gives
    features (g_0, g_1, g_0, g_1); thresholds act on features 0-1 only, and
    D returns soft(g) - g so the shortcut sum is soft(g).
    """
    with torch.no_grad():
        for k, st_ in enumerate(net.stages):
            for p in st_.parameters():
                p.zero_()
            st_.eta.fill_(eta)
            st_.gamma.fill_(float(gammas[k]))
            st_.R[0, 0, 1, 1], st_.R[1, 0, 1, 1] = 1, -1
            st_.R[2, 1, 1, 1], st_.R[3, 1, 1, 1] = 1, -1
            st_.S0[:, :, 0, 0] = torch.eye(16)
            for o, (a, b) in enumerate([(0, 1), (2, 3), (0, 1), (2, 3)]):
                st_.S1[o, a, 0, 0], st_.S1[o, b, 0, 0] = 1, -1
            for i in range(4):
                st_.St0[2 * i, i, 0, 0], st_.St0[2 * i + 1, i, 0, 0] = 1, -1
                st_.St1[i, 2 * i, 0, 0], st_.St1[i, 2 * i + 1, 0, 0] = 1, -1
            st_.D[0, 0, 1, 1], st_.D[0, 2, 1, 1] = 1, -1
            st_.D[1, 1, 1, 1], st_.D[1, 3, 1, 1] = 1, -1


def classical_taus(eta, tau, k):
    v = torch.zeros(16, dtype=torch.float64)
    v[:2] = eta * tau
    return [v] * k


SMALL = ArchConfig(stages=3, img_h=4, img_w=4, cr=0.5)


def test_init_gamma_and_eta():
    net = init_params(SMALL, np.random.default_rng(0))
    assert net.stages[0].gamma.item() == 0.0
    _, gam = fs.shrinkage_schedule(3)
    assert [s.gamma.item() for s in net.stages] == pytest.approx(gam.tolist(), abs=0)
    lam = np.linalg.eigvalsh(net.w.detach().numpy().T @ net.w.detach().numpy())[-1]
    assert net.stages[1].eta.item() == 1 / fs.lipschitz(net.w.detach().numpy())
    assert net.stages[1].eta.item() == pytest.approx(1 / lam, rel=1e-4)  # power-iteration estimate


def test_init_deterministic():
    a = init_params(SMALL, np.random.default_rng(4))
    b = init_params(SMALL, np.random.default_rng(4))
    for (na, pa, _), (nb, pb, _) in zip(a.named_entries(), b.named_entries()):
        assert na == nb
        assert torch.equal(pa, pb)


def test_init_forward_finite():
    arch = ArchConfig(stages=5, img_h=16, img_w=16, cr=0.25)
    net = init_params(arch, np.random.default_rng(0))
    h = t(np.random.default_rng(1).standard_normal((8, 512)))
    out = net(net.encode(h))
    assert torch.isfinite(out.final).all()
    assert np.all(np.isfinite(nmse_ratios(out.final.detach().numpy(), h.numpy())))


def test_encoder_override_shape():
    with pytest.raises(InvalidArgument):
        init_params(SMALL, np.random.default_rng(0), encoder=np.zeros((3, 3)))


def test_arch_validation():
    with pytest.raises(InvalidArgument):
        ArchConfig(stages=-1, img_h=4, img_w=4, cr=0.5)
    with pytest.raises(InvalidArgument):
        ArchConfig(stages=1, img_h=4, img_w=4, cr=0.5, io_channels=3)
    with pytest.raises(InvalidArgument):
        preset("nope", 0.25, 20)
    a = preset("angular32", 0.25, 20)
    assert (a.input_len, a.codeword_len) == (2048, 512)
    assert ArchConfig.from_dict(a.to_dict()) == a


def test_gradient_step_cases(rng):
    w = t(rng.standard_normal((16, 32)))
    y = t(rng.standard_normal((2, 32)))
    s = t(rng.standard_normal((2, 16)))
    img = y.reshape(2, 2, 4, 4)
    assert torch.equal(gradient_step(y, w, s, 0.0, SMALL), img)
    assert torch.equal(gradient_step(y, w, y @ w.T, 0.7, SMALL), img)
    with pytest.raises(InvalidArgument):
        gradient_step(y, w, s[:, :5], 0.1, SMALL)


def test_gradient_step_layout(rng):
    w = t(rng.standard_normal((16, 32)))
    y = t(rng.standard_normal((1, 32)))
    g = gradient_step(y, w, t(np.zeros((1, 16))), 0.1, SMALL)
    flat = fs.gradient_step(y, w, t(np.zeros((1, 16))), 0.1)[0]
    for v in range(32):
        c, rem = divmod(v, 16)
        r, col = divmod(rem, 4)
        assert g[0, c, r, col] == flat[v]


def test_gradient_step_agrees_with_solver(rng):
    w, y, s = rng.standard_normal((16, 32)), rng.standard_normal((3, 32)), rng.standard_normal((3, 16))
    net_g = gradient_step(t(y), t(w), t(s), 0.3, SMALL).reshape(3, -1).numpy()
    # same arithmetic on the same backend is bitwise identical
    assert np.array_equal(net_g, fs.gradient_step(t(y), t(w), t(s), 0.3).numpy())
    # across numpy and torch BLAS only rounding can differ
    np.testing.assert_allclose(net_g, fs.gradient_step(y, w, s, 0.3), rtol=0, atol=1e-13)


def test_st_net_zero_features():
    net = init_params(SMALL, np.random.default_rng(0))
    tau = st_net(torch.zeros(3, 16, 4, 4, dtype=torch.float64), net.stages[0])
    assert torch.equal(tau, torch.zeros(3, 16, dtype=torch.float64))


def test_st_net_zero_weights_gives_half(rng):
    net = FistaNet(SMALL)  # all zeros, BN scale 1 shift 0, running mean 0 var 1
    f = t(rng.standard_normal((5, 16, 4, 4)))
    p = f.abs().mean(dim=(2, 3))
    # BN in inference: (0 - 0) / sqrt(1 + eps) * 1 + 0 = 0, sigmoid(0) = 0.5
    torch.testing.assert_close(st_net(f, net.stages[0], "infer"), 0.5 * p, rtol=0, atol=1e-15)


def test_st_net_bound():
    net = init_params(SMALL, np.random.default_rng(0))
    stage = net.stages[0]
    gen = np.random.default_rng(2)
    for mode in ("infer", "train"):
        f = t(gen.standard_normal((1000, 16, 4, 4)) * gen.uniform(0.01, 100, (1000, 1, 1, 1)))
        tau = st_net(f, stage, mode)
        p = f.abs().mean(dim=(2, 3))
        assert torch.all(tau >= 0)
        assert torch.all(tau <= p)


def test_st_net_channel_mismatch():
    net = init_params(SMALL, np.random.default_rng(0))
    with pytest.raises(InvalidArgument):
        st_net(torch.zeros(1, 8, 4, 4, dtype=torch.float64), net.stages[0])


def test_batchnorm_running_stats_update():
    net = init_params(SMALL, np.random.default_rng(0))
    st_ = net.stages[0]
    before = st_.bn1_mean.clone()
    f = t(np.random.default_rng(1).standard_normal((8, 16, 4, 4)))
    st_net(f, st_, "infer")
    assert torch.equal(st_.bn1_mean, before)
    st_net(f, st_, "train")
    pre = torch.nn.functional.linear(f.abs().mean(dim=(2, 3)), st_.fc1_w, st_.fc1_b)
    torch.testing.assert_close(st_.bn1_mean, 0.9 * before + 0.1 * pre.mean(0).detach())


def _instance(seed, arch):
    rng = np.random.default_rng(seed)
    net = init_params(arch, rng)
    w = net.w.detach().numpy()
    return net, w, rng


@pytest.mark.parametrize("tau", [0.0, 0.05])
def test_stage_equals_fista_iteration(tau):
    arch = ArchConfig(stages=1, img_h=16, img_w=16, cr=0.25)
    net, w, rng = _instance(0, arch)
    eta = fs.default_step(w)
    embed_classical(net, eta, [0.0])
    s = w @ rng.standard_normal(512)
    y = rng.standard_normal(512)
    h, y_next, _ = stage_forward(t(y)[None], t(y)[None], t(w), t(s)[None], net.stages[0], arch,
                                 tau=classical_taus(eta, tau, 1)[0])
    ref = fs.fista_solve(w, s, fs.FistaConfig(tau=tau, eta=eta, iters=1), x0=y).final
    np.testing.assert_allclose(h[0].detach().numpy(), ref, rtol=0, atol=1e-12 * np.abs(ref).max())
    assert torch.equal(y_next, h)  # gamma = 0


def test_network_matches_fista_trace():
    arch = ArchConfig(stages=20, img_h=16, img_w=16, cr=0.25)
    net, w, rng = _instance(1, arch)
    eta = fs.default_step(w)
    _, gam = fs.shrinkage_schedule(20)
    embed_classical(net, eta, gam)
    s = w @ rng.standard_normal(512)
    tr = fs.fista_solve(w, s, fs.FistaConfig(tau=0.0, eta=eta, iters=20))
    out = network_forward(t(s), net, taus=classical_taus(eta, 0.0, 20))
    for k in range(20):
        a = out.iterates[k][0].detach().numpy()
        assert np.linalg.norm(a - tr.iterates[k]) <= 1e-10 * np.linalg.norm(tr.iterates[k])


def test_shortcut_identity_when_d_is_zero(rng):
    net, w, _ = _instance(2, SMALL)
    with torch.no_grad():
        net.stages[0].D.zero_()
    y = t(rng.standard_normal((4, 32)))
    s = t(rng.standard_normal((4, 16)))
    h, _, _ = stage_forward(y, y, net.w, s, net.stages[0], SMALL)
    g = gradient_step(y, net.w, s, net.stages[0].eta, SMALL).reshape(4, -1)
    assert torch.equal(h, g)


def test_gamma_zero_gives_y_next_h(rng):
    net, _, _ = _instance(3, SMALL)
    with torch.no_grad():
        net.stages[1].gamma.zero_()
    y = t(rng.standard_normal((2, 32)))
    h, y_next, _ = stage_forward(y, t(rng.standard_normal((2, 32))), net.w, t(rng.standard_normal((2, 16))),
                                 net.stages[1], SMALL)
    assert torch.equal(h, y_next)
    assert h.shape == (2, 32)


def test_zero_stages_returns_start(rng):
    arch = ArchConfig(stages=0, img_h=4, img_w=4, cr=0.5)
    net = init_params(arch, np.random.default_rng(0))
    x0 = t(rng.standard_normal(32))
    out = net(t(rng.standard_normal(16)), x0=x0)
    assert torch.equal(out.final[0], x0)
    assert out.iterates == []


def test_numeric_failure_carries_stage(rng):
    net, _, _ = _instance(4, SMALL)
    with torch.no_grad():
        net.stages[1].eta.fill_(float("inf"))
    with pytest.raises(NumericFailure) as info:
        net(t(rng.standard_normal((2, 16))))
    assert info.value.stage == 1


def test_bad_mode():
    net = init_params(SMALL, np.random.default_rng(0))
    with pytest.raises(InvalidArgument):
        net(torch.zeros(1, 16, dtype=torch.float64), mode="eval")


def test_warm_start_beats_zero_start_first_iterate():
    arch = ArchConfig(stages=1, img_h=16, img_w=12, cr=0.25)
    better = 0
    for seed in range(100):
        h = make_sample(GeometryConfig(), seed).h_real
        p = decompose(h, rank=4)
        net = init_params(arch, np.random.default_rng(seed))
        w = net.w.detach().numpy()
        s2 = w @ p.h2_vec
        x0 = ls_warm_start(p.h1, w, s2)
        with torch.no_grad():
            warm = net(t(s2), x0=t(x0)).final[0].numpy()
            cold = net(t(s2)).final[0].numpy()
        e_w = np.sum((warm - p.h2_vec) ** 2) / np.sum(p.h2_vec**2)
        e_c = np.sum((cold - p.h2_vec) ** 2) / np.sum(p.h2_vec**2)
        better += e_w < e_c
    assert better == 100


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 3), st.integers(0, 1000))
def test_shapes_preserved(h, w, k, seed):
    arch = ArchConfig(stages=k, img_h=h, img_w=w, cr=0.5)
    net = init_params(arch, np.random.default_rng(seed))
    x = t(np.random.default_rng(seed).standard_normal((3, arch.input_len)))
    out = net(net.encode(x), mode="train" if k else "infer")
    assert out.final.shape == (3, arch.input_len)
    assert len(out.iterates) == k


def test_per_stage_counts():
    c = count_trainable_params(preset("angular32", 0.25, 20))
    ps = c["per_stage"]
    assert ps["R"] + ps["S"] + ps["St"] + ps["D"] == 1600
    assert c["stage_total"] == 2 + 1600 + (64 + 4 + 64 + 16) + (8 + 32)
    assert c["total"] == 1_084_376


@pytest.mark.parametrize("arch", [SMALL, ArchConfig(stages=2, img_h=16, img_w=4, cr=0.25),
                                  ArchConfig(stages=4, img_h=8, img_w=8, cr=1 / 16)])
def test_accounting_matches_modules(arch):
    net = FistaNet(arch)
    n_params = sum(p.numel() for p in net.parameters())
    n_entries = sum(p.numel() for _, p, tr in net.named_entries() if tr)
    assert count_trainable_params(arch)["total"] == n_params == n_entries


def test_entry_names():
    names = [n for n, _, _ in FistaNet(ArchConfig(stages=1, img_h=2, img_w=2, cr=1)).named_entries()]
    assert names[:9] == ["encoder.w", "stage.0.eta", "stage.0.gamma", "stage.0.R", "stage.0.S.0",
                         "stage.0.S.1", "stage.0.St.0", "stage.0.St.1", "stage.0.D"]
    assert "stage.0.stnet.bn2.var" in names and len(names) == len(set(names))


def test_macc_formulas():
    arch = preset("angular32", 0.25, 20)
    assert count_macc(arch, "fista") == {"encoder": 1_048_576, "decoder": 41_943_040}
    m = count_macc(arch, "fista_net")
    assert m["decoder_conv"] == 20 * 1024 * 1600
    assert m["decoder"] == 41_943_040 + 32_768_000 + 20 * 128
    with pytest.raises(InvalidArgument):
        count_macc(arch, "tval3")
