import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tslr_csi.channel_sim import (
    GeometryConfig,
    PathSet,
    dft_matrix,
    from_beamspace,
    from_real_stacked,
    generate_dataset,
    make_sample,
    numeric_rank,
    sample_geometry,
    synth_channel,
    to_beamspace,
    to_real_stacked,
    ula_response,
    wrap_angle,
)
from tslr_csi.errors import InvalidArgument


def test_ula_broadside():
    np.testing.assert_allclose(ula_response(0.0, 4, 0.5), 0.5 * np.ones(4), atol=1e-15)


def test_ula_endfire_half_wavelength():
    # exp(j pi m sin(pi/2)) = (-1)^m
    np.testing.assert_allclose(ula_response(np.pi / 2, 2, 0.5), np.array([1, -1]) / np.sqrt(2), atol=1e-15)


def test_ula_unit_norm(rng):
    for a in rng.uniform(-np.pi, np.pi, 100):
        assert np.linalg.norm(ula_response(a, 16)) == pytest.approx(1.0, abs=1e-14)


def test_ula_rejects_zero_antennas():
    with pytest.raises(InvalidArgument):
        ula_response(0.1, 0)


def test_config_validation():
    with pytest.raises(InvalidArgument):
        GeometryConfig(n_rx=4, n_paths=4)
    with pytest.raises(InvalidArgument):
        GeometryConfig(angle_spread_deg=0)


def test_sample_geometry_deterministic():
    cfg = GeometryConfig()
    a = sample_geometry(cfg, np.random.default_rng(5))
    b = sample_geometry(cfg, np.random.default_rng(5))
    for x, y in zip((a.gains, a.aoa_rad, a.aod_rad), (b.gains, b.aoa_rad, b.aod_rad)):
        np.testing.assert_array_equal(x, y)


def test_gain_power_monte_carlo():
    cfg = GeometryConfig(n_rx=64, n_tx=64, n_paths=50)
    rng = np.random.default_rng(0)
    g = np.concatenate([sample_geometry(cfg, rng).gains for _ in range(2000)])
    assert g.size == 100_000
    assert np.mean(np.abs(g) ** 2) == pytest.approx(0.5, abs=0.01)
    assert np.var(g.real) == pytest.approx(0.25, abs=0.01)


def test_angle_spread_before_wrapping():
    cfg = GeometryConfig(n_rx=64, n_tx=64, n_paths=50)
    rng = np.random.default_rng(1)
    ang = np.concatenate([sample_geometry(cfg, rng, wrap=False).aoa_rad for _ in range(2000)])
    assert np.rad2deg(np.std(ang)) == pytest.approx(50.0, abs=1.0)


@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_range_and_reflection(theta):
    w = float(wrap_angle(theta))
    assert -np.pi / 2 < w <= np.pi / 2
    # reflection keeps sin(theta) when folding across +-pi/2
    assert np.sin(w) == pytest.approx(np.sin(theta), abs=1e-9)


def test_wrapped_angles_in_range(rng):
    cfg = GeometryConfig()
    for _ in range(200):
        p = sample_geometry(cfg, rng)
        assert np.all((p.aoa_rad > -np.pi / 2) & (p.aoa_rad <= np.pi / 2))


def test_single_path_rank_one():
    cfg = GeometryConfig(n_paths=1)
    h = synth_channel(PathSet(np.array([1.0 + 0j]), np.array([0.3]), np.array([-0.7])), cfg)
    assert numeric_rank(h) == 1


def test_two_path_rank_bound(rng):
    cfg = GeometryConfig()
    for _ in range(50):
        assert numeric_rank(synth_channel(sample_geometry(cfg, rng), cfg)) <= 2


def test_synth_matches_outer_product_sum(rng):
    cfg = GeometryConfig(n_rx=8, n_tx=6, n_paths=3)
    p = sample_geometry(cfg, rng)
    ref = sum(p.gains[l] * np.outer(ula_response(p.aoa_rad[l], 8), ula_response(p.aod_rad[l], 6).conj())
              for l in range(3))
    np.testing.assert_allclose(synth_channel(p, cfg), ref, atol=1e-14)


def test_synth_dimension_mismatch(rng):
    p = sample_geometry(GeometryConfig(n_paths=3), rng)
    with pytest.raises(InvalidArgument):
        synth_channel(p, GeometryConfig(n_paths=2))


def test_channel_energy_monte_carlo():
    cfg = GeometryConfig()
    rng = np.random.default_rng(3)
    e = [np.sum(np.abs(synth_channel(sample_geometry(cfg, rng), cfg)) ** 2) for _ in range(10_000)]
    assert np.mean(e) == pytest.approx(cfg.n_paths / 2, rel=0.02)


def test_dft_small_cases():
    np.testing.assert_allclose(dft_matrix(1), [[1.0]])
    d = dft_matrix(4)
    assert np.max(np.abs(d @ d.conj().T - np.eye(4))) < 1e-12
    np.testing.assert_allclose(d[:, 0], np.ones(4) / 2)


@pytest.mark.parametrize("n", [1, 2, 3, 16, 32, 64])
def test_dft_unitary(n):
    d = dft_matrix(n)
    assert np.max(np.abs(d @ d.conj().T - np.eye(n))) < 1e-12


def test_beamspace_single_entry():
    e11 = np.zeros((16, 16), complex)
    e11[1, 1] = 1.0
    h = dft_matrix(16) @ e11 @ dft_matrix(16).conj().T
    np.testing.assert_allclose(to_beamspace(h), e11, atol=1e-14)


def test_beamspace_norm_and_round_trip(rng):
    h = rng.standard_normal((16, 12)) + 1j * rng.standard_normal((16, 12))
    b = to_beamspace(h)
    assert np.linalg.norm(b) == pytest.approx(np.linalg.norm(h), rel=1e-10)
    np.testing.assert_allclose(from_beamspace(b), h, atol=1e-10)


def test_beamspace_concentrates_energy():
    cfg = GeometryConfig()
    rng = np.random.default_rng(4)
    fracs = []
    for _ in range(500):
        b = to_beamspace(synth_channel(sample_geometry(cfg, rng), cfg))
        e = np.sort(np.abs(b).ravel() ** 2)[::-1]
        fracs.append(e[: 2 * cfg.n_paths].sum() / e.sum())
    uniform = 2 * cfg.n_paths / (cfg.n_rx * cfg.n_tx)
    assert np.mean(fracs) > 20 * uniform


def test_real_stacking_layout(rng):
    h = rng.standard_normal((4, 3))
    s = to_real_stacked(h.astype(complex))
    np.testing.assert_array_equal(s[:4], h)
    np.testing.assert_array_equal(s[4:], 0)
    c = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    np.testing.assert_array_equal(from_real_stacked(to_real_stacked(c)), c)
    assert np.linalg.norm(to_real_stacked(c)) == pytest.approx(np.linalg.norm(c), rel=1e-14)


@pytest.mark.xfail(strict=True, reason="beamspace real stacking has rank L+1=3, not the quoted R=4")
def test_real_stacked_rank_four():
    cfg = GeometryConfig()
    ranks = {numeric_rank(make_sample(cfg, s).h_real) for s in range(100)}
    assert ranks == {4}


@pytest.mark.parametrize("n_rx,n_tx,n_paths", [(16, 16, 1), (16, 16, 2), (16, 16, 3), (8, 12, 2), (32, 32, 2)])
def test_real_stacked_rank_is_paths_plus_one(n_rx, n_tx, n_paths):
    cfg = GeometryConfig(n_rx=n_rx, n_tx=n_tx, n_paths=n_paths)
    ranks = {numeric_rank(make_sample(cfg, s).h_real) for s in range(50)}
    assert ranks == {n_paths + 1}


def test_spatial_real_stacking_has_rank_two_l():
    cfg = GeometryConfig()
    ranks = {numeric_rank(to_real_stacked(make_sample(cfg, s).h_complex)) for s in range(50)}
    assert ranks == {4}


def test_dft_bins_of_steering_vector_have_half_real_part(rng):
    # The identity behind the L+1 rank: sqrt(N) (D^H a)[q] = (1 - z^N) / (sqrt(N) (1 - z e^{j 2 pi q / N}))
    # with z = e^{j pi sin(a)}, and Re{1 / (1 - e^{j theta})} = 1/2 for every theta.
    n = 16
    q = np.arange(n)
    for a in rng.uniform(-1.5, 1.5, 20):
        z = np.exp(1j * np.pi * np.sin(a))
        bins = dft_matrix(n).conj().T @ (np.sqrt(n) * ula_response(a, n))
        normalized = bins * np.sqrt(n) / (1 - z**n)
        np.testing.assert_allclose(normalized, 1 / (1 - z * np.exp(2j * np.pi * q / n)), atol=1e-9)
        np.testing.assert_allclose(normalized.real, 0.5, atol=1e-9)


def test_sample_invariants():
    s = make_sample(GeometryConfig(), 11)
    assert np.linalg.norm(s.h_beam) == pytest.approx(np.linalg.norm(s.h_complex), rel=1e-10)
    np.testing.assert_array_equal(s.h_real[:16], s.h_beam.real)
    np.testing.assert_array_equal(s.h_real[16:], s.h_beam.imag)


def test_dataset_deterministic_and_seeded():
    cfg = GeometryConfig()
    a = generate_dataset(cfg, 20, 9)
    b = generate_dataset(cfg, 20, 9)
    assert a.tensors.tobytes() == b.tensors.tobytes()
    assert len(set(a.sample_seeds.tolist())) == 20
    assert generate_dataset(cfg, 20, 10).tensors.tobytes() != a.tensors.tobytes()
    assert a.params["rank"] == 3
    # sample i depends only on (master_seed, i)
    np.testing.assert_array_equal(generate_dataset(cfg, 5, 9).tensors, a.tensors[:5])
    np.testing.assert_array_equal(a.tensors[3].reshape(32, 16), make_sample(cfg, int(a.sample_seeds[3])).h_real)


def test_dataset_rejects_empty():
    with pytest.raises(InvalidArgument):
        generate_dataset(GeometryConfig(), 0, 1)


def test_full_training_set_size_rank_invariant():
    cfg = GeometryConfig()
    ds = generate_dataset(cfg, 10066, 2024, keep_samples=True)
    assert len(ds) == 10066
    for s in ds.samples:
        sv = np.linalg.svd(s.h_complex, compute_uv=False)
        assert sv[cfg.n_paths] < 1e-8 * sv[0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rank_and_norm_properties(seed):
    s = make_sample(GeometryConfig(), seed)
    sv = np.linalg.svd(s.h_complex, compute_uv=False)
    assert np.all(sv[2:] < 1e-8 * sv[0])
    assert numeric_rank(s.h_real) <= 4
    assert np.linalg.norm(s.h_real) == pytest.approx(np.linalg.norm(s.h_complex), rel=1e-10)
