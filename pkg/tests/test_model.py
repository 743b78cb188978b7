import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdrdiv.model import (
    ChannelConfig, apply_channel, db_to_rho, draw_channel, embed_complex,
    instances_from_words, rho_to_db, synthesize,
)
from sdrdiv.numerics import RngStream


class StubStream:
    """Returns fixed normals regardless of the requested count."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def normal(self, count):
        return self.values[:count]


def test_snr_convention():
    assert db_to_rho(20) == pytest.approx(100.0)
    assert rho_to_db(1000.0) == pytest.approx(30.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(0, 2)
    with pytest.raises(ValueError):
        ChannelConfig(2, 2, normalization="bogus")
    cfg = ChannelConfig(2, 3, complex=True)
    assert (cfg.real_n, cfg.real_m) == (4, 6)
    assert cfg.words_per_instance % 4 == 0


def test_embed_complex_examples():
    np.testing.assert_array_equal(embed_complex([[1 + 1j]]), [[1, -1], [1, 1]])
    np.testing.assert_array_equal(embed_complex([[0j]]), np.zeros((2, 2)))
    np.testing.assert_array_equal(embed_complex([1 + 2j, 3 - 1j]), [1, 3, 2, -1])


def test_embed_complex_norm_and_structure():
    rng = np.random.default_rng(8)
    Hc = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    R = embed_complex(Hc)
    assert abs(np.sum(R ** 2) - 2 * np.sum(np.abs(Hc) ** 2)) <= 1e-12
    np.testing.assert_array_equal(R[:2, :2], R[2:, 2:])
    np.testing.assert_array_equal(R[:2, 2:], -R[2:, :2])


def test_embedding_preserves_products():
    rng = np.random.default_rng(9)
    Hc = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    sc = rng.choice([-1, 1], 2) + 1j * rng.choice([-1, 1], 2)
    np.testing.assert_allclose(embed_complex(Hc) @ embed_complex(sc), embed_complex(Hc @ sc), atol=1e-14)


def test_draw_channel_scalar_unit_variance():
    H = draw_channel(ChannelConfig(1, 1, normalization="unit-variance"), StubStream([0.37]))
    assert H.shape == (1, 1) and H[0, 0] == 0.37


def test_draw_channel_complex_stub():
    # variance 1/n = 1 split over two parts: normals sqrt(2), sqrt(2) give 1 + j
    H = draw_channel(ChannelConfig(1, 1, complex=True), StubStream([np.sqrt(2), np.sqrt(2)]))
    np.testing.assert_allclose(H, [[1, -1], [1, 1]], rtol=1e-15)


def test_column_energy_per_column_normalization():
    cfg = ChannelConfig(2, 2)
    s = RngStream(1, 2)
    H = np.array([draw_channel(cfg, s) for _ in range(10 ** 5)])
    energy = np.mean(np.sum(H ** 2, axis=1), axis=0)
    np.testing.assert_allclose(energy, 1.0, atol=0.03)


def test_noiseless_and_deterministic():
    cfg = ChannelConfig(3, 2)
    inst = synthesize(cfg, 1e12, RngStream(4, 4))
    assert np.linalg.norm(inst.y - inst.H @ inst.s) <= 1e-4 * np.sqrt(3)
    again = synthesize(cfg, 1e12, RngStream(4, 4))
    for a, b in zip((inst.H, inst.s, inst.v, inst.y), (again.H, again.s, again.v, again.y)):
        np.testing.assert_array_equal(a, b)
    assert inst.seed == {"seed": 4, "stream_id": 4, "position": 0}
    with pytest.raises(ValueError):
        synthesize(cfg, 0.0, RngStream(1))


def test_symbol_frequencies():
    cfg = ChannelConfig(4, 4)
    W = cfg.words_per_instance
    words = RngStream(6, 1).words(10 ** 5 * W).reshape(-1, W)
    _, s, _, _ = instances_from_words(cfg, 10.0, words)
    assert set(np.unique(s)) == {-1.0, 1.0}
    np.testing.assert_allclose(np.mean(s > 0, axis=0), 0.5, atol=0.01)


def test_noise_variance_real_and_complex():
    for cfg, per_part in ((ChannelConfig(2, 2), 0.1), (ChannelConfig(2, 2, complex=True), 0.05)):
        W = cfg.words_per_instance
        words = RngStream(8, 2).words(50000 * W).reshape(-1, W)
        _, _, v, _ = instances_from_words(cfg, 10.0, words)
        assert np.var(v) == pytest.approx(per_part, rel=0.02)


def test_batch_noise_is_exact_residual_of_fixed_order_product():
    cfg = ChannelConfig(3, 4)
    W = cfg.words_per_instance
    H, s, v, y = instances_from_words(cfg, 2.0, RngStream(1, 3).words(500 * W).reshape(500, W))
    np.testing.assert_array_equal(y - apply_channel(H, s), v)


def test_batch_matches_single_synthesis():
    cfg = ChannelConfig(2, 3, complex=True)
    W = cfg.words_per_instance
    batch = instances_from_words(cfg, 5.0, RngStream(9, 9).words(4 * W).reshape(4, W))
    for t in range(4):
        inst = synthesize(cfg, 5.0, RngStream(9, 9, t * W))
        np.testing.assert_array_equal(inst.H, batch[0][t])
        np.testing.assert_array_equal(inst.s, batch[1][t])
        np.testing.assert_allclose(inst.y, batch[3][t], rtol=0, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.booleans(), st.floats(-30, 60), st.integers(0, 2 ** 32))
def test_noise_is_exact_residual(n, m, cplx, snr_db, seed):
    cfg = ChannelConfig(n, m, complex=cplx)
    inst = synthesize(cfg, float(db_to_rho(snr_db)), RngStream(seed))
    np.testing.assert_array_equal(inst.y - inst.H @ inst.s, inst.v)
    assert set(np.unique(inst.s)) <= {-1.0, 1.0}
    if cplx:
        H = inst.H
        np.testing.assert_array_equal(H[:n, :m], H[n:, m:])
        np.testing.assert_array_equal(H[:n, m:], -H[n:, :m])
