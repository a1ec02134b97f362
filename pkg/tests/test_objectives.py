import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from can_ssl.model import NonFiniteError
from can_ssl.objectives import LossWeights, denoise_loss, info_nce, loss_report, recon_loss

import oracles


def _unit(g, n, r):
    x = g.standard_normal((n, r))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@settings(max_examples=50)
@given(st.integers(1, 5), st.integers(2, 6), st.floats(0.05, 2.0), st.integers(0, 2**31))
def test_info_nce_matches_oracle(n, r, tau, seed):
    g = np.random.default_rng(seed)
    u1, u2 = _unit(g, n, r), _unit(g, n, r)
    got = info_nce(torch.from_numpy(u1), torch.from_numpy(u2), tau).item()
    assert got == pytest.approx(oracles.info_nce(u1, u2, tau), abs=1e-9)


def test_info_nce_hand_value():
    # two images, both views identical and orthogonal across images:
    # each anchor sees its positive at 1/tau and two negatives at 0
    e = torch.eye(2, dtype=torch.float64)
    tau = 0.1
    expected = math.log(math.exp(1 / tau) + 2) - 1 / tau
    assert info_nce(e, e, tau).item() == pytest.approx(expected, rel=1e-12)


def test_info_nce_single_image_is_zero():
    u = torch.tensor([[0.6, 0.8]], dtype=torch.float64)
    v = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    assert info_nce(u, v, 0.1).item() == pytest.approx(0.0, abs=1e-12)


def test_info_nce_symmetric_in_views(rng):
    u1, u2 = torch.from_numpy(_unit(rng, 4, 3)), torch.from_numpy(_unit(rng, 4, 3))
    assert info_nce(u1, u2).item() == pytest.approx(info_nce(u2, u1).item(), rel=1e-12)


def test_info_nce_input_checks():
    with pytest.raises(ValueError, match="unit-norm"):
        info_nce(torch.ones(2, 3), torch.ones(2, 3))
    with pytest.raises(ValueError):
        info_nce(torch.eye(2), torch.eye(3))
    with pytest.raises(ValueError):
        info_nce(torch.eye(2), torch.eye(2), tau=0)


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**31))
def test_recon_and_denoise_match_oracle(T, P, seed):
    g = np.random.default_rng(seed)
    clean, noise, xhat = g.standard_normal((3, T, P))
    bits = g.random(T) < 0.5
    assert recon_loss(torch.from_numpy(clean), torch.from_numpy(xhat), bits).item() == pytest.approx(
        oracles.masked_mse(clean, xhat, bits), abs=1e-12)
    assert denoise_loss(torch.from_numpy(noise), torch.from_numpy(xhat), bits).item() == pytest.approx(
        oracles.masked_mse(noise, xhat, ~bits), abs=1e-12)


def test_losses_only_see_their_patches(rng):
    clean = torch.from_numpy(rng.standard_normal((4, 3)))
    xhat = clean.clone()
    bits = np.array([True, False, True, False])
    xhat[1] += 5.0  # an unmasked patch: reconstruction ignores it
    assert recon_loss(clean, xhat, bits).item() == 0.0
    assert denoise_loss(clean, xhat, bits).item() == pytest.approx(25.0 * 3 / 6)


def test_empty_selection_is_zero():
    x = torch.ones(3, 2)
    assert recon_loss(x, 2 * x, np.zeros(3, bool)).item() == 0.0
    assert denoise_loss(x, 2 * x, np.ones(3, bool)).item() == 0.0


def test_batched_losses_are_per_sample(rng):
    clean, xhat = torch.from_numpy(rng.standard_normal((2, 2, 3, 5, 4)))
    bits = rng.random((2, 3, 5)) < 0.5
    bits[..., 0] = True
    out = recon_loss(clean, xhat, bits)
    assert out.shape == (2, 3)
    for v in range(2):
        for i in range(3):
            assert out[v, i].item() == pytest.approx(oracles.masked_mse(clean[v, i], xhat[v, i], bits[v, i]))


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        recon_loss(torch.zeros(3, 2), torch.zeros(3, 3), np.zeros(3, bool))
    with pytest.raises(ValueError):
        recon_loss(torch.zeros(3, 2), torch.zeros(3, 2), np.zeros(4, bool))


@given(st.floats(0, 1), st.floats(0, 1))
def test_weights_are_a_convex_combination(li, lam):
    w = LossWeights(li, lam).as_tuple()
    assert all(x >= 0 for x in w)
    assert abs(sum(w) - 1.0) <= math.ulp(1.0)


def test_weight_values():
    w = LossWeights(0.03, 0.5)
    assert w.as_tuple() == pytest.approx((0.03, 0.485, 0.485))
    assert LossWeights(1.0, 0.3).as_tuple() == (1.0, 0.0, 0.0)
    assert LossWeights(0.0, 1.0).as_tuple() == (0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        LossWeights(1.2, 0.5)
    with pytest.raises(ValueError):
        LossWeights(0.5, -0.1)


class _Batch:
    def __init__(self, g, V=2, n=3, T=4, P=6):
        self.clean = torch.from_numpy(g.standard_normal((V, n, T, P)))
        self.noise = torch.from_numpy(0.05 * g.standard_normal((V, n, T, P)))
        self.masks = torch.from_numpy(np.tile([True, False, True, False], (V, n, 1)))


def test_loss_report_combines_terms(rng):
    batch = _Batch(rng)
    u = torch.from_numpy(np.stack([_unit(rng, 3, 4), _unit(rng, 3, 4)]))
    xhat = torch.from_numpy(rng.standard_normal((2, 3, 4, 6)))
    w = LossWeights(0.2, 0.25)
    rep = loss_report(batch, {"u": u, "xhat": xhat}, w, tau=0.5)
    nce = oracles.info_nce(u[0], u[1], 0.5)
    rec = np.mean([[oracles.masked_mse(batch.clean[v, i], xhat[v, i], batch.masks[v, i].numpy())
                    for i in range(3)] for v in range(2)])
    den = np.mean([[oracles.masked_mse(batch.noise[v, i], xhat[v, i], ~batch.masks[v, i].numpy())
                    for i in range(3)] for v in range(2)])
    assert rep.l_infonce.item() == pytest.approx(nce)
    assert rep.l_rec.item() == pytest.approx(rec)
    assert rep.l_denoise.item() == pytest.approx(den)
    assert rep.l_total.item() == pytest.approx(0.2 * nce + 0.8 * 0.25 * rec + 0.8 * 0.75 * den)


def test_zero_weight_terms_are_reported_not_summed(rng):
    batch = _Batch(rng)
    u = torch.from_numpy(np.stack([_unit(rng, 3, 4), _unit(rng, 3, 4)]))
    xhat = torch.from_numpy(rng.standard_normal((2, 3, 4, 6)))
    rep = loss_report(batch, {"u": u, "xhat": xhat}, LossWeights(1.0, 0.5))
    assert rep.l_total.item() == pytest.approx(rep.l_infonce.item())
    assert rep.l_rec is not None and rep.as_floats()["l_rec"] == pytest.approx(rep.l_rec.item())


def test_missing_branch_with_weight_raises(rng):
    with pytest.raises(ValueError, match="l_rec"):
        loss_report(_Batch(rng), {"u": None, "xhat": None}, LossWeights(0.0, 1.0))


def test_non_finite_term_is_named(rng):
    batch = _Batch(rng)
    xhat = torch.full((2, 3, 4, 6), float("nan"), dtype=torch.float64)
    with pytest.raises(NonFiniteError) as e:
        loss_report(batch, {"xhat": xhat}, LossWeights(0.0, 1.0))
    assert e.value.where == "l_rec"
