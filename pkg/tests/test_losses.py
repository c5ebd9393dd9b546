"""Reconstruction, adversarial and diversity penalty objectives."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from coadain.exceptions import NumericError, ShapeMismatchError, ValidationError
from coadain.losses import (
    EPS_DIV,
    OCDP_CLAMP_MAX,
    LossWeights,
    adversarial_losses,
    image_recon_loss,
    latent_recon_loss,
    ocdp_loss,
    total_generator_loss,
)
from coadain.networks import StyleCodes
from helpers import assert_grad_close, central_difference


def styles_of(codes, present=None):
    codes = torch.as_tensor(codes)
    if present is None:
        present = torch.ones(codes.shape[:2], dtype=torch.bool)
    return StyleCodes(codes=codes, present=present)


class TestImageRecon:
    def test_identical_is_zero(self):
        x = torch.randn(2, 1, 4, 4)
        assert float(image_recon_loss(x, x)) == 0.0

    def test_constant_offset(self):
        x = torch.randn(1, 3, 4, 4)
        assert float(image_recon_loss(x + 0.5, x)) == pytest.approx(0.5, abs=1e-6)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(0)
        a = torch.from_numpy(rng.normal(size=(2, 1, 5, 5)))
        b = torch.from_numpy(rng.normal(size=(2, 1, 5, 5)))
        assert float(image_recon_loss(a, b)) == pytest.approx(
            np.abs(a.numpy() - b.numpy()).mean())

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            image_recon_loss(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 3, 3))


class TestLatentRecon:
    def test_identical_latents_zero(self):
        c = torch.randn(1, 4, 2, 2)
        s = styles_of(torch.randn(1, 2, 3))
        mask = torch.ones(1, 2, 4, 4) * torch.tensor([1.0, 0.0]).view(1, 2, 1, 1)
        ct, st_ = latent_recon_loss(c, c.clone(), s, styles_of(s.codes.clone()), mask)
        assert float(ct) == 0.0 and float(st_) == 0.0

    def test_absent_component_skipped(self):
        c = torch.zeros(1, 1, 2, 2)
        s1 = styles_of(torch.tensor([[[1.0, 1.0], [5.0, 5.0]]]))
        s2 = styles_of(torch.tensor([[[0.0, 0.0], [0.0, 0.0]]]))
        mask = torch.zeros(1, 2, 2, 2)
        mask[0, 0] = 1  # component 1 absent
        _, style_term = latent_recon_loss(c, c, s1, s2, mask)
        assert float(style_term) == pytest.approx(1.0)  # only component 0 counted

    def test_matches_direct_arithmetic(self):
        rng = np.random.default_rng(1)
        c1 = torch.from_numpy(rng.normal(size=(1, 2, 3, 3)))
        c2 = torch.from_numpy(rng.normal(size=(1, 2, 3, 3)))
        s1 = styles_of(torch.from_numpy(rng.normal(size=(1, 2, 4))))
        s2 = styles_of(torch.from_numpy(rng.normal(size=(1, 2, 4))))
        mask = torch.zeros(1, 2, 4, 4)
        mask[0, 0, :2] = 1
        mask[0, 1, 2:] = 1
        ct, st_ = latent_recon_loss(c1, c2, s1, s2, mask)
        assert float(ct) == pytest.approx(np.abs((c1 - c2).numpy()).mean())
        per_comp = np.abs((s1.codes - s2.codes).numpy()).mean(axis=-1)
        assert float(st_) == pytest.approx(per_comp.mean())


class TestAdversarial:
    def test_satisfied_generator(self):
        maps = [torch.ones(1, 1, 4, 4), torch.ones(1, 1, 2, 2)]
        assert float(adversarial_losses(maps, "generator")) == 0.0

    def test_zero_logits_generator(self):
        assert float(adversarial_losses([torch.zeros(1, 1, 3, 3)], "generator")) == 1.0

    def test_mixed_scales_match_oracle(self):
        rng = np.random.default_rng(2)
        maps = [torch.from_numpy(rng.normal(size=(1, 1, 4, 4))),
                torch.from_numpy(rng.normal(size=(1, 1, 2, 2)))]
        got = float(adversarial_losses(maps, "discriminator", target_real=False))
        expected = np.mean([np.mean(m.numpy() ** 2) for m in maps])
        assert got == pytest.approx(expected)

    def test_empty_list_rejected(self):
        with pytest.raises(ValidationError):
            adversarial_losses([], "generator")


class TestOcdp:
    def test_identical_outputs_clamped(self):
        out = torch.randn(1, 1, 4, 4)
        s1 = styles_of(torch.zeros(1, 2, 4))
        s2 = styles_of(torch.full((1, 2, 4), 0.25))
        mask = torch.ones(1, 4, 4)
        loss = ocdp_loss(out, out.clone(), mask, s1, s2, component=0)
        assert float(loss) == pytest.approx(min(0.25 / EPS_DIV, OCDP_CLAMP_MAX))
        assert float(loss) == OCDP_CLAMP_MAX

    def test_direct_arithmetic(self):
        out1 = torch.zeros(1, 1, 2, 2)
        out2 = torch.full((1, 1, 2, 2), 0.5)
        s1 = styles_of(torch.zeros(1, 1, 4))
        s2 = styles_of(torch.full((1, 1, 4), 0.25))
        loss = ocdp_loss(out1, out2, torch.ones(1, 2, 2), s1, s2, component=0)
        assert float(loss) == pytest.approx(0.25 / (0.5 + EPS_DIV), rel=1e-6)

    def test_linear_in_style_distance(self):
        rng = np.random.default_rng(3)
        out1 = torch.from_numpy(rng.normal(size=(1, 1, 4, 4)))
        out2 = torch.from_numpy(rng.normal(size=(1, 1, 4, 4)))
        mask = torch.ones(1, 4, 4)
        s1 = styles_of(torch.zeros(1, 1, 3, dtype=torch.float64))
        s2 = styles_of(torch.from_numpy(rng.normal(size=(1, 1, 3))))
        s2_double = styles_of(s2.codes * 2)
        l1 = float(ocdp_loss(out1, out2, mask, s1, s2))
        l2 = float(ocdp_loss(out1, out2, mask, s1, s2_double))
        assert l2 == pytest.approx(2 * l1, rel=1e-6)

    def test_empty_mask_is_absent(self):
        out = torch.randn(1, 1, 2, 2)
        s = styles_of(torch.randn(1, 1, 2))
        assert ocdp_loss(out, out, torch.zeros(1, 2, 2), s, styles_of(s.codes + 1)) is None

    def test_invariant_outside_mask(self):
        rng = np.random.default_rng(4)
        out1 = torch.from_numpy(rng.normal(size=(1, 1, 4, 4)))
        out2 = torch.from_numpy(rng.normal(size=(1, 1, 4, 4)))
        mask = torch.zeros(1, 4, 4)
        mask[0, :2] = 1
        s1 = styles_of(torch.zeros(1, 1, 2))
        s2 = styles_of(torch.ones(1, 1, 2))
        base = float(ocdp_loss(out1, out2, mask, s1, s2))
        out1_mod = out1.clone()
        out1_mod[0, 0, 2:] += 100.0
        assert float(ocdp_loss(out1_mod, out2, mask, s1, s2)) == pytest.approx(base)

    @given(d1=st.floats(0.02, 1.0), d2=st.floats(0.02, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_monotone_decreasing_in_image_distance(self, d1, d2):
        if abs(d1 - d2) < 1e-6:
            return
        mask = torch.ones(1, 2, 2)
        s1 = styles_of(torch.zeros(1, 1, 2, dtype=torch.float64))
        s2 = styles_of(torch.ones(1, 1, 2, dtype=torch.float64))
        base = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
        la = float(ocdp_loss(base, base + d1, mask, s1, s2))
        lb = float(ocdp_loss(base, base + d2, mask, s1, s2))
        assert (la > lb) == (d1 < d2)

    def test_ratio_form_when_distance_large(self):
        # with d_I > 0.01 the stabilizer changes the ratio by < 0.1% relative
        mask = torch.ones(1, 3, 3)
        s1 = styles_of(torch.zeros(1, 1, 2, dtype=torch.float64))
        s2 = styles_of(torch.full((1, 1, 2), 0.7, dtype=torch.float64))
        base = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
        loss = float(ocdp_loss(base, base + 0.011, mask, s1, s2))
        assert loss == pytest.approx(0.7 / 0.011, rel=1e-3)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        mask = torch.zeros(1, 4, 4)
        mask[0, 1:3, 1:3] = 1
        s1 = styles_of(torch.from_numpy(rng.normal(size=(1, 2, 3))))
        s2 = styles_of(torch.from_numpy(rng.normal(size=(1, 2, 3))))
        out2 = torch.from_numpy(rng.normal(size=(1, 2, 4, 4)))
        out1 = torch.from_numpy(rng.normal(size=(1, 2, 4, 4))).requires_grad_()
        ocdp_loss(out1, out2, mask, s1, s2, component=0).backward()

        def f(t):
            return float(ocdp_loss(t, out2, mask, s1, s2, component=0))

        assert_grad_close(out1.grad, central_difference(f, out1.detach()))


class TestTotals:
    def test_all_weights_zero(self):
        terms = {"a2b/adv": torch.tensor(2.0), "a2b/image_recon": torch.tensor(1.0)}
        weights = LossWeights(0, 0, 0, 0, 0)
        total, report = total_generator_loss(terms, weights)
        assert float(total) == 0.0 and report.total == 0.0

    def test_single_weight(self):
        total, _ = total_generator_loss({"a2b/ocdp": torch.tensor(3.0)},
                                        LossWeights(0, 0, 0, 0, 2.0))
        assert float(total) == 6.0

    def test_weighted_sum_matches_hand_computation(self):
        terms = {
            "a2b/image_recon": torch.tensor(0.3),
            "a2b/content_recon": torch.tensor(0.2),
            "a2b/style_recon": torch.tensor(0.1),
            "a2b/adv": torch.tensor(0.9),
            "a2b/ocdp": torch.tensor(4.0),
            "b2a/image_recon": torch.tensor(0.5),
        }
        w = LossWeights()
        total, report = total_generator_loss(terms, w)
        expected = 10 * 0.3 + 0.2 + 0.1 + 0.9 + 4.0 + 10 * 0.5
        assert float(total) == pytest.approx(expected)
        assert report.total == pytest.approx(expected)
        assert report.as_record()["generator/a2b/ocdp"] == pytest.approx(4.0)

    def test_nan_term_named(self):
        with pytest.raises(NumericError, match="a2b/adv"):
            total_generator_loss({"a2b/adv": torch.tensor(float("nan"))}, LossWeights())

    def test_negative_weight_rejected(self):
        with pytest.raises(ValidationError):
            LossWeights(w_adv=-1.0)

    def test_all_terms_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(6)
        a = torch.from_numpy(rng.normal(size=(1, 1, 4, 4)))
        b = torch.from_numpy(rng.normal(size=(1, 1, 4, 4)))
        assert float(image_recon_loss(a, b)) >= 0
        assert float(adversarial_losses([a], "generator")) >= 0
        s1 = styles_of(torch.zeros(1, 1, 2))
        s2 = styles_of(torch.ones(1, 1, 2))
        assert float(ocdp_loss(a, b, torch.ones(1, 4, 4), s1, s2)) >= 0
