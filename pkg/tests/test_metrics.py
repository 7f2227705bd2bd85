import json

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from core.errors import ContractError
from features.baselines import random_explanations
from features.metrics import (
    EvaluationReport,
    average_causal_effect,
    evaluate_explanations,
    ice_values,
    individual_causal_effect,
    post_hoc_accuracy,
    post_hoc_indicators,
)
from features.patching import SubsetMask


def _same(n: int, d: int, indices) -> SubsetMask:
    return SubsetMask(SubsetMask.from_indices(d, indices).values.expand(n, -1).clone())


class TestPostHocAccuracy:
    def test_explanation_on_the_decisive_patch(self, patch0_model, patch0_data, grid16):
        assert post_hoc_accuracy(patch0_model, patch0_data, _same(40, 16, [0]), grid16) == 1.0

    def test_explanation_missing_the_decisive_patch(self, patch0_model, patch0_data, grid16):
        ind = post_hoc_indicators(patch0_model, patch0_data, _same(40, 16, [1]), grid16)
        # imágenes con parche 0 encendido cambian de clase; las oscuras no
        assert ind.tolist() == [0, 1] * 20
        assert post_hoc_accuracy(patch0_model, patch0_data, _same(40, 16, [1]), grid16) == 0.5

    def test_constant_model_ties_break_to_first_class(self, constant_model, patch0_data, grid16):
        masks = random_explanations(16, 3, 40, np.random.default_rng(0))
        assert post_hoc_accuracy(constant_model, patch0_data, masks, grid16) == 1.0

    def test_count_mismatch(self, patch0_model, patch0_data, grid16):
        with pytest.raises(ContractError):
            post_hoc_accuracy(patch0_model, patch0_data, _same(39, 16, [0]), grid16)

    def test_rows_must_share_k(self, patch0_model, patch0_data, grid16):
        masks = _same(40, 16, [0]).values.clone()
        masks[5, 7] = 1.0
        with pytest.raises(ContractError, match="exactly 1-hot"):
            post_hoc_accuracy(patch0_model, patch0_data, SubsetMask(masks), grid16)


class TestCausalEffect:
    def test_dark_images_have_zero_effect(self, patch0_model, patch0_data, grid16):
        ice = ice_values(patch0_model, patch0_data, _same(40, 16, [0]), grid16, np.random.default_rng(0))
        assert np.all(ice[1::2] == 0.0)
        assert np.all(ice[0::2] >= 0.0)
        assert ice[0::2].mean() > 0.3

    def test_full_explanation_has_zero_effect(self, patch0_model, patch0_data, grid16):
        ace = average_causal_effect(
            patch0_model, patch0_data, SubsetMask.ones(16, 40), grid16, np.random.default_rng(1)
        )
        assert ace == 0.0

    def test_constant_model(self, constant_model, patch0_data, grid16):
        ice = ice_values(constant_model, patch0_data, _same(40, 16, [3]), grid16, np.random.default_rng(2))
        assert np.all(ice == 0.0)

    def test_random_explanations_average_to_zero(self, patch0_model, grid16, make_patch0):
        data = make_patch0(400, seed=3)
        rng = np.random.default_rng(4)
        masks = random_explanations(16, 1, 400, rng)
        assert abs(average_causal_effect(patch0_model, data, masks, grid16, rng)) < 0.03

    def test_seeded_rng_is_reproducible(self, patch0_model, patch0_data, grid16):
        masks = _same(40, 16, [0])
        a = ice_values(patch0_model, patch0_data, masks, grid16, np.random.default_rng(5), repeats=3)
        b = ice_values(patch0_model, patch0_data, masks, grid16, np.random.default_rng(5), repeats=3)
        np.testing.assert_array_equal(a, b)

    def test_single_instance_matches_batch(self, patch0_model, patch0_data, grid16):
        expl = SubsetMask.from_indices(16, [0, 4])
        single = individual_causal_effect(patch0_model, patch0_data[0], expl, grid16, np.random.default_rng(6))
        images = torch.from_numpy(np.array(patch0_data.images[:1]))
        batch = ice_values(patch0_model, images, [expl], grid16, np.random.default_rng(6))
        assert single == batch[0]

    def test_repeats_must_be_positive(self, patch0_model, patch0_data, grid16):
        with pytest.raises(ContractError):
            ice_values(patch0_model, patch0_data, _same(40, 16, [0]), grid16, np.random.default_rng(0), repeats=0)


class TestReport:
    def test_evaluate_builds_consistent_report(self, patch0_model, patch0_data, grid16):
        report = evaluate_explanations(
            patch0_model,
            patch0_data,
            _same(40, 16, [1]),
            grid16,
            method="fixed",
            dataset_name="patch0",
            k=1,
            seed=0,
            config={"k": [1]},
        )
        assert report.n == 40 and report.d == 16
        assert report.post_hoc_accuracy == 0.5
        assert report.ace == pytest.approx(float(np.mean(report.ice)))
        raw = json.loads(report.to_json())
        assert raw["config"] == {"k": [1]}
        assert set(raw["timestamps"]) == {"started", "finished"}

    def test_same_seed_same_numbers(self, patch0_model, patch0_data, grid16):
        kw = dict(method="fixed", dataset_name="patch0", k=1, seed=7)
        a = evaluate_explanations(patch0_model, patch0_data, _same(40, 16, [0]), grid16, **kw)
        b = evaluate_explanations(patch0_model, patch0_data, _same(40, 16, [0]), grid16, **kw)
        assert a.model_dump(exclude={"timestamps"}) == b.model_dump(exclude={"timestamps"})

    def test_inconsistent_report_rejected(self):
        with pytest.raises(ValidationError):
            EvaluationReport(
                method="causal", dataset="x", k=1, seed=0, d=4, n=2,
                post_hoc_accuracy=1.0, ace=0.0, post_hoc_indicators=[1, 0], ice=[0.0, 0.0], repeats=4,
            )


def _sparse_images(n: int, seed: int) -> torch.Tensor:
    """Mitad densas (clase 0 predicha por KeptPixelsModel), mitad ralas (clase 1)."""
    rng = np.random.default_rng(seed)
    density = np.where(np.arange(n) % 2 == 0, 0.75, 0.25)[:, None, None, None]
    on = rng.uniform(size=(n, 1, 16, 16)) < density
    values = rng.uniform(0.1, 1.0, size=(n, 1, 16, 16))
    return torch.from_numpy(np.where(on, values, 0.0).astype(np.float32))


def _kept_fraction(nonzero: np.ndarray, mask: np.ndarray, grid) -> float:
    kept = sum(nonzero[grid.patch_bounds(j)].sum() for j in np.flatnonzero(mask))
    return kept / nonzero.size


class _Rescaled:
    """Transformación estrictamente creciente aplicada a todas las probabilidades."""

    def __init__(self, model, transform):
        self.model = model
        self.transform = transform
        self.input_shape = model.input_shape
        self.num_classes = 2

    def predict_proba(self, images):
        return self.transform(self.model.predict_proba(images))


class TestMetricProperties:
    @pytest.mark.parametrize(
        "transform",
        [
            lambda p: p ** 3 / (p ** 3).sum(dim=-1, keepdim=True),
            lambda p: 0.5 * p + 0.25,
            lambda p: torch.log1p(10.0 * p),
        ],
    )
    def test_post_hoc_accuracy_ignores_monotone_rescaling(self, patch0_model, grid16, make_patch0, transform):
        data = make_patch0(60, seed=11)
        masks = random_explanations(16, 2, 60, np.random.default_rng(12))
        expected = post_hoc_accuracy(patch0_model, data, masks, grid16)
        assert 0.0 < expected < 1.0
        assert post_hoc_accuracy(_Rescaled(patch0_model, transform), data, masks, grid16) == expected

    def test_ice_matches_kept_pixel_closed_form(self, kept_pixels_model, grid16):
        n, k, repeats = 12, 3, 4
        images = _sparse_images(n, seed=13)
        masks = random_explanations(16, k, n, np.random.default_rng(14))
        ice = ice_values(kept_pixels_model, images, masks, grid16, np.random.default_rng(15), repeats=repeats)

        # mismos sorteos que ice_values: orden instancia-mayor
        draws = random_explanations(16, k, n * repeats, np.random.default_rng(15)).values.numpy()
        for i in range(n):
            nonzero = images[i, 0].numpy() != 0
            y_star = 0 if nonzero.mean() >= 0.5 else 1
            sign = 1.0 if y_star == 0 else -1.0
            expl = _kept_fraction(nonzero, masks.values[i].numpy(), grid16)
            rand = np.mean([_kept_fraction(nonzero, draws[i * repeats + r], grid16) for r in range(repeats)])
            assert ice[i] == pytest.approx(sign * (expl - rand), abs=1e-9)
        assert np.any(ice != 0.0)

    def test_ice_is_bounded(self, kept_pixels_model, patch0_model, patch0_data, grid16):
        rng = np.random.default_rng(16)
        images = _sparse_images(20, seed=17)
        for model, data, n in ((kept_pixels_model, images, 20), (patch0_model, patch0_data, 40)):
            for k in (1, 8, 15):
                ice = ice_values(model, data, random_explanations(16, k, n, rng), grid16, rng)
                assert np.all(ice >= -1.0) and np.all(ice <= 1.0)
