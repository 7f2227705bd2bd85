import numpy as np
import pytest
import torch

from blackbox import ClassifierModel, parameter_hash, reference_descriptor
from core.config import SamplerConfig, SelectorTrainConfig
from core.errors import ContractError
from features.patching import SubsetMask
from features.sampler import make_generator, relaxed_mhot, sample_gumbel
from selector import (
    SelectorModel,
    causal_loss,
    explain,
    explain_batch,
    explanation_from_scores,
    importance_scores,
    train_selector,
)


@pytest.fixture
def blackbox():
    torch.manual_seed(0)
    return ClassifierModel(reference_descriptor(2, [4]), 2, (1, 16, 16))


def _cfg(**kw):
    base = dict(epochs=1, batch_size=32, learning_rate=1e-2, hidden_channels=4, seed=0)
    base.update(kw)
    return SelectorTrainConfig(**base)


class TestSelectorNetwork:
    def test_scores_shape(self, grid16):
        sel = SelectorModel(grid16, k=4, hidden_channels=4)
        assert importance_scores(sel, torch.rand(3, 1, 16, 16)).shape == (3, 16)
        assert importance_scores(sel, torch.rand(1, 16, 16)).shape == (16,)

    def test_untrained_scores_tie_to_last_patches(self, grid16):
        # última capa en cero: todos los puntajes iguales, se conservan los de menor índice
        sel = SelectorModel(grid16, k=4, hidden_channels=4)
        assert explain(sel, torch.rand(1, 16, 16)).indices() == (12, 13, 14, 15)

    def test_explain_rejects_batches(self, grid16):
        with pytest.raises(ContractError):
            explain(SelectorModel(grid16, k=4), torch.rand(2, 1, 16, 16))


class TestExplanation:
    def test_complement_of_top_keep(self):
        scores = torch.tensor([5.0, 1.0, 4.0, 2.0, 3.0])
        assert explanation_from_scores(scores, 2).indices() == (1, 3)

    def test_k_bounds(self):
        assert explanation_from_scores(torch.randn(5), 5).values.sum() == 5
        with pytest.raises(ContractError):
            explanation_from_scores(torch.randn(5), 0)

    def test_batch_is_exactly_k_hot(self, grid16):
        sel = SelectorModel(grid16, k=3, hidden_channels=4)
        with torch.no_grad():
            sel.net[-1].weight.normal_()
        out = explain_batch(sel, torch.rand(10, 1, 16, 16), batch_size=4)
        assert out.values.shape == (10, 16)
        assert torch.equal(out.values.sum(dim=-1), torch.full((10,), 3.0))

    def test_deterministic(self, grid16):
        sel = SelectorModel(grid16, k=3, hidden_channels=4)
        with torch.no_grad():
            sel.net[-1].weight.normal_()
        x = torch.rand(1, 16, 16)
        assert explain(sel, x).indices() == explain(sel, x).indices()


class TestCausalLoss:
    def test_keep_all_is_negative_entropy(self, blackbox, grid16):
        x = torch.rand(6, 1, 16, 16)
        p = blackbox.predict_proba(x)
        loss = causal_loss(blackbox, x, torch.ones(6, 16), grid=grid16)
        assert loss.item() == pytest.approx((p * torch.log(p)).sum(dim=-1).mean().item(), rel=1e-5)

    def test_gradient_flows_only_through_mask(self, blackbox, grid16):
        blackbox.freeze()
        z = torch.full((4, 16), 0.5, requires_grad=True)
        loss = causal_loss(blackbox, torch.rand(4, 1, 16, 16), z, grid=grid16)
        loss.backward()
        assert z.grad is not None and torch.isfinite(z.grad).all()
        assert all(p.grad is None for p in blackbox.parameters())

    def test_clamp_keeps_loss_finite(self, constant_model, grid16):
        model = type(constant_model)(probs=(1.0, 0.0))
        loss = causal_loss(model, torch.rand(2, 1, 16, 16), SubsetMask(torch.full((2, 16), 0.5), "relaxed"), 1e-8, grid16)
        assert torch.isfinite(loss)

    def test_count_mismatch(self, blackbox, grid16):
        with pytest.raises(ContractError):
            causal_loss(blackbox, torch.rand(4, 1, 16, 16), torch.ones(3, 16), grid=grid16)


class TestTraining:
    def test_blackbox_untouched(self, blackbox, bars, grid16):
        before = parameter_hash(blackbox)
        flags = [p.requires_grad for p in blackbox.parameters()]
        train_selector(blackbox, bars, grid16, 4, _cfg())
        assert parameter_hash(blackbox) == before
        assert [p.requires_grad for p in blackbox.parameters()] == flags

    def test_history(self, blackbox, bars, grid16):
        sel = train_selector(blackbox, bars, grid16, 4, _cfg(epochs=2))
        assert len(sel.history) == 4  # 64 muestras / 32 por lote, 2 épocas
        assert set(sel.history[0]) == {"epoch", "step", "loss", "temperature"}
        assert all(np.isfinite(h["loss"]) for h in sel.history)
        assert not sel.training

    def test_same_seed_same_selector(self, blackbox, bars, grid16):
        a = train_selector(blackbox, bars, grid16, 4, _cfg())
        b = train_selector(blackbox, bars, grid16, 4, _cfg())
        assert parameter_hash(a) == parameter_hash(b)

    def test_annealing_lowers_temperature(self, blackbox, bars, grid16):
        sel = train_selector(blackbox, bars, grid16, 4, _cfg(epochs=2, anneal_rate=0.5, min_temperature=0.2))
        temps = [h["temperature"] for h in sel.history]
        assert temps[0] == 0.5
        assert temps == sorted(temps, reverse=True)
        assert temps[-1] >= 0.2

    @pytest.mark.parametrize("k", [0, 16])
    def test_k_must_leave_something_out(self, blackbox, bars, grid16, k):
        with pytest.raises(ContractError, match="1 <= k < d"):
            train_selector(blackbox, bars, grid16, k, _cfg())

    def test_shape_mismatch(self, bars, grid16):
        other = ClassifierModel(reference_descriptor(2, [4]), 2, (1, 28, 28))
        with pytest.raises(ContractError, match="shape mismatch"):
            train_selector(other, bars, grid16, 4, _cfg())


def _relaxed_loss(selector, model, x, grid, k, seed=123):
    d = grid.d
    noise = sample_gumbel((x.shape[0], d - k, d), make_generator(seed))
    with torch.no_grad():
        z = relaxed_mhot(selector(x), noise, SamplerConfig(temperature=0.5, m=d - k))
        return causal_loss(model, x, z, grid=grid).item()


class TestLearning:
    @pytest.fixture
    def trained(self, patch0_model, make_patch0, grid16):
        data = make_patch0(256, seed=0)
        sel = train_selector(patch0_model, data, grid16, 1, SelectorTrainConfig(epochs=20, learning_rate=1e-2))
        return sel, torch.from_numpy(np.array(data.images))

    def test_bright_images_explained_by_patch0(self, trained):
        sel, x = trained
        out = explain_batch(sel, x[0::2])
        assert torch.equal(out.values.sum(dim=-1), torch.ones(x[0::2].shape[0]))
        assert out.values[:, 0].mean().item() >= 0.95

    def test_training_lowers_the_causal_loss(self, trained, patch0_model, grid16):
        sel, x = trained
        untrained = SelectorModel(grid16, 1, sel.hidden_channels)
        assert _relaxed_loss(sel, patch0_model, x, grid16, 1) < _relaxed_loss(untrained, patch0_model, x, grid16, 1)
