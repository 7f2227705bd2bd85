import pytest
import torch

from core.errors import ConfigurationError, ContractError
from features.patching import (
    PatchGrid,
    SubsetMask,
    apply_mask,
    complement,
    k_from_pixel_fraction,
    make_grid,
    mask_to_pixel_map,
    pixel_fraction,
    stack_masks,
)


class TestGrid:
    def test_mnist_grid(self, grid28):
        assert grid28.grid_dims == (7, 7)
        assert grid28.d == 49
        assert grid28.patch_area == 16

    def test_indivisible_rejected(self):
        with pytest.raises(ConfigurationError, match="not divisible"):
            make_grid((1, 28, 28), (5, 5))

    def test_row_major_bounds(self, grid28):
        rows, cols = grid28.patch_bounds(8)
        assert (rows.start, rows.stop, cols.start, cols.stop) == (4, 8, 4, 8)
        with pytest.raises(ContractError):
            grid28.patch_bounds(49)

    def test_dict_round_trip(self, grid16):
        assert PatchGrid.from_dict(grid16.to_dict()) == grid16


class TestMasks:
    def test_complement_reconstructs_image_exactly(self, grid28):
        gen = torch.Generator().manual_seed(0)
        x = torch.rand((1, 28, 28), generator=gen)
        for _ in range(100):
            m = SubsetMask((torch.rand(49, generator=gen) < 0.5).float())
            assert torch.equal(apply_mask(x, m, grid28) + apply_mask(x, complement(m), grid28), x)

    def test_all_ones_and_all_zeros(self, grid16):
        x = torch.rand((1, 16, 16))
        assert torch.equal(apply_mask(x, SubsetMask.ones(16), grid16), x)
        assert torch.count_nonzero(apply_mask(x, SubsetMask(torch.zeros(16)), grid16)) == 0

    def test_single_patch_covers_its_pixels(self, grid28):
        m = SubsetMask.from_indices(49, [8])
        pix = mask_to_pixel_map(m, grid28)
        assert pix.shape == (28, 28)
        assert pix.sum().item() == 16
        assert pix[4:8, 4:8].min().item() == 1.0

    def test_batch_masks(self, grid16):
        x = torch.rand((3, 1, 16, 16))
        masks = stack_masks([SubsetMask.from_indices(16, [i]) for i in range(3)])
        out = apply_mask(x, masks, grid16)
        for i in range(3):
            rows, cols = grid16.patch_bounds(i)
            assert torch.equal(out[i, :, rows, cols], x[i, :, rows, cols])
            assert out[i].sum().item() == pytest.approx(x[i, :, rows, cols].sum().item(), rel=1e-6)

    def test_gradient_wrt_mask_is_patch_sum(self, grid16):
        x = torch.rand((1, 16, 16))
        z = torch.full((16,), 0.5, requires_grad=True)
        apply_mask(x, z, grid16).sum().backward()
        for i in (0, 5, 15):
            rows, cols = grid16.patch_bounds(i)
            assert z.grad[i].item() == pytest.approx(x[:, rows, cols].sum().item(), rel=1e-6)

    def test_channels_share_the_mask(self):
        grid = make_grid((3, 8, 8), (4, 4))
        x = torch.ones((3, 8, 8))
        out = apply_mask(x, SubsetMask.from_indices(4, [3]), grid)
        assert torch.equal(out[:, 4:, 4:], torch.ones((3, 4, 4)))
        assert out.sum().item() == 48

    def test_wrong_length_rejected(self, grid16):
        with pytest.raises(ContractError):
            apply_mask(torch.rand((1, 16, 16)), torch.ones(15), grid16)

    def test_wrong_image_shape_rejected(self, grid16):
        with pytest.raises(ContractError):
            apply_mask(torch.rand((1, 28, 28)), torch.ones(16), grid16)

    def test_kind_checks(self):
        with pytest.raises(ContractError):
            SubsetMask(torch.tensor([0.0, 0.5]), "hard")
        with pytest.raises(ContractError):
            SubsetMask(torch.tensor([0.0, 1.5]), "relaxed")
        with pytest.raises(ContractError):
            complement(SubsetMask(torch.tensor([0.2, 0.8]), "relaxed"))

    def test_indices(self):
        m = SubsetMask.from_indices(5, [3, 1])
        assert m.indices() == (1, 3)
        assert complement(m).indices() == (0, 2, 4)


class TestPixelFraction:
    def test_fraction_of_k(self, grid28):
        assert pixel_fraction(grid28, 4) == pytest.approx(64 / 784)

    @pytest.mark.parametrize("fraction,k", [(0.2, 13), (0.3, 19), (0.4, 26)])
    def test_cifar_fractions(self, fraction, k):
        grid = make_grid((3, 32, 32), (4, 4))
        assert k_from_pixel_fraction(grid, fraction) == k

    def test_fraction_out_of_range(self, grid16):
        with pytest.raises(ConfigurationError):
            k_from_pixel_fraction(grid16, 0.0)
