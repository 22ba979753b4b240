"""Forward values, error contracts and tape behaviour of the tensor engine."""

import numpy as np
import pytest

from mmfusion.autodiff import (
    Tensor,
    build_tape,
    check_finite,
    concat,
    default_dtype,
    first_nonfinite_op,
    functional as F,
    load_checkpoint,
    matmul,
    no_grad,
    relu,
    save_checkpoint,
    split,
)
from mmfusion.errors import ConfigError, ContractError, DimensionError, NonFiniteError


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)

    def test_row_column_sums(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestConv2d:
    def test_unit_1x1_kernel_is_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 1, 5, 5))
        out = F.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data, x)

    def test_constant_image_all_ones_kernel(self):
        out = F.conv2d(Tensor(np.full((1, 1, 5, 5), 3.0)), Tensor(np.ones((1, 1, 3, 3))))
        assert out.shape == (1, 1, 3, 3)
        np.testing.assert_allclose(out.data, 27.0)

    def test_same_padding_shape(self):
        out = F.conv2d(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((4, 3, 3, 3))), padding=1)
        assert out.shape == (1, 4, 8, 8)

    def test_cross_correlation_matches_direct_loop(self):
        rng = np.random.default_rng(1)
        x, w = rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3))
        out = F.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros_like(out)
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                ref[:, :, i, j] = np.einsum("nchw,fchw->nf", patch, w)
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_depthwise_matches_per_channel_conv(self):
        rng = np.random.default_rng(2)
        x, w = rng.standard_normal((1, 3, 5, 5)), rng.standard_normal((3, 1, 3, 3))
        out = F.conv2d(Tensor(x), Tensor(w), padding=1, groups=3).data
        for c in range(3):
            ref = F.conv2d(Tensor(x[:, c:c + 1]), Tensor(w[c:c + 1]), padding=1).data
            np.testing.assert_allclose(out[:, c:c + 1], ref, atol=1e-12)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError):
            F.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


class TestPool:
    def test_max_and_avg(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert F.pool2d(x, "max", 2).data.item() == 4.0
        assert F.pool2d(x, "avg", 2).data.item() == 2.5

    def test_max_pool_tie_goes_to_first_index(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        F.max_pool2d(x, 2).sum().backward()
        np.testing.assert_array_equal(x.grad.reshape(-1), [1.0, 0.0, 0.0, 0.0])


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(F.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_no_overflow(self):
        np.testing.assert_allclose(F.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])

    def test_values(self):
        # direct exp/sum evaluation
        e = np.exp([1.0, 2.0, 3.0])
        np.testing.assert_allclose(F.softmax(Tensor([1.0, 2.0, 3.0])).data, e / e.sum(), atol=1e-15)
        np.testing.assert_allclose(F.softmax(Tensor([1.0, 2.0, 3.0])).data,
                                   [0.09003, 0.24473, 0.66524], atol=1e-5)

    def test_rows_are_distributions(self):
        x = np.random.default_rng(0).standard_normal((20, 7)) * 30
        s = F.softmax(Tensor(x), axis=1).data
        assert np.all(np.abs(s.sum(axis=1) - 1.0) < 1e-12)
        assert s.min() >= 0 and s.max() <= 1


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_relu_subgradient_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        relu(x).sum().backward()
        assert x.grad[0] == 0.0

    def test_dropout_zero_is_identity(self):
        x = Tensor(np.arange(6.0))
        rng = np.random.default_rng(0)
        for training in (True, False):
            np.testing.assert_array_equal(F.dropout(x, 0.0, training, rng).data, x.data)

    def test_dropout_eval_identity_and_train_scaling(self):
        x = Tensor(np.ones(10000))
        np.testing.assert_array_equal(F.dropout(x, 0.2, False).data, x.data)
        y = F.dropout(x, 0.2, True, np.random.default_rng(0)).data
        kept = y[y != 0]
        np.testing.assert_allclose(kept, 1 / 0.8)
        assert abs(kept.size / y.size - 0.8) < 0.02

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_dropout_rejects_p(self, p):
        with pytest.raises(ConfigError):
            F.dropout(Tensor([1.0]), p, True, np.random.default_rng(0))

    def test_fusion_shaped_concat(self):
        parts = [Tensor(np.ones((1, 8))) for _ in range(4)] + [Tensor(np.ones((1, 4)))]
        assert concat(parts, axis=1).shape == (1, 36)

    def test_concat_mismatch(self):
        with pytest.raises(DimensionError):
            concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)

    def test_concat_then_split_roundtrip(self):
        rng = np.random.default_rng(0)
        parts = [rng.standard_normal((3, k)) for k in (1, 4, 2)]
        back = split(concat([Tensor(p) for p in parts], axis=1), [1, 4, 2], axis=1)
        for a, b in zip(parts, back):
            np.testing.assert_array_equal(a, b.data)

    def test_narrow_broadcasting(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((2, 1)))
        out = Tensor(np.ones((2, 3))) + Tensor(np.arange(3.0))
        np.testing.assert_array_equal(out.data[1], [1.0, 2.0, 3.0])

    def test_batchnorm_train_normalizes_and_updates_running_stats(self):
        rng = np.random.default_rng(0)
        x = rng.normal(3.0, 2.0, (8, 2, 4, 4))
        rm, rv = np.zeros(2), np.ones(2)
        y = F.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True).data
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-4)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))

    def test_layernorm_last_axis(self):
        x = np.random.default_rng(0).standard_normal((3, 5))
        y = F.layernorm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5))).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        (x * x).backward()
        assert x.grad == 6.0

    def test_accumulation_over_reuse(self):
        x = Tensor(1.5, requires_grad=True)
        (x + x).backward()
        assert x.grad == 2.0

    def test_non_scalar_loss(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_tape_is_topological(self):
        a = Tensor(np.ones(2), requires_grad=True)
        b = a * 2.0
        c = b + a
        loss = c.sum()
        tape = build_tape(loss)
        pos = {id(t): i for i, t in enumerate(tape)}
        for t in tape:
            for parent in (q for q in t._parents if q.requires_grad):
                assert pos[id(parent)] < pos[id(t)]

    def test_grads_on_every_reachable_leaf(self):
        a = Tensor(np.ones(2), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(2), requires_grad=True)
        (a * b).sum().backward()
        assert a.grad is not None and b.grad is not None and unused.grad is None

    def test_no_grad_records_nothing(self):
        a = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            b = a * 2.0
        assert b.is_leaf and not b.requires_grad

    def test_seeded_forward_is_bit_identical(self):
        from mmfusion.nn.backbones import build_backbone
        from mmfusion.nn.specs import BackboneSpec

        x = np.random.default_rng(5).uniform(size=(2, 1, 32, 32))
        outs = [build_backbone(BackboneSpec(input_size=32), np.random.default_rng(7))(Tensor(x)).data
                for _ in range(2)]
        assert np.array_equal(outs[0], outs[1])


class TestNonFinite:
    def test_first_nonfinite_op_is_named(self):
        x = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        from mmfusion.autodiff import log

        with np.errstate(invalid="ignore"):
            loss = (log(x) * 2.0).sum()
        assert first_nonfinite_op(loss).startswith("log")

    def test_check_finite_raises(self):
        from mmfusion.autodiff import log

        with check_finite(), np.errstate(invalid="ignore"), pytest.raises(NonFiniteError, match="log"):
            log(Tensor([-1.0]))


class TestDtype:
    def test_default_is_float64_and_float32_selectable(self):
        assert Tensor([1.0]).dtype == np.float64
        with default_dtype("float32"):
            t = Tensor([1.0]) * 2.0
            assert t.dtype == np.float32
        assert Tensor([1.0]).dtype == np.float64


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"backbone.block1.conv.weight": rng.standard_normal((4, 1, 3, 3)), "head.bias": np.zeros(2)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tensors, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta["note"] == "x"
    assert set(loaded) == set(tensors)
    for k in tensors:
        assert np.array_equal(loaded[k], tensors[k]) and loaded[k].dtype == np.float64
    assert path.read_bytes().startswith(b"MMFUSION-CHECKPOINT\nversion 1\n")


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ContractError):
        load_checkpoint(path)
