import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reprokit.errors import AssumptionError, CapacityError, RangeError, ShapeError
from reprokit.input_transform import (
    InputTransform,
    PlacementLayout,
    apply_transform,
    build_placement_mask,
    transform_grad,
    zero_pad,
)


@st.composite
def layouts(draw):
    d_T = draw(st.integers(1, 8))
    d_S = draw(st.integers(d_T, 24))
    mode = draw(st.sampled_from(["center", "offset", "replicate"]))
    if mode == "offset":
        return PlacementLayout(d_T, d_S, "offset", k=draw(st.integers(0, d_S - d_T)))
    if mode == "replicate":
        return PlacementLayout(d_T, d_S, "replicate", r=draw(st.integers(1, d_S // d_T)))
    return PlacementLayout(d_T, d_S)


def transform_with(layout, w, overlay=False):
    return InputTransform.create(layout, overlay=overlay).with_W(w)


class TestPlacementLayout:
    def test_center_mask(self):
        mask, occ = build_placement_mask(PlacementLayout(2, 4))
        np.testing.assert_array_equal(occ, [1, 2])
        np.testing.assert_array_equal(mask, [1, 0, 0, 1])

    def test_equal_dims_nothing_trainable(self):
        mask, _ = build_placement_mask(PlacementLayout(2, 2))
        np.testing.assert_array_equal(mask, [0, 0])
        assert InputTransform.create(PlacementLayout(2, 2)).n_trainable == 0

    def test_replicate_packed_from_zero(self):
        mask, occ = build_placement_mask(PlacementLayout(2, 6, "replicate", r=2))
        np.testing.assert_array_equal(occ, [0, 1, 2, 3])
        np.testing.assert_array_equal(mask, [0, 0, 0, 0, 1, 1])

    def test_offset(self):
        _, occ = build_placement_mask(PlacementLayout(2, 5, "offset", k=3))
        np.testing.assert_array_equal(occ, [3, 4])

    def test_target_larger_than_source(self):
        with pytest.raises(AssumptionError, match="d_T <= d_S"):
            PlacementLayout(5, 4)

    def test_replicate_capacity(self):
        with pytest.raises(CapacityError):
            PlacementLayout(2, 5, "replicate", r=3)

    def test_offset_capacity(self):
        with pytest.raises(CapacityError):
            PlacementLayout(2, 5, "offset", k=4)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="unknown placement"):
            PlacementLayout(2, 4, "spiral")

    @given(layouts())
    def test_occupied_distinct_and_in_range(self, layout):
        occ = layout.occupied_indices
        assert len(set(occ.tolist())) == len(occ) == layout.d_T * layout.replicates
        assert occ.min() >= 0 and occ.max() < layout.d_S


class TestApplyTransform:
    def test_hand_example(self):
        layout = PlacementLayout(2, 4, "offset", k=0)
        w = np.array([7.0, -3.0, np.arctanh(0.5), np.arctanh(-0.5)])
        out = apply_transform(transform_with(layout, w), np.array([[1.0, 2.0]]))
        np.testing.assert_allclose(out, [[1.0, 2.0, 0.5, -0.5]], rtol=0, atol=1e-15)

    def test_zero_W_is_zero_padding(self, rng):
        layout = PlacementLayout(3, 9)
        x = rng.uniform(-1, 1, size=(5, 3))
        np.testing.assert_array_equal(apply_transform(InputTransform.create(layout), x), zero_pad(layout, x))

    def test_replicate_values(self):
        layout = PlacementLayout(2, 7, "replicate", r=2)
        out = apply_transform(InputTransform.create(layout), np.array([[0.3, -0.7]]))
        np.testing.assert_array_equal(out[0, :4], [0.3, -0.7, 0.3, -0.7])
        np.testing.assert_array_equal(out[0, 4:], 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply_transform(InputTransform.create(PlacementLayout(3, 6)), np.zeros((2, 4)))

    def test_range_enforcement(self):
        t = InputTransform.create(PlacementLayout(2, 4), enforce_range=True)
        with pytest.raises(RangeError):
            apply_transform(t, np.array([[0.0, 1.5]]))
        apply_transform(t, np.array([[0.0, 1.0]]))

    def test_overlay_perturbs_data_dims(self):
        layout = PlacementLayout(1, 3)
        t = transform_with(layout, np.full(3, np.arctanh(0.25)), overlay=True)
        np.testing.assert_allclose(apply_transform(t, [[0.5]]), [[0.25, 0.75, 0.25]], atol=1e-15)
        assert t.n_trainable == 3

    @settings(max_examples=60, deadline=None)
    @given(layouts(), st.data())
    def test_locality(self, layout, data):
        x = data.draw(arrays(np.float64, (3, layout.d_T), elements=st.floats(-1, 1)))
        w = data.draw(arrays(np.float64, layout.d_S, elements=st.floats(-20, 20)))
        out = apply_transform(transform_with(layout, w), x)
        placed = out[:, layout.occupied_indices]
        np.testing.assert_array_equal(placed, np.tile(x, layout.replicates))

    @settings(max_examples=60, deadline=None)
    @given(layouts(), st.data())
    def test_range_safety(self, layout, data):
        x = data.draw(arrays(np.float64, (3, layout.d_T), elements=st.floats(-1, 1)))
        w = data.draw(arrays(np.float64, layout.d_S, elements=st.floats(-5, 5)))
        t = transform_with(layout, w)
        out = apply_transform(t, x)
        pad = t.trainable
        assert np.all(np.abs(out[:, pad]) < 1)
        assert np.all(np.abs(out[:, layout.occupied_indices]) <= 1)

    @given(layouts(), st.data())
    def test_theta_zero_off_mask(self, layout, data):
        w = data.draw(arrays(np.float64, layout.d_S, elements=st.floats(-5, 5)))
        t = transform_with(layout, w)
        assert np.all(t.theta[t.mask == 0] == 0)
        assert not set(t.trainable.tolist()) & set(layout.occupied_indices.tolist())
        assert t.n_trainable == int(t.mask.sum()) == layout.d_S - layout.d_T * layout.replicates


class TestTransformGrad:
    def test_nothing_trainable(self, rng):
        t = InputTransform.create(PlacementLayout(4, 4))
        np.testing.assert_array_equal(transform_grad(t, rng.normal(size=(3, 4))), 0.0)

    def test_unit_derivative_at_origin(self):
        t = InputTransform(PlacementLayout(1, 3, "offset", k=0), [0, 0, 1], np.zeros(3))
        np.testing.assert_array_equal(transform_grad(t, np.array([[0.0, 0.0, 1.0]])), [0.0, 0.0, 1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            transform_grad(InputTransform.create(PlacementLayout(2, 4)), np.zeros((1, 5)))

    @pytest.mark.parametrize("overlay", [False, True])
    def test_matches_finite_differences(self, rng, overlay):
        for _ in range(20):
            d_T = int(rng.integers(1, 5))
            layout = PlacementLayout(d_T, d_T + int(rng.integers(0, 6)))
            t = transform_with(layout, rng.normal(size=layout.d_S), overlay=overlay)
            x = rng.uniform(-1, 1, size=(4, d_T))
            g = rng.normal(size=(4, layout.d_S))
            analytic = transform_grad(t, g)
            h = 1e-6
            fd = np.zeros(layout.d_S)
            for i in range(layout.d_S):
                wp, wm = t.W.copy(), t.W.copy()
                wp[i] += h
                wm[i] -= h
                fd[i] = (np.sum(g * apply_transform(t.with_W(wp), x))
                         - np.sum(g * apply_transform(t.with_W(wm), x))) / (2 * h)
            assert np.linalg.norm(analytic - fd) <= 1e-6 * max(np.linalg.norm(fd), 1e-12)

    @given(layouts(), st.data())
    def test_zero_off_mask(self, layout, data):
        w = data.draw(arrays(np.float64, layout.d_S, elements=st.floats(-5, 5)))
        g = data.draw(arrays(np.float64, (2, layout.d_S), elements=st.floats(-10, 10)))
        t = transform_with(layout, w)
        assert np.all(transform_grad(t, g)[t.mask == 0] == 0)
