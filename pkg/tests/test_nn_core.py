import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agbnet import nn
from agbnet.nn import Adam, AdamState, NonFiniteGradientError, Value, adam_step
from agbnet.nn.suite import CASES, run_suite


class TestAutograd:
    def test_shared_node_accumulates(self):
        x = Value(np.array(3.0), requires_grad=True)
        y = nn.mul(x, x)
        nn.add(y, x).backward()
        assert x.grad == 7.0

    def test_diamond_graph(self):
        x = Value(np.array([1.0, 2.0]), requires_grad=True)
        a = nn.mul(x, 2.0)
        b = nn.mul(x, 3.0)
        nn.total(nn.mul(a, b)).backward()
        np.testing.assert_allclose(x.grad, 12 * x.data)

    def test_non_scalar_needs_seed(self):
        x = Value(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            nn.mul(x, 2.0).backward()
        nn.mul(x, 2.0).backward(np.ones(3))
        np.testing.assert_array_equal(x.grad, 2.0)

    def test_no_grad_builds_no_graph(self):
        x = Value(np.ones(2), requires_grad=True)
        with nn.no_grad():
            y = nn.mul(x, 2.0)
        assert not y.requires_grad and y._parents == ()
        assert nn.mul(x, 2.0).requires_grad

    def test_constants_get_no_grad(self):
        x = Value(np.ones(2), requires_grad=True)
        c = Value(np.ones(2))
        nn.total(nn.mul(x, c)).backward()
        assert c.grad is None

    def test_gradient_shape_enforced(self):
        x = Value(np.ones(2), requires_grad=True)
        with pytest.raises(ValueError):
            x.accumulate(np.ones(3))


class TestGradCheck:
    def test_linear_tight(self, rng):
        x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
        wts = rng.standard_normal((3, 2))
        r = nn.grad_check(lambda v: nn.weighted_sum(nn.linear(v["x"], v["w"], v["b"]), wts), {"x": x, "w": w, "b": b})
        assert r.max_error < 1e-6

    def test_detects_wrong_gradient(self, rng):
        def broken(v):
            x = v["x"]
            return nn.autograd.make(np.asarray((x.data**2).sum()), (x,), lambda g: x.accumulate(g * x.data))

        assert not nn.grad_check(broken, {"x": rng.standard_normal(5)}).passed

    def test_relative_error_floor(self):
        assert nn.relative_error(np.zeros(3), np.full(3, 1e-12)) < 1e-3

    def test_suite_two_seeds(self):
        results = run_suite(seeds=2)
        assert [r.name for r in results] == list(CASES)
        for r in results:
            assert r.passed, r.to_dict()


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        adam_step(p, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])
        assert state.step == 1

    def test_first_step_closed_form(self):
        p = {"w": np.array([0.5])}
        adam_step(p, {"w": np.array([1.0])}, AdamState(lr=0.001))
        # m_hat = v_hat = 1 after bias correction
        assert math.isclose(p["w"][0], 0.5 - 0.001 / (1 + 1e-8), rel_tol=1e-12)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
    def test_matches_reference_recursion(self, grads):
        p = {"w": np.array([0.0])}
        state = AdamState(lr=0.01)
        m = v = w = 0.0
        for t, g in enumerate(grads, start=1):
            adam_step(p, {"w": np.array([g])}, state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 0.01 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert math.isclose(p["w"][0], w, rel_tol=1e-9, abs_tol=1e-12)

    def test_non_finite_names_parameter(self):
        with pytest.raises(NonFiniteGradientError, match="enc0.conv0.weight"):
            adam_step({"enc0.conv0.weight": np.zeros(2)}, {"enc0.conv0.weight": np.array([np.nan, 0.0])}, AdamState())

    def test_optimizer_minimizes_quadratic(self):
        w = Value(np.array([3.0, -4.0]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            nn.total(nn.mul(w, w)).backward()
            opt.step()
        assert np.all(np.abs(w.data) < 1e-2)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        tensors = {"a": rng.standard_normal((2, 3)).astype(np.float32), "b": np.arange(4, dtype=np.float32), "s": np.array(1.5, dtype=np.float32)}
        nn.save_checkpoint(tmp_path / "ck", {"format": "test", "epoch": 3}, tensors)
        manifest, back = nn.load_checkpoint(tmp_path / "ck")
        assert manifest["epoch"] == 3 and [t["name"] for t in manifest["tensors"]] == ["a", "b", "s"]
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])
            assert back[k].shape == tensors[k].shape
