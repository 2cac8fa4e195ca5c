"""Backward-pass verification: every primitive against central differences."""

import numpy as np
import pytest

from boxprompt import ops
from boxprompt.gradcheck import GradReport, gradcheck
from boxprompt.tensor import Tensor, backward, no_grad


def fd_check(build, tensors, eps=1e-6, tol=1e-6):
    """Compare backward() grads of scalar build(tensors) to central differences.

    Returns the number of elements checked; asserts every relative error
    is within tol (denominator max(|analytic|, |numeric|, 1e-8)).
    """
    for t in tensors:
        t.zero_grad()
    loss = build(tensors)
    backward(loss)
    checked = 0
    for t in tensors:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = build(tensors).item()
            flat[i] = orig - eps
            with no_grad():
                fm = build(tensors).item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            rel = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-8)
            assert rel < tol, f"rel err {rel:.3e} at element {i} of {t.op or 'leaf'}"
            checked += 1
    return checked


def leaf(rng, shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64, requires_grad=True)


class TestBackwardBasics:
    def test_linear_form_grad_is_input(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 4))
        w = leaf(rng, (3, 4))
        loss = ops.sum_all(ops.mul(w, Tensor(x, np.float64)))
        backward(loss)
        assert np.allclose(w.grad, x, atol=1e-15)

    def test_sigmoid_grad_at_zero(self):
        w = Tensor(np.zeros(1), dtype=np.float64, requires_grad=True)
        backward(ops.sum_all(ops.sigmoid(w)))
        assert abs(w.grad[0] - 0.25) < 1e-15

    def test_repeated_backward_accumulates(self):
        w = Tensor(np.array([3.0]), dtype=np.float64, requires_grad=True)
        loss = ops.sum_all(ops.scale(w, 2.0))
        backward(loss)
        backward(loss)
        assert w.grad[0] == 4.0
        w.zero_grad()
        backward(loss)
        assert w.grad[0] == 2.0

    def test_backward_rejects_non_scalar(self):
        w = Tensor(np.ones((2, 2)), dtype=np.float64, requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(ops.scale(w, 1.0))

    def test_shared_node_grad_flows_both_paths(self):
        # y = w*w consumed twice: d/dw [sum(w*w) + sum(w*w)] = 4w
        w = Tensor(np.array([1.5, -2.0]), dtype=np.float64, requires_grad=True)
        sq = ops.mul(w, w)
        loss = ops.add(ops.sum_all(sq), ops.sum_all(sq))
        backward(loss)
        assert np.allclose(loss.grad if False else w.grad, 4 * w.data)

    def test_no_grad_suppresses_recording(self):
        w = Tensor(np.ones(2), dtype=np.float64, requires_grad=True)
        with no_grad():
            y = ops.scale(w, 3.0)
        assert not y.requires_grad and y.is_leaf()


class TestPrimitiveGradients:
    """100+ random instances across the primitive set, rel tol 1e-6 at float64."""

    def test_all_primitives(self):
        rng = np.random.default_rng(42)
        total = 0

        for _ in range(10):
            a, b = leaf(rng, (2, 3)), leaf(rng, (2, 3))
            total += fd_check(lambda ts: ops.sum_all(ops.mul(ops.add(ts[0], ts[1]),
                                                             ops.sub(ts[0], ts[1]))), [a, b])
        for _ in range(8):
            feat, gate = leaf(rng, (3, 2, 2)), leaf(rng, (1, 2, 2))
            total += fd_check(lambda ts: ops.sum_all(ops.mul(ts[0], ts[1])), [feat, gate])
        for _ in range(8):
            x = leaf(rng, (2, 4))
            total += fd_check(lambda ts: ops.sum_all(ops.sigmoid(ops.scale(ts[0], 1.7))), [x])
            total += fd_check(lambda ts: ops.sum_all(ops.silu(ts[0])), [x])
        for _ in range(6):
            x = leaf(rng, (6,))
            # keep clear of the clamp kinks: |x| ~ N(0,1), bounds at +-3
            total += fd_check(lambda ts: ops.sum_all(ops.clamp(ts[0], -3.0, 3.0)), [x])
            total += fd_check(lambda ts: ops.sum_all(ops.exp(ts[0])), [x])
        for _ in range(6):
            x = Tensor(rng.uniform(0.5, 2.0, size=5), dtype=np.float64, requires_grad=True)
            total += fd_check(lambda ts: ops.sum_all(ops.log(ts[0])), [x])
        for _ in range(8):
            x = leaf(rng, (2, 3, 4))
            total += fd_check(lambda ts: ops.sum_all(ops.mul(ops.reduce_mean(ts[0], [1], keepdims=True),
                                                             ops.reduce_sum(ts[0], [1], keepdims=True))), [x])
        for _ in range(6):
            x = leaf(rng, (3, 5))
            total += fd_check(lambda ts: ops.sum_all(ops.mul(ops.reduce_max(ts[0], [1]),
                                                             ops.reduce_max(ts[0], [1]))), [x])
        for _ in range(8):
            x = leaf(rng, (2, 5))
            total += fd_check(lambda ts: ops.sum_all(ops.mul(ops.softmax(ts[0], 1), ts[0])), [x])
        for _ in range(6):
            a, b = leaf(rng, (3, 4)), leaf(rng, (4, 2))
            total += fd_check(lambda ts: ops.sum_all(ops.matmul(ts[0], ts[1])), [a, b])
        for _ in range(4):
            a = leaf(rng, (3, 4))
            total += fd_check(lambda ts: ops.sum_all(ops.mul(ops.transpose2d(ts[0]),
                                                             ops.transpose2d(ts[0]))), [a])
            total += fd_check(lambda ts: ops.sum_all(ops.mul(ops.reshape(ts[0], (2, 6)),
                                                             ops.reshape(ts[0], (2, 6)))), [a])
        for _ in range(4):
            parts = [leaf(rng, (2, 3)), leaf(rng, (1, 3)), leaf(rng, (2, 3))]
            total += fd_check(lambda ts: ops.sum_all(ops.mul(ops.concat(list(ts), 0),
                                                             ops.concat(list(ts), 0))), parts)
        for _ in range(4):
            x, w, b = leaf(rng, (2, 5, 5)), leaf(rng, (3, 2, 3, 3)), leaf(rng, (3,))
            total += fd_check(lambda ts: ops.sum_all(ops.sigmoid(
                ops.conv2d(ts[0], ts[1], ts[2], stride=1, padding=1))), [x, w, b])
        for _ in range(3):
            x, w, b = leaf(rng, (1, 5, 5)), leaf(rng, (2, 1, 3, 3)), leaf(rng, (2,))
            total += fd_check(lambda ts: ops.sum_all(ops.conv2d(ts[0], ts[1], ts[2],
                                                                stride=2, padding=1)), [x, w, b])
        for _ in range(4):
            x = leaf(rng, (2, 3, 4))
            total += fd_check(lambda ts: ops.sum_all(ops.mul(ops.bilinear_resize(ts[0], 5, 6),
                                                             ops.bilinear_resize(ts[0], 5, 6))), [x])

        assert total >= 100  # instance budget for the primitive sweep


class TestGradcheckHarness:
    def test_quadratic_bowl_exact(self):
        rng = np.random.default_rng(7)
        p = {"p": Tensor(rng.uniform(0.5, 1.5, 6) * rng.choice([-1, 1], 6),
                         dtype=np.float64, requires_grad=True)}
        # no truncation error on a quadratic, so a large eps isolates rounding
        report = gradcheck(lambda ps: ops.sum_all(ops.mul(ps["p"], ps["p"])), p,
                           eps=1e-3, tol=1e-9)
        assert report.passed
        assert report.worst <= 1e-9

    def test_corrupted_gradient_flagged(self):
        rng = np.random.default_rng(8)
        p = {"p": Tensor(rng.uniform(0.5, 1.5, 4), dtype=np.float64, requires_grad=True)}

        def crooked(ps):
            t = ps["p"]

            def bw(g):
                gx = (g * 2 * t.data)
                gx[0] *= 2.0  # deliberately wrong on one element
                return ((t, gx),)

            sq = Tensor._from_op(t.data * t.data, (t,), bw, "crooked_square")
            return ops.sum_all(sq)

        report = gradcheck(crooked, p, eps=1e-5, tol=1e-6)
        assert not report.passed

    def test_nondeterministic_f_detected(self):
        p = {"p": Tensor(np.ones(2), dtype=np.float64, requires_grad=True)}
        state = {"n": 0}

        def jittery(ps):
            state["n"] += 1
            return ops.sum_all(ops.scale(ps["p"], 1.0 + 1e-12 * state["n"]))

        with pytest.raises(ValueError, match="deterministic"):
            gradcheck(jittery, p)

    def test_report_round_trip(self):
        report = GradReport(tolerance=1e-6, eps=1e-5, rel_error={"w": 1e-8},
                            abs_error={"w": 1e-9}, passed=True)
        d = report.to_dict()
        assert d["pass"] and d["max_rel_error"] == 1e-8
