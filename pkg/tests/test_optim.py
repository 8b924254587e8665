import numpy as np
import pytest

from biodistill.errors import ConfigError, NumericError
from biodistill.tensor import AdamW, LrSchedule, clip_grad_norm, param


def _scalar_param(value):
    return param(np.array(value, dtype=np.float64))


def test_adamw_single_step_hand_value():
    # one step from p=1 with g=1, lr=0.1, wd=0
    p = _scalar_param(1.0)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    p.grad = np.array(1.0, dtype=np.float64)
    opt.step()
    assert float(p.data) == pytest.approx(0.9000000316, abs=1e-7)
    assert opt.t == 1


def test_adamw_zero_grad_first_step_is_identity():
    p = _scalar_param(2.5)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    p.grad = np.array(0.0, dtype=np.float64)
    opt.step()
    assert float(p.data) == 2.5


def test_adamw_decay_is_decoupled():
    # zero gradient: the only movement is the decay factor (1 - lr*wd)
    p = _scalar_param(3.0)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=1e-5)
    p.grad = np.array(0.0, dtype=np.float64)
    opt.step()
    assert float(p.data) == pytest.approx(3.0 * (1.0 - 0.1 * 1e-5), rel=1e-14)


def test_adamw_missing_grad_treated_as_zero():
    p = _scalar_param(1.0)
    q = _scalar_param(4.0)
    opt = AdamW({"p": p, "q": q}, lr=0.1, weight_decay=0.0)
    p.grad = np.array(1.0, dtype=np.float64)
    opt.step()
    assert float(q.data) == 4.0
    assert float(p.data) < 1.0


def test_adamw_strict_rejects_nonfinite_grad():
    p = _scalar_param(1.0)
    opt = AdamW({"bad_param": p}, lr=0.1, strict=True)
    p.grad = np.array(np.nan)
    with pytest.raises(NumericError, match="bad_param"):
        opt.step()


def test_adamw_state_roundtrip():
    p = param(np.ones(3, dtype=np.float64))
    opt = AdamW({"w": p}, lr=0.01)
    p.grad = np.full(3, 0.5)
    opt.step()
    state = opt.state_arrays()
    opt2 = AdamW({"w": param(np.ones(3, dtype=np.float64))}, lr=0.01)
    opt2.load_state_arrays(state)
    assert opt2.t == 1
    np.testing.assert_array_equal(opt2.m["w"], opt.m["w"])
    np.testing.assert_array_equal(opt2.v["w"], opt.v["w"])


def test_clip_noop_below_max():
    p = param(np.zeros(2, dtype=np.float64))
    p.grad = np.array([2.0, 0.0])
    norm = clip_grad_norm({"p": p}, 3.0)
    assert norm == pytest.approx(2.0, rel=1e-12)
    np.testing.assert_array_equal(p.grad, [2.0, 0.0])


def test_clip_halves_at_double_norm():
    a = param(np.zeros(1, dtype=np.float64))
    b = param(np.zeros(1, dtype=np.float64))
    a.grad = np.array([4.8])
    b.grad = np.array([3.6])  # global norm 6
    norm = clip_grad_norm({"a": a, "b": b}, 3.0)
    assert norm == pytest.approx(6.0, rel=1e-12)
    np.testing.assert_allclose(a.grad, [2.4], rtol=1e-12)
    np.testing.assert_allclose(b.grad, [1.8], rtol=1e-12)


def test_clip_three_four_exact():
    p = param(np.zeros(2, dtype=np.float64))
    p.grad = np.array([3.0, 4.0])
    norm = clip_grad_norm({"p": p}, 3.0)
    assert norm == pytest.approx(5.0, rel=1e-15)
    np.testing.assert_allclose(p.grad, [1.8, 2.4], rtol=1e-12)


def test_clip_with_no_grads_returns_zero():
    p = param(np.zeros(2))
    assert clip_grad_norm({"p": p}, 3.0) == 0.0


def test_warmup_exponential_schedule():
    sched = LrSchedule(
        "warmup-exponential",
        max_lr=2e-4,
        warmup_iters=20000,
        decay_gamma=0.985,
        decay_every_iters=1000,
    )
    assert sched.lr_at(0) == 0.0
    assert sched.lr_at(10000) == pytest.approx(1e-4, rel=1e-12)
    assert sched.lr_at(20000) == pytest.approx(2e-4, rel=1e-12)
    assert sched.lr_at(22000) == pytest.approx(1.94045e-4, rel=1e-9)
    # non-decreasing through warmup, non-increasing after
    ups = [sched.lr_at(i) for i in range(0, 20001, 500)]
    assert all(b >= a for a, b in zip(ups, ups[1:]))
    downs = [sched.lr_at(i) for i in range(20000, 40000, 500)]
    assert all(b <= a for a, b in zip(downs, downs[1:]))


def test_step_decay_schedule():
    sched = LrSchedule(
        "step-decay", max_lr=1e-3, decay_gamma=0.5, decay_every_iters=125000
    )
    assert sched.lr_at(0) == pytest.approx(1e-3)
    assert sched.lr_at(124999) == pytest.approx(1e-3)
    assert sched.lr_at(125000) == pytest.approx(5e-4, rel=1e-12)
    assert sched.lr_at(375000) == pytest.approx(1.25e-4, rel=1e-12)


def test_constant_schedule_and_validation():
    assert LrSchedule("constant", max_lr=3e-3).lr_at(12345) == 3e-3
    with pytest.raises(ConfigError):
        LrSchedule("cosine", max_lr=1e-3)
    with pytest.raises(ConfigError):
        LrSchedule("constant", max_lr=-1.0)
    with pytest.raises(ConfigError):
        LrSchedule("constant", max_lr=1e-3).lr_at(-1)
