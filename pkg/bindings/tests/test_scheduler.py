import numpy as np
import pytest

from lidar_rebalance.balance import DwaConfig, DwaScheduler as CoreScheduler
from lidar_rebalance_bindings import DwaScheduler, ValidationError


class TestStep:
    def test_constant_losses_stay_ones(self):
        sched = DwaScheduler(temperature=2.0, window=5)
        for _ in range(30):
            alpha = sched.step([2.0, 1.0, 0.5])
            assert alpha == pytest.approx([1.0, 1.0, 1.0], abs=1e-12)

    def test_worked_vector(self):
        # the weight at window t uses the averages of windows t-1 and t-2,
        # so feed (1,1,1) then (1.0,1.2,0.8) to get rates (1.0,1.2,0.8)
        sched = DwaScheduler(temperature=2.0, window=1)
        sched.step([1.0, 1.0, 1.0])          # window 0 (warm-up ones)
        sched.step([1.0, 1.2, 0.8])          # window 1 (still warm-up)
        alpha = sched.step([0.5, 0.5, 0.5])  # window 2: rates L(1)/L(0)
        for got, want in zip(alpha, (0.99668, 1.10150, 0.90183)):
            assert got == pytest.approx(want, abs=1e-4)

    def test_weights_always_sum_to_head_count(self):
        rng = np.random.default_rng(3)
        sched = DwaScheduler(temperature=1.5, window=4)
        for _ in range(40):
            alpha = sched.step(list(rng.uniform(0.1, 5.0, size=4)))
            assert sum(alpha) == pytest.approx(4.0, abs=1e-9)

    def test_nan_losses_rejected(self):
        sched = DwaScheduler(window=3)
        with pytest.raises(ValidationError):
            sched.step([1.0, float("nan")])

    def test_out_of_order_iterations_rejected(self):
        sched = DwaScheduler(window=3)
        sched.step([1.0, 1.0], iteration=0)
        with pytest.raises(ValidationError):
            sched.step([1.0, 1.0], iteration=5)

    def test_matches_core_scheduler(self):
        rng = np.random.default_rng(11)
        cfg = DwaConfig(temperature=2.5, window=6)
        core = CoreScheduler(cfg)
        bound = DwaScheduler(temperature=2.5, window=6)
        for _ in range(60):
            losses = {0: float(rng.uniform(0.1, 4)), 1: float(rng.uniform(0.1, 4))}
            vec = core.observe_totals(dict(losses))
            alpha = bound.step(losses)
            if vec is not None:
                assert alpha == vec.as_list()

    def test_handles_do_not_interfere(self):
        a = DwaScheduler(window=2)
        b = DwaScheduler(window=2)
        rng = np.random.default_rng(7)
        stream = [list(rng.uniform(0.5, 2, 3)) for _ in range(12)]
        solo = DwaScheduler(window=2)
        want = [solo.step(s) for s in stream]
        got = []
        for s in stream:
            got.append(a.step(s))
            b.step([9.0, 0.1, 4.2])
        assert got == want
