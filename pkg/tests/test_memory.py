import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from triaccel.errors import ConfigError
from triaccel.memory import (
    DOWN,
    HOLD,
    UP,
    BatchControllerConfig,
    BatchControllerState,
    MemoryModel,
    adjust_batch,
    mem_usage,
    settle,
)
from triaccel.network import LayerSpec
from triaccel.precision import PrecisionMode

FP16, BF16, FP32 = PrecisionMode.FP16, PrecisionMode.BF16, PrecisionMode.FP32
CFG = BatchControllerConfig()


def default_specs():
    return [LayerSpec(8, 32), LayerSpec(32, 32), LayerSpec(32, 4, "identity")]


def test_usage_linear_in_batch():
    m = MemoryModel(1000, (10, 20), 10**6)
    pm = [FP32, FP16]
    assert mem_usage(m, 64, pm) - 1000 == 2 * (mem_usage(m, 32, pm) - 1000)


def test_fp16_halves_per_sample_term():
    m = MemoryModel(1000, (10, 20), 10**6)
    assert 2 * m.per_sample_bytes([FP16, FP16]) == m.per_sample_bytes([FP32, FP32])


def test_default_net_hand_count():
    overhead = 4096
    m = MemoryModel.for_layers(default_specs(), overhead, 10**6)
    # per sample: (8 + 64) + (32 + 64) + (32 + 8) = 208 values
    # params: 8*32+32 + 32*32+32 + 32*4+4 = 288 + 1056 + 132 = 1476
    assert m.fixed_bytes == 12 * 1476 + overhead
    assert mem_usage(m, 96, [FP32] * 3) == 12 * 1476 + overhead + 96 * 208 * 4


def test_usage_errors():
    m = MemoryModel(0, (1,), 10)
    with pytest.raises(ConfigError):
        mem_usage(m, 0, [FP32])
    with pytest.raises(ConfigError):
        mem_usage(m, 1, [FP32, FP32])
    with pytest.raises(ConfigError):
        BatchControllerConfig(rho_low=0.9, rho_high=0.7)


def test_narrowing_never_increases_usage():
    m = MemoryModel.for_layers(default_specs(), 0, 10**6)
    for i in range(3):
        wide = [BF16] * 3
        wide[i] = FP32
        narrow = list(wide)
        narrow[i] = FP16
        assert mem_usage(m, 50, narrow) <= mem_usage(m, 50, wide)


def test_adjust_batch_branches():
    s = BatchControllerState(96)
    assert adjust_batch(s, CFG, 0.5 * 1000, 1000).batch == 96 + CFG.delta_up
    assert adjust_batch(s, CFG, 0.95 * 1000, 1000).batch == 96 - CFG.delta_down
    held = adjust_batch(s, CFG, 0.7 * 1000, 1000)
    assert held.batch == 96 and held.last_decision == HOLD
    assert adjust_batch(s, CFG, 0.9 * 1000, 1000).last_decision == HOLD


def test_adjust_batch_clamps():
    cfg = BatchControllerConfig(b_min=4, b_max=100)
    assert adjust_batch(BatchControllerState(98), cfg, 0, 1000).batch == 100
    low = adjust_batch(BatchControllerState(5), cfg, 999, 1000)
    assert low.batch == 4 and low.last_decision == DOWN


@given(
    st.integers(1, 5000),
    st.floats(0, 1e7),
    st.floats(0.01, 0.98),
    st.floats(0.001, 0.5),
    st.integers(1, 64),
    st.integers(1, 64),
)
def test_clamping_fuzz(b, usage, rho_low, width, du, dd):
    cfg = BatchControllerConfig(rho_low, min(rho_low + width, 1.0), du, dd, 1, 4096)
    out = adjust_batch(BatchControllerState(min(b, 4096)), cfg, usage, 1e6)
    assert cfg.b_min <= out.batch <= cfg.b_max


def test_settle_reaches_hold_in_dead_band():
    # usage(B) = 1000 + 10 B ; band [0.7, 0.9] * 10000 -> B in [600, 800]
    m = MemoryModel(1000, (5,), 10000)
    cfg = BatchControllerConfig(delta_up=8, delta_down=8, b_max=4096)
    trace = settle(m, cfg, BatchControllerState(96), [FP16])
    assert trace.outcome == "hold"
    b_final = trace.points[-1][0]
    assert 600 <= b_final <= 800
    assert trace.steps <= math.ceil(cfg.b_max / 8)


def test_settle_saturates_when_budget_below_fixed():
    m = MemoryModel(5000, (10,), 4000)
    trace = settle(m, CFG, BatchControllerState(96), [FP32])
    assert trace.outcome == "saturated"
    assert trace.points[-1][0] == CFG.b_min and trace.points[-1][2] == DOWN


def test_settle_detects_two_cycle():
    # band B in [600, 800] is narrower than a step of 300
    m = MemoryModel(1000, (5,), 10000)
    cfg = BatchControllerConfig(delta_up=300, delta_down=300)
    trace = settle(m, cfg, BatchControllerState(550), [FP16])
    assert trace.outcome == "cycle"
    assert [p[2] for p in trace.points[-2:]] == [UP, DOWN]


def test_narrowing_precision_releases_down_pressure():
    # FP32: 1000 + 20 * 700 = 15000 > 9000 ; FP16: 1000 + 10 * 700 = 8000, in band
    m = MemoryModel(1000, (5,), 10000)
    s = BatchControllerState(700)
    assert adjust_batch(s, CFG, mem_usage(m, 700, [FP32]), m.mem_max).last_decision == DOWN
    assert adjust_batch(s, CFG, mem_usage(m, 700, [FP16]), m.mem_max).last_decision == HOLD
