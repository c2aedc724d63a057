import math

import numpy as np
import pytest

from emofuse.optim import AdamState, AdamW, adamw_step
from emofuse.tensor import NonFiniteError, Tensor


def scalar_param(v):
    return {"p": Tensor(np.array([v]), dtype=np.float64)}


def test_zero_gradient_zero_decay_leaves_params():
    params = scalar_param(0.7)
    adamw_step(params, {"p": np.zeros(1)}, 0.1, AdamState(), weight_decay=0.0)
    assert params["p"].data[0] == 0.7


def test_one_step_hand_trace():
    params = scalar_param(1.0)
    adamw_step(params, {"p": np.array([1.0])}, 0.1, AdamState(), weight_decay=0.0)
    m_hat = (0.1 * 1.0) / (1 - 0.9)
    v_hat = (0.001 * 1.0) / (1 - 0.999)
    expected = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert params["p"].data[0] == pytest.approx(expected, abs=1e-15)


def test_decoupled_decay_only():
    params = scalar_param(2.0)
    adamw_step(params, {"p": np.zeros(1)}, 0.1, AdamState(), weight_decay=0.5)
    assert params["p"].data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, abs=1e-15)


def test_non_finite_gradient_names_group():
    params = scalar_param(1.0)
    with pytest.raises(NonFiniteError, match="lora"):
        adamw_step(params, {"p": np.array([np.nan])}, 0.1, AdamState(), group="lora")


def test_wrapper_matches_functional():
    a, b = scalar_param(0.3), scalar_param(0.3)
    opt = AdamW(a, lr=0.05)
    state = AdamState()
    for g in (0.5, -1.0, 2.0):
        a["p"].grad = np.array([g])
        opt.step()
        adamw_step(b, {"p": np.array([g])}, 0.05, state)
    assert a["p"].data[0] == b["p"].data[0]
    assert opt.state.step == 3
