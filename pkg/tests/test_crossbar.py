import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pimsolve.crossbar import (
    ArchConfig, InvBank, VmmArray, inv_solve_lowprec, max_composable_dim, plan_inv_occupation, vmm_cycles,
    vmm_mul,
)
from pimsolve.errors import CapacityError, NonConvergenceError
from pimsolve.fixedpoint import Fixed, QuantSpec


def test_vmm_identity_and_zero(rng):
    v = Fixed(rng.integers(-(1 << 15), 1 << 15, 16), 16, 15)
    ident = Fixed(np.eye(16, dtype=np.int64), 16, 0)
    y, cycles = vmm_mul(VmmArray(ident), v)
    assert np.array_equal(y.data, v.data) and y.frac_bits == 15
    assert cycles == 4 == vmm_cycles(16, QuantSpec())
    z, _ = vmm_mul(VmmArray(Fixed(np.zeros((16, 16), dtype=np.int64), 16, 0)), v)
    assert not np.any(z.data)


def test_vmm_exhaustive_4bit():
    # every 4-bit input value against a random 4-bit 8x8 matrix
    r = np.random.default_rng(0)
    mat = Fixed(r.integers(-8, 8, (8, 8)), 4, 0)
    arr = VmmArray(mat)
    for val in range(-8, 8):
        v = Fixed(np.full(8, val), 4, 0)
        y, cycles = vmm_mul(arr, v)
        assert y.data.tolist() == (mat.data.astype(object) @ v.data.astype(object)).tolist()
        assert cycles == 1


@given(st.integers(1, 600), st.integers(1, 600), st.integers(0, 2 ** 32 - 1))
def test_vmm_tiled_matches_integer_oracle(rows, cols, seed):
    r = np.random.default_rng(seed)
    mat = Fixed(r.integers(-(1 << 15), 1 << 15, (rows, cols)), 16, 15)
    v = Fixed(r.integers(-(1 << 15), 1 << 15, cols), 16, 15)
    arr = VmmArray(mat, s=128)
    y, _ = vmm_mul(arr, v)
    assert arr.n_crossbars == -(-rows // 128) * -(-cols // 128) * 4
    assert y.data.tolist() == (mat.data.astype(object) @ v.data.astype(object)).tolist()


def test_vmm_dimension_mismatch():
    with pytest.raises(ValueError):
        vmm_mul(VmmArray(Fixed(np.eye(4, dtype=np.int64), 16, 0)), Fixed(np.ones(3, dtype=np.int64), 16, 0))


def test_inv_bank_diagonal_examples():
    spec = QuantSpec()
    e1 = Fixed(np.array([1, 0, 0, 0]), 4, 0)
    bank = InvBank(np.eye(4, dtype=np.int64), 0, spec)
    x = inv_solve_lowprec(bank, e1)
    assert x.to_float().tolist() == [1.0, 0, 0, 0] and x.bits == spec.r_adc
    bank2 = InvBank(2 * np.eye(4, dtype=np.int64), 0, spec)
    x2 = inv_solve_lowprec(bank2, e1)
    assert x2.to_float().tolist() == [0.5, 0, 0, 0]
    assert np.max(np.abs(x2.data)) <= 127


def test_inv_bank_matches_lu_oracle(rng):
    spec = QuantSpec()
    for _ in range(20):
        m = rng.standard_normal((8, 12))
        a = np.rint((m @ m.T / 12 + np.eye(8)) * 16).astype(np.int64)
        b = Fixed(rng.integers(-8, 8, 8), 4, 0)
        x = inv_solve_lowprec(InvBank(a, 4, spec), b)
        ref = np.linalg.solve(np.ldexp(a.astype(float), -4), b.to_float())
        # auto-ranged to r_adc bits: error at most half an ADC LSB
        assert np.max(np.abs(x.to_float() - ref)) <= 0.5 * x.ulp + 1e-12
        assert np.max(np.abs(x.data)) <= 127
        assert np.max(np.abs(x.data)) >= 64  # the range is used


def test_inv_bank_rejects_wide_slice_and_singular():
    bank = InvBank(np.eye(3, dtype=np.int64), 0)
    with pytest.raises(ValueError):
        inv_solve_lowprec(bank, Fixed(np.array([100, 0, 0]), 8, 0))
    with pytest.raises(NonConvergenceError):
        InvBank(np.ones((3, 3), dtype=np.int64), 0)
    with pytest.raises(ValueError):
        InvBank(np.ones((3, 2), dtype=np.int64), 0)


def test_inv_bank_write_events_and_noise_seeded():
    a = np.diag([100, 90, 80]).astype(np.int64)
    b1 = InvBank(a, 0, noise=0.8, seed=3)
    b2 = InvBank(a, 0, noise=0.8, seed=3)
    assert b1.write_events == 1 == b1.n_crossbars
    d = np.array([[5], [3], [1]])
    f = np.zeros(1, dtype=np.int64)
    y1, _ = b1.solve(d, f)
    y2, _ = b2.solve(d, f)
    assert np.array_equal(y1, y2)
    for _ in range(5):
        b1.solve(d, f)
    assert b1.write_events == 1  # solving never reprograms


def test_plan_occupation_examples():
    assert plan_inv_occupation(512, s=256) == 4
    assert plan_inv_occupation(1024, 256, fused=True) == 8
    assert plan_inv_occupation(1024, capacity=None) == 16
    assert plan_inv_occupation(256, 1024, fused=True) == 8
    assert plan_inv_occupation(256) == 1
    with pytest.raises(CapacityError):
        plan_inv_occupation(1280)
    with pytest.raises(ValueError):
        plan_inv_occupation(0)
    with pytest.raises(ValueError):
        plan_inv_occupation(4, fused=True)


def test_arch_defaults():
    cfg = ArchConfig()
    assert cfg.vmm_per_subtile == 28
    assert max_composable_dim(cfg) == 1024
