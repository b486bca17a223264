from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from nvcpt.errors import ConvergenceError, LabelError
from nvcpt.spin_model import (
    BASIS_LABELS,
    HamiltonianParams,
    MagneticField,
    build_hamiltonian,
    check_hermitian,
    diagonalize,
    eigensolve,
    jacobi_eigh,
    label_states,
    spin1_operators,
)

# frozen from numpy.linalg.eigvalsh on the independently built oracle Hamiltonian
EIG_30G_88 = [
    -7.408532969499, -7.404311703583, -2.457540606536, 2861.043979882, 2864.833377178,
    2867.732268998, 2868.049633324, 2871.526276860, 2874.414849037,
]
EIG_ZERO_FIELD = [
    -4.947387661085, -4.947387661085, -4.788189060803e-03, 2862.893, 2862.893,
    2867.217, 2867.221788189, 2870.002387661, 2870.002387661,
]

field_st = st.builds(
    MagneticField,
    magnitude=st.floats(0.0, 200.0),
    tilt=st.floats(0.0, 180.0),
    azimuth=st.floats(-360.0, 360.0),
)
params_st = st.builds(
    HamiltonianParams,
    D=st.floats(100.0, 5000.0),
    Q=st.floats(-10.0, 10.0),
    gamma_e=st.floats(0.1, 5.0),
    gamma_n=st.floats(1e-5, 1e-2),
    A_zz=st.floats(-5.0, 5.0),
    A_xx=st.floats(-5.0, 5.0),
    A_yy=st.floats(-5.0, 5.0),
)


# --------------------------------------------------------------------- operators


def test_sz_is_diagonal_basis():
    ops = spin1_operators()
    assert np.array_equal(ops.Sz, np.diag([1, 0, -1]))
    assert np.allclose(np.abs(ops.Sx[0, 1]), 1 / np.sqrt(2), atol=0, rtol=1e-15)


@pytest.mark.parametrize("which", ["S", "I"])
def test_angular_momentum_algebra(which):
    ops = spin1_operators()
    x, y, z = (ops.Sx, ops.Sy, ops.Sz) if which == "S" else (ops.Ix, ops.Iy, ops.Iz)
    for a, b, c in ((x, y, z), (y, z, x), (z, x, y)):
        assert np.max(np.abs(a @ b - b @ a - 1j * c)) < 1e-15
    for m in (x, y, z):
        assert np.array_equal(m, m.conj().T)
    assert np.allclose(x @ x + y @ y + z @ z, 2 * np.eye(3), atol=1e-15)
    assert np.trace(z @ z).real == 2.0
    assert sorted(np.linalg.eigvalsh(z).round(12)) == [-1, 0, 1]


def test_operators_match_ladder_oracle():
    ops = spin1_operators()
    for mine, ref in zip((ops.Sx, ops.Sy, ops.Sz), oracles.spin1()):
        assert np.allclose(mine, ref, atol=1e-15)


def test_operators_read_only():
    with pytest.raises(ValueError):
        spin1_operators().Sx[0, 0] = 1.0


# --------------------------------------------------------------------- params


def test_default_constants_exact():
    p = HamiltonianParams()
    assert (p.D, p.Q, p.gamma_e, p.gamma_n) == (2870.0, -4.945, 2.802, 308e-6)
    assert (p.A_zz, p.A_xx, p.A_yy) == (-2.162, -2.62, -2.62)


@pytest.mark.parametrize("kw", [{"D": 0.0}, {"gamma_e": -1.0}, {"gamma_n": 0.0}])
def test_params_reject_nonphysical(kw):
    with pytest.raises(ValueError):
        HamiltonianParams(**kw)


@pytest.mark.parametrize("kw", [{"magnitude": -1.0}, {"tilt": -0.1}, {"tilt": 180.5}])
def test_field_rejects_invalid(kw):
    with pytest.raises(ValueError):
        MagneticField(**kw)


@given(field_st)
def test_field_cartesian_norm(f):
    b = f.cartesian()
    assert abs(np.linalg.norm(b) - f.magnitude) <= 1e-12 * max(f.magnitude, 1.0)


# --------------------------------------------------------------------- Hamiltonian


def test_zero_field_trace():
    h = build_hamiltonian(HamiltonianParams(), MagneticField())
    assert np.trace(h).real == pytest.approx(17190.33, rel=1e-12)


@pytest.mark.parametrize("b,tilt,az", [(0, 0, 0), (30, 88, 0), (30, 0, 0), (150, 37, 71)])
def test_hamiltonian_matches_oracle(b, tilt, az):
    h = build_hamiltonian(HamiltonianParams(), MagneticField(b, tilt, az))
    assert np.max(np.abs(h - oracles.hamiltonian(b, tilt, az))) < 1e-10


def test_nuclear_zeeman_sign():
    p = HamiltonianParams(A_zz=0, A_xx=0, A_yy=0, Q=0, D=1.0)
    h = build_hamiltonian(p, MagneticField(100.0, 0.0))
    # |0,+1> sits at -gamma_n B
    assert h[4 - 1, 4 - 1].real == pytest.approx(-p.gamma_n * 100.0)


@settings(max_examples=2000)
@given(params_st, field_st)
def test_hermitian_and_trace_invariant(p, f):
    h = build_hamiltonian(p, f)
    assert np.array_equal(h, h.conj().T)
    tr = np.trace(h).real
    assert tr == pytest.approx(6 * p.D + 6 * p.Q, rel=1e-9, abs=1e-9)


@given(field_st)
def test_axial_field_conserves_mi_within_manifold(f):
    f = MagneticField(f.magnitude, 0.0, f.azimuth)
    h = build_hamiltonian(HamiltonianParams(), f)
    for a, (ms, mi) in enumerate(BASIS_LABELS):
        for b, (ms2, mi2) in enumerate(BASIS_LABELS):
            if ms == ms2 and mi != mi2:
                assert h[a, b] == 0


def test_check_hermitian_rejects():
    m = np.zeros((3, 3), complex)
    m[0, 1] = 1.0
    with pytest.raises(ValueError):
        check_hermitian(m)
    with pytest.raises(ValueError):
        check_hermitian(np.zeros((2, 3)))


# --------------------------------------------------------------------- eigensolver


def test_identity_and_diagonal():
    e = eigensolve(np.eye(9))
    assert np.array_equal(e.values, np.ones(9))
    assert np.allclose(e.vectors.conj().T @ e.vectors, np.eye(9), atol=1e-15)
    d = np.diag(np.arange(9, 0, -1.0))
    e = eigensolve(d)
    assert np.array_equal(e.values, np.arange(1.0, 10.0))
    assert np.array_equal(np.abs(e.vectors), np.eye(9)[:, ::-1])


@pytest.mark.parametrize("b,tilt,ref", [(30, 88, EIG_30G_88), (0, 0, EIG_ZERO_FIELD)])
def test_eigenvalues_match_oracle(b, tilt, ref):
    e = eigensolve(build_hamiltonian(HamiltonianParams(), MagneticField(b, tilt)))
    assert np.allclose(e.values, ref, rtol=0, atol=2e-9)


def test_eigen_invariants_30g_88():
    h = build_hamiltonian(HamiltonianParams(), MagneticField(30, 88))
    e = eigensolve(h)
    v = e.vectors
    assert np.max(np.abs(v.conj().T @ v - np.eye(9))) < 1e-10
    scale = np.linalg.norm(h)
    for k in range(9):
        assert np.linalg.norm(h @ v[:, k] - e.values[k] * v[:, k]) <= 1e-8 * scale
    rec = v @ np.diag(e.values) @ v.conj().T
    assert np.linalg.norm(rec - h) <= 1e-8 * scale
    assert np.all(np.diff(e.values) >= 0)


def test_phase_convention_and_determinism():
    h = build_hamiltonian(HamiltonianParams(), MagneticField(30, 88))
    a, b = eigensolve(h), eigensolve(h.copy())
    assert np.array_equal(a.values, b.values) and np.array_equal(a.vectors, b.vectors)
    for k in range(9):
        col = a.vectors[:, k]
        j = int(np.argmax(np.abs(col)))
        assert abs(col[j].imag) < 1e-15 and col[j].real > 0


@given(params_st, field_st)
def test_reconstruction_property(p, f):
    h = build_hamiltonian(p, f)
    e = eigensolve(h)
    rec = e.vectors @ np.diag(e.values) @ e.vectors.conj().T
    assert np.linalg.norm(rec - h) <= 1e-8 * np.linalg.norm(h)
    assert np.allclose(e.values, np.linalg.eigvalsh(h), rtol=0, atol=1e-8 * np.linalg.norm(h))


def test_sweep_cap_raises():
    h = build_hamiltonian(HamiltonianParams(), MagneticField(30, 88))
    with pytest.raises(ConvergenceError):
        jacobi_eigh(h, max_sweeps=0)


def test_eigenvalue_continuity_fine_tilt_sweep():
    p = HamiltonianParams()
    tilts = np.arange(0.0, 90.0 + 1e-9, 0.1)
    vals = np.array([eigensolve(build_hamiltonian(p, MagneticField(30, t))).values for t in tilts])
    bound = p.gamma_e * 30 * np.pi / 1800
    assert np.max(np.abs(np.diff(vals, axis=0))) <= 10 * bound


# --------------------------------------------------------------------- labels


def test_zero_field_lowest_states_are_ms0():
    e = diagonalize(HamiltonianParams(), MagneticField())
    assert [lab[0] for lab in e.labels[:3]] == [0, 0, 0]
    k = e.index((0, 0))
    assert e.values[k] == pytest.approx(-4.788189060803e-03, abs=1e-9)


def test_diagonal_h_weights_one():
    d = np.diag(np.arange(9.0))
    e = label_states(eigensolve(d))
    assert np.array_equal(e.weights, np.ones(9))
    assert sorted(e.labels) == sorted(BASIS_LABELS)


def test_labels_30g_88(eig88):
    assert sorted(eig88.labels) == sorted(BASIS_LABELS)
    assert np.all(eig88.weights > 1 / 9) and np.all(eig88.weights <= 1 + 1e-12)
    assert [lab[0] for lab in eig88.labels[:3]] == [0, 0, 0]
    # upper states are non-degenerate: compositions must match the numpy oracle
    w, v = np.linalg.eigh(oracles.hamiltonian(30, 88))
    for k in range(3, 9):
        assert np.allclose(np.abs(eig88.vectors[:, k]) ** 2, np.abs(v[:, k]) ** 2, atol=1e-9)
    # the |+1,+1> / |-1,+1> pair is strongly mixed by the transverse field
    for lab in ((1, 1), (-1, 1)):
        k = eig88.index(lab)
        amp = np.abs(eig88.vectors[:, k]) ** 2
        assert amp[BASIS_LABELS.index((1, 1))] > 0.2 and amp[BASIS_LABELS.index((-1, 1))] > 0.2
    assert eig88.weights[eig88.index((1, 0))] > 0.9


def test_cluster_alignment_preserves_subspace(eig88):
    raw = eigensolve(build_hamiltonian(HamiltonianParams(), MagneticField(30, 88)))
    # the |0,+-1> pair spans the same two-dimensional subspace before and after
    p_raw = raw.vectors[:, :2] @ raw.vectors[:, :2].conj().T
    p_lab = eig88.vectors[:, :2] @ eig88.vectors[:, :2].conj().T
    assert np.max(np.abs(p_raw - p_lab)) < 1e-12
    assert eig88.values[:2].sum() == pytest.approx(raw.values[:2].sum(), abs=1e-10)
    untouched = diagonalize(HamiltonianParams(), MagneticField(30, 88), degeneracy_tol=0.0)
    assert np.array_equal(untouched.values, raw.values)


def test_unlabeled_access_raises():
    e = eigensolve(np.eye(9))
    with pytest.raises(LabelError):
        e.require_labels()
    with pytest.raises(LabelError):
        diagonalize(HamiltonianParams(), MagneticField()).index((2, 0))
