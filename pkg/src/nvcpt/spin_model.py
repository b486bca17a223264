"""NV ground-state spin model: operators, Hamiltonian and diagonalization.

Basis convention
----------------
All 9x9 matrices act on the product basis ``|mS> (x) |mI>`` with both
projections in descending order ``(+1, 0, -1)``; index ``3*a + b`` holds
``mS = 1 - a`` and ``mI = 1 - b`` (see :data:`BASIS_LABELS`).

Units: MHz for energies, Gauss for fields, degrees for angles at the
interface.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError, LabelError

BASIS_LABELS: tuple[tuple[int, int], ...] = tuple(
    (ms, mi) for ms in (1, 0, -1) for mi in (1, 0, -1)
)

# |amplitude| below this counts as zero when picking phases and sort keys
_ZERO = 1e-12


@dataclass(frozen=True)
class HamiltonianParams:
    """Constants of the ground-state Hamiltonian (MHz, MHz/G)."""

    D: float = 2870.0
    Q: float = -4.945
    gamma_e: float = 2.802
    gamma_n: float = 308e-6
    A_zz: float = -2.162
    A_xx: float = -2.62
    A_yy: float = -2.62

    def __post_init__(self) -> None:
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if not self.gamma_e > 0:
            raise ValueError(f"gamma_e must be positive, got {self.gamma_e}")
        if not self.gamma_n > 0:
            raise ValueError(f"gamma_n must be positive, got {self.gamma_n}")


@dataclass(frozen=True)
class MagneticField:
    """Static field: magnitude (G), polar tilt from the NV axis and azimuth (deg)."""

    magnitude: float = 0.0
    tilt: float = 0.0
    azimuth: float = 0.0

    def __post_init__(self) -> None:
        if self.magnitude < 0:
            raise ValueError(f"field magnitude must be >= 0, got {self.magnitude}")
        if not 0.0 <= self.tilt <= 180.0:
            raise ValueError(f"tilt must lie in [0, 180] degrees, got {self.tilt}")

    def cartesian(self) -> np.ndarray:
        """(Bx, By, Bz) in the NV frame."""
        theta = np.radians(self.tilt)
        phi = np.radians(self.azimuth)
        return self.magnitude * np.array(
            [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
        )


@dataclass(frozen=True)
class SpinOperatorSet:
    """Spin-1 matrices for the electron (S) and the 14N nucleus (I).

    The 3x3 forms live in the single-spin basis; :meth:`electron` and
    :meth:`nuclear` return the 9x9 operators lifted onto the product space.
    """

    Sx: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    Ix: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray

    def electron(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        eye = np.eye(3)
        return tuple(np.kron(op, eye) for op in (self.Sx, self.Sy, self.Sz))

    def nuclear(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        eye = np.eye(3)
        return tuple(np.kron(eye, op) for op in (self.Ix, self.Iy, self.Iz))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=1)
def spin1_operators() -> SpinOperatorSet:
    """Standard spin-1 matrices in the (+1, 0, -1) basis."""
    r = 1.0 / np.sqrt(2.0)
    sx = np.array([[0, r, 0], [r, 0, r], [0, r, 0]], dtype=complex)
    sy = np.array([[0, -1j * r, 0], [1j * r, 0, -1j * r], [0, 1j * r, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    ops = [_readonly(m) for m in (sx, sy, sz)]
    return SpinOperatorSet(*ops, *[_readonly(m) for m in ops])


@lru_cache(maxsize=1)
def _lifted() -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    ops = spin1_operators()
    return ops.electron(), ops.nuclear()


def build_hamiltonian(params: HamiltonianParams, field: MagneticField) -> np.ndarray:
    """9x9 ground-state Hamiltonian in MHz.

    ``H = D Sz^2 + gamma_e S.B + Q Iz^2 - gamma_n I.B + S.A.I`` with a
    diagonal hyperfine tensor ``A = diag(A_xx, A_yy, A_zz)``.
    """
    (sx, sy, sz), (ix, iy, iz) = _lifted()
    bx, by, bz = field.cartesian()
    h = params.D * (sz @ sz) + params.Q * (iz @ iz)
    h = h + params.gamma_e * (bx * sx + by * sy + bz * sz)
    h = h - params.gamma_n * (bx * ix + by * iy + bz * iz)
    h = h + params.A_xx * (sx @ ix) + params.A_yy * (sy @ iy) + params.A_zz * (sz @ iz)
    # scrub rounding asymmetry so the result is Hermitian bit-for-bit
    return 0.5 * (h + h.conj().T)


def check_hermitian(h: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Return ``h`` as a complex square array, raising if it is not Hermitian."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    err = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if err > atol:
        raise ValueError(f"matrix is not Hermitian (max asymmetry {err:.3g})")
    return h


def jacobi_eigh(
    h: np.ndarray, rtol: float = 1e-12, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic complex Jacobi diagonalization of a Hermitian matrix.

    Sweeps over all (p, q) pairs until the off-diagonal Frobenius norm drops
    below ``rtol * ||H||_F``. Returns unsorted eigenvalues and the matrix of
    eigenvectors (columns).
    """
    a = np.array(h, dtype=complex)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = np.linalg.norm(a)
    threshold = rtol * scale
    offdiag = ~np.eye(n, dtype=bool)
    for sweep in range(max_sweeps + 1):
        off = np.sqrt(np.sum(np.abs(a[offdiag]) ** 2))
        if off <= threshold:
            return np.real(np.diag(a)).copy(), v
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= 1e-3 * threshold / n:
                    # negligible (possibly subnormal) element: drop instead of rotating
                    a[p, q] = a[q, p] = 0.0
                    continue
                phase = apq / mag
                theta = 0.5 * np.arctan2(2.0 * mag, (a[p, p] - a[q, q]).real)
                c, s = np.cos(theta), np.sin(theta)
                rot = np.array([[c, -s * phase], [s * phase.conjugate(), c]])
                cols = a[:, [p, q]] @ rot
                a[:, p], a[:, q] = cols[:, 0], cols[:, 1]
                rows = rot.conj().T @ a[[p, q], :]
                a[p, :], a[q, :] = rows[0], rows[1]
                a[p, q] = a[q, p] = 0.0
                a[p, p], a[q, q] = a[p, p].real, a[q, q].real
                vc = v[:, [p, q]] @ rot
                v[:, p], v[:, q] = vc[:, 0], vc[:, 1]
    raise ConvergenceError(
        f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal norm {off:.3g})"
    )


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    mags = np.abs(vec)
    k = int(np.argmax(mags >= mags.max() - _ZERO))
    return vec * (abs(vec[k]) / vec[k])


def _sort_key(vec: np.ndarray) -> tuple[float, ...]:
    return tuple(-round(float(x), 12) for x in vec.real)


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues (ascending, MHz) and eigenvectors (columns) of a 9-level H.

    ``labels[k]`` is the dominant product-basis label ``(mS, mI)`` of state
    ``k`` with overlap ``weights[k]``; both are ``None`` until
    :func:`label_states` has been applied. ``ambiguous`` lists states whose
    dominant component had to be given up during greedy assignment.
    """

    values: np.ndarray
    vectors: np.ndarray
    labels: tuple[tuple[int, int], ...] | None = None
    weights: np.ndarray | None = None
    ambiguous: tuple[int, ...] = ()
    hamiltonian: np.ndarray | None = None
    params: HamiltonianParams | None = None
    field: MagneticField | None = dc_field(default=None)

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def require_labels(self) -> tuple[tuple[int, int], ...]:
        if self.labels is None:
            raise LabelError("eigensystem is not labeled; call label_states first")
        return self.labels

    def index(self, label: tuple[int, int]) -> int:
        """Index of the state carrying ``label``."""
        try:
            return self.require_labels().index(tuple(label))
        except ValueError:
            raise LabelError(f"no state labeled {label}") from None

    def hamiltonian_eigenbasis(self) -> np.ndarray:
        """``V^dagger H V``; diagonal unless near-degenerate states were aligned."""
        if self.hamiltonian is None:
            return np.diag(self.values).astype(complex)
        return self.vectors.conj().T @ self.hamiltonian @ self.vectors


def eigensolve(h: np.ndarray, rtol: float = 1e-12, max_sweeps: int = 100) -> EigenSystem:
    """Diagonalize a Hermitian matrix with cyclic Jacobi rotations.

    Eigenvalues come back ascending. Each eigenvector is phase-fixed so its
    largest-magnitude component is real positive; exactly degenerate
    eigenvalues are ordered by a lexicographic comparison of the
    phase-normalized real parts. Identical input gives identical output.
    """
    h = check_hermitian(h, atol=1e-12 * max(1.0, np.max(np.abs(h))))
    values, vectors = jacobi_eigh(h, rtol=rtol, max_sweeps=max_sweeps)
    vectors = np.column_stack([_fix_phase(vectors[:, k]) for k in range(len(values))])
    tie = 1e-12 * max(1.0, float(np.max(np.abs(values))))
    order = sorted(range(len(values)), key=lambda k: values[k])
    # stable re-sort inside clusters of exactly degenerate eigenvalues
    grouped: list[int] = []
    start = 0
    while start < len(order):
        stop = start + 1
        while stop < len(order) and values[order[stop]] - values[order[start]] <= tie:
            stop += 1
        block = order[start:stop]
        grouped.extend(sorted(block, key=lambda k: _sort_key(vectors[:, k])))
        start = stop
    return EigenSystem(values=values[grouped], vectors=vectors[:, grouped], hamiltonian=h)


def diagonalize(params: HamiltonianParams, field: MagneticField, **label_kw) -> EigenSystem:
    """Build, solve and label the Hamiltonian for one field point."""
    eig = eigensolve(build_hamiltonian(params, field))
    eig = replace(eig, params=params, field=field)
    return label_states(eig, **label_kw)


def overlap_matrix(a: EigenSystem, b: EigenSystem) -> np.ndarray:
    """``|<a_j|b_k>|^2`` indexed ``[k, j]``."""
    return (np.abs(a.vectors.conj().T @ b.vectors) ** 2).T


def _greedy(weights: np.ndarray) -> tuple[list[int], list[int]]:
    """Assign each row a distinct column, largest weights first."""
    n = weights.shape[0]
    flat = sorted(
        ((weights[k, j], k, j) for k in range(n) for j in range(weights.shape[1])),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    owner = [-1] * n
    taken: set[int] = set()
    for _, k, j in flat:
        if owner[k] < 0 and j not in taken:
            owner[k] = j
            taken.add(j)
    ambiguous = [k for k in range(n) if owner[k] != int(np.argmax(weights[k]))]
    return owner, ambiguous


def _align_clusters(eig: EigenSystem, tol: float) -> EigenSystem:
    """Rotate near-degenerate clusters onto the product basis.

    Inside a cluster of levels closer than ``tol`` MHz the eigenbasis is not
    resolvable, so we pick the basis that diagonalizes the product-label
    operator ``3 mS + mI`` restricted to the cluster. Energies become the
    diagonal of ``V^dagger H V``.
    """
    values = eig.values.copy()
    vectors = eig.vectors.copy()
    h = eig.hamiltonian if eig.hamiltonian is not None else (
        vectors @ np.diag(values) @ vectors.conj().T
    )
    (_, _, sz), (_, _, iz) = _lifted()
    tag = 3.0 * sz + iz
    n = len(values)
    changed = False
    k = 0
    while k < n:
        j = k
        while j + 1 < n and values[j + 1] - values[j] < tol:
            j += 1
        if j > k:
            block = vectors[:, k : j + 1]
            _, rot = np.linalg.eigh(block.conj().T @ tag @ block)
            new = block @ rot[:, ::-1]
            new = np.column_stack([_fix_phase(new[:, c]) for c in range(new.shape[1])])
            ritz = np.real(np.einsum("ia,ij,ja->a", new.conj(), h, new))
            order = np.argsort(ritz, kind="stable")
            vectors[:, k : j + 1] = new[:, order]
            values[k : j + 1] = ritz[order]
            changed = True
        k = j + 1
    if not changed:
        return eig
    return replace(eig, values=values, vectors=vectors, hamiltonian=h)


def label_states(
    eig: EigenSystem,
    previous: EigenSystem | None = None,
    degeneracy_tol: float = 0.02,
) -> EigenSystem:
    """Attach dominant ``|mS, mI>`` labels to every eigenstate.

    By default each state gets the product label with the largest
    ``|amplitude|^2``; collisions are settled greedily in descending overlap
    and recorded in ``ambiguous``. With ``previous`` given, labels are carried
    over from the previous scan point by maximal state overlap instead
    (adiabatic tracking).

    Levels closer than ``degeneracy_tol`` MHz are treated as one degenerate
    cluster and re-expressed in the product-aligned basis first; pass 0 to
    keep the raw eigenvectors.
    """
    if degeneracy_tol > 0:
        eig = _align_clusters(eig, degeneracy_tol)
    amp2 = np.abs(eig.vectors.T) ** 2  # [state, basis index]
    if previous is None:
        owner, ambiguous = _greedy(amp2)
        labels = tuple(BASIS_LABELS[j] for j in owner)
    else:
        prev_labels = previous.require_labels()
        owner, ambiguous = _greedy(overlap_matrix(previous, eig))
        labels = tuple(prev_labels[j] for j in owner)
    weights = np.array([amp2[k, BASIS_LABELS.index(lab)] for k, lab in enumerate(labels)])
    return replace(eig, labels=labels, weights=weights, ambiguous=tuple(ambiguous))


def manifold_of(label: tuple[int, int]) -> int:
    """Electron projection of a label (0 for the lower manifold)."""
    return label[0]
