"""Open-system dynamics of the driven, optically pumped NV ground state.

All dynamics run in the (labeled) eigenbasis of the static Hamiltonian.
Frequencies and Hamiltonians are in MHz (cycles per microsecond), times in
microseconds and dissipative rates in 1/us; the coherent generator therefore
carries a factor ``2 pi``. Density matrices are vectorized row-major, so
``vec(A rho B) = (A kron B^T) vec(rho)``.

Two integrators are provided:

* :func:`evolve`: fixed-step classical RK4 in the interaction frame in which
  each level rotates at its own eigenfrequency (optionally without the
  rotating-wave approximation). Used for validation and trajectories.
* :class:`SequenceEngine`: exact propagators in a manifold frame (lower
  levels at rest, upper levels rotating at the first tone's frequency). The
  first tone is then static and a second tone is periodic in the detuning
  between the tones, so segments are propagated with ``expm`` or a
  fourth-order commutator-free Magnus scheme over one period raised to a
  matrix power. Used for scans.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import expm, null_space
from scipy.signal import find_peaks

from .errors import (
    InsufficientExtremaError,
    InvariantError,
    LabelError,
    NoDipError,
    StepSizeError,
)
from .spin_model import BASIS_LABELS, EigenSystem
from .transitions import DriveVector, coupling_matrix, name_pairs

TWO_PI = 2.0 * math.pi
DEFAULT_CUTOFF = 50.0
DEFAULT_CONTRAST = 0.3
LARMOR_STANDARD = 1.0705  # kHz/G, 13C
LARMOR_LITERAL = 0.535  # kHz/G


# ---------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class DissipatorConfig:
    """Effective relaxation rates (1/us).

    ``gamma_pump`` repolarizes mS = +/-1 into mS = 0 while the laser is on; a
    fraction ``p_flip`` of those cycles lands in a random nitrogen state.
    """

    gamma_pump: float = 1.0
    p_flip: float = 0.1
    gamma_2e: float = 0.05
    gamma_2n: float = 0.001
    gamma_1: float = 0.0

    def __post_init__(self) -> None:
        for name in ("gamma_pump", "gamma_2e", "gamma_2n", "gamma_1"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.p_flip <= 1.0:
            raise ValueError(f"p_flip must lie in [0, 1], got {self.p_flip}")

    def max_rate(self, laser: bool) -> float:
        return max(self.gamma_pump if laser else 0.0, 2 * self.gamma_2e, 2 * self.gamma_2n,
                   self.gamma_1)


@dataclass(frozen=True)
class ToneConfig:
    """One microwave tone: frequency (MHz), amplitude (G), phase (rad)."""

    frequency: float
    rabi_scale: float = 0.0
    phase: float = 0.0
    target: str | None = None

    def __post_init__(self) -> None:
        if not self.frequency > 0:
            raise ValueError(f"tone frequency must be > 0, got {self.frequency}")
        if not self.rabi_scale >= 0:
            raise ValueError(f"tone amplitude must be >= 0, got {self.rabi_scale}")


@dataclass(frozen=True)
class Segment:
    duration: float
    laser: bool = False
    tones: tuple[ToneConfig, ...] = ()
    record: str | None = None
    mw: bool = False

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ValueError(f"segment duration must be > 0, got {self.duration}")
        if self.record not in (None, "ref", "signal"):
            raise ValueError(f"record must be None, 'ref' or 'signal', got {self.record!r}")
        object.__setattr__(self, "tones", tuple(self.tones))


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("a pulse sequence needs at least one segment")
        for kind in ("ref", "signal"):
            if sum(s.record == kind for s in self.segments) > 1:
                raise ValueError(f"at most one {kind!r} window per shot")

    def with_tones(self, tones: Sequence[ToneConfig]) -> "PulseSequence":
        """Copy with ``tones`` placed on the microwave segments.

        Segments flagged ``mw`` receive the tones; without any flag the
        signal window does.
        """
        flagged = any(s.mw for s in self.segments)
        return PulseSequence(tuple(
            replace(s, tones=tuple(tones))
            if (s.mw if flagged else s.record == "signal") else s
            for s in self.segments
        ))


def cpt_sequence(init_us: float = 20.0, ref_us: float = 2.0, window_us: float = 130.0,
                 tones: Sequence[ToneConfig] = ()) -> PulseSequence:
    """Laser initialization, a laser-only reference window, then a laser-on
    window with the microwave tones applied that records the signal."""
    return PulseSequence((
        Segment(init_us, laser=True),
        Segment(ref_us, laser=True, record="ref"),
        Segment(window_us, laser=True, tones=tuple(tones), record="signal", mw=True),
    ))


def pulsed_sequence(mw_us: float, tones: Sequence[ToneConfig] = (), init_us: float = 20.0,
                    readout_us: float = 0.3) -> PulseSequence:
    """Laser init with reference readout, a dark microwave pulse, then readout."""
    return PulseSequence((
        Segment(init_us, laser=True),
        Segment(readout_us, laser=True, record="ref"),
        Segment(mw_us, laser=False, tones=tuple(tones), mw=True),
        Segment(readout_us, laser=True, record="signal"),
    ))


# ---------------------------------------------------------------------------
# density matrices and readout


def check_density_matrix(rho: np.ndarray, herm_tol: float = 1e-10, trace_tol: float = 1e-9,
                         eig_tol: float = 1e-8) -> dict[str, float]:
    """Return invariant diagnostics; raise ``InvariantError`` if violated."""
    rho = np.asarray(rho)
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    tr = float(abs(np.trace(rho) - 1.0))
    mine = float(np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))))
    diag = {"hermiticity": herm, "trace_error": tr, "min_eigenvalue": mine}
    if herm > herm_tol or tr > trace_tol or mine < -eig_tol:
        raise InvariantError(f"density matrix invariants violated: {diag}")
    return diag


def readout_weights(labels: Sequence[tuple[int, int]], contrast: float = DEFAULT_CONTRAST) -> np.ndarray:
    return np.array([1.0 if lab[0] == 0 else 1.0 - contrast for lab in labels])


def readout_signal(rho: np.ndarray, labels: Sequence[tuple[int, int]] | None = None,
                   contrast: float = DEFAULT_CONTRAST) -> float:
    """Fluorescence: mS = 0 population plus ``1 - contrast`` times the rest.

    ``labels`` give the ``(mS, mI)`` of each basis state of ``rho``; the
    default is the product basis.
    """
    labels = BASIS_LABELS if labels is None else labels
    pops = np.real(np.diag(rho))
    return float(readout_weights(labels, contrast) @ pops)


# ---------------------------------------------------------------------------
# superoperators


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator of ``-2 pi i [h, .]`` (row-major vectorization)."""
    n = h.shape[0]
    eye = np.eye(n)
    return -1j * TWO_PI * (np.kron(h, eye) - np.kron(eye, h.T))


def dissipator_superop(ops: Iterable[np.ndarray], n: int) -> np.ndarray:
    """Sum of ``L rho L^dag - {L^dag L, rho}/2`` superoperators."""
    eye = np.eye(n)
    out = np.zeros((n * n, n * n), dtype=complex)
    for op in ops:
        ldl = op.conj().T @ op
        out += np.kron(op, op.conj()) - 0.5 * np.kron(ldl, eye) - 0.5 * np.kron(eye, ldl.T)
    return out


def _dissipate(rho: np.ndarray, ops: Sequence[np.ndarray]) -> np.ndarray:
    out = np.zeros_like(rho)
    for op in ops:
        ldl = op.conj().T @ op
        out += op @ rho @ op.conj().T - 0.5 * (ldl @ rho + rho @ ldl)
    return out


# ---------------------------------------------------------------------------
# the driven system in the eigenbasis


@dataclass(frozen=True)
class Coupling:
    lower: int
    upper: int
    tone: int
    amplitude: complex  # <lower| H |upper> prefactor, MHz
    detuning: float  # tone frequency minus transition frequency, MHz


class DrivenSystem:
    """Eigenbasis data shared by all integrators for one static field."""

    def __init__(self, eig: EigenSystem, drive: DriveVector | None = None,
                 cutoff: float = DEFAULT_CUTOFF, contrast: float = DEFAULT_CONTRAST):
        if not cutoff > 0:
            raise ValueError("RWA cutoff must be > 0")
        self.eig = eig
        self.labels = eig.require_labels()
        self.drive = drive or DriveVector()
        self.cutoff = float(cutoff)
        self.contrast = float(contrast)
        self.n = eig.dim
        self.energies = np.asarray(eig.values, dtype=float)
        self.h0 = eig.hamiltonian_eigenbasis()
        self.h0 = 0.5 * (self.h0 + self.h0.conj().T)
        self.x = coupling_matrix(eig, self.drive)
        gamma_e = eig.params.gamma_e if eig.params is not None else 2.802
        self.gamma_e = float(gamma_e)
        self.ms = np.array([lab[0] for lab in self.labels])
        self.mi = np.array([lab[1] for lab in self.labels])
        self.lower = np.flatnonzero(self.ms == 0)
        self.upper = np.flatnonzero(self.ms != 0)
        self.weights = readout_weights(self.labels, self.contrast)
        self._diss_cache: dict = {}
        # within-cluster residual of the aligned basis; roundoff elsewhere is
        # dropped so it cannot set the integration step
        off = self.h0 - np.diag(np.diag(self.h0))
        off[np.abs(off) < 1e-12 * max(1.0, float(np.max(np.abs(self.energies))))] = 0.0
        self.h0_offdiag = off

    # -- transitions -------------------------------------------------------
    def frequency(self, name: str) -> float:
        i, f = name_pairs(self.eig)[name]
        return float(self.energies[f] - self.energies[i])

    def pair(self, name: str) -> tuple[int, int]:
        return name_pairs(self.eig)[name]

    def rabi_frequency(self, name: str, amplitude: float) -> float:
        i, f = self.pair(name)
        return self.gamma_e * amplitude * abs(self.x[f, i])

    def couplings(self, tones: Sequence[ToneConfig], exact: bool = False) -> list[Coupling]:
        """Lower/upper pairs addressed by each tone within the RWA cutoff."""
        out = []
        for k, tone in enumerate(tones):
            if tone.rabi_scale == 0:
                continue
            for i in self.lower:
                for f in self.upper:
                    w = self.energies[f] - self.energies[i]
                    det = tone.frequency - w
                    if exact or abs(det) < self.cutoff:
                        amp = 0.5 * self.gamma_e * tone.rabi_scale * self.x[i, f]
                        out.append(Coupling(int(i), int(f), k, complex(amp), float(det)))
        return out

    # -- dissipation -------------------------------------------------------
    def jump_operators(self, diss: DissipatorConfig, laser: bool) -> list[np.ndarray]:
        n = self.n
        idx = {lab: k for k, lab in enumerate(self.labels)}
        ops: list[np.ndarray] = []

        def proj(a: int, b: int, rate: float) -> np.ndarray:
            m = np.zeros((n, n), dtype=complex)
            m[a, b] = math.sqrt(rate)
            return m

        if laser and diss.gamma_pump > 0:
            for u in self.upper:
                m = int(self.mi[u])
                keep = diss.gamma_pump * (1.0 - diss.p_flip)
                if keep > 0:
                    ops.append(proj(idx[(0, m)], u, keep))
                if diss.p_flip > 0:
                    for m2 in (1, 0, -1):
                        ops.append(proj(idx[(0, m2)], u, diss.gamma_pump * diss.p_flip / 3.0))
        if diss.gamma_1 > 0:
            for (s, m), a in idx.items():
                for s2 in (1, 0, -1):
                    if s2 != s:
                        ops.append(proj(idx[(s2, m)], a, diss.gamma_1))
        if diss.gamma_2e > 0:
            ops.append(math.sqrt(2.0 * diss.gamma_2e) * np.diag(self.ms).astype(complex))
        if diss.gamma_2n > 0:
            d = np.where(self.ms == 0, self.mi, 0).astype(complex)
            ops.append(math.sqrt(2.0 * diss.gamma_2n) * np.diag(d))
        return ops

    def dissipator(self, diss: DissipatorConfig, laser: bool) -> np.ndarray:
        key = (diss, bool(laser))
        if key not in self._diss_cache:
            self._diss_cache[key] = dissipator_superop(self.jump_operators(diss, laser), self.n)
        return self._diss_cache[key]

    def readout_row(self) -> np.ndarray:
        r = np.zeros(self.n * self.n, dtype=complex)
        r[np.arange(self.n) * (self.n + 1)] = self.weights
        return r

    def readout(self, rho: np.ndarray) -> float:
        return float(self.weights @ np.real(np.diag(rho)))


def interaction_hamiltonian(eig: EigenSystem | DrivenSystem, tones: Sequence[ToneConfig], t: float,
                            rwa_cutoff: float = DEFAULT_CUTOFF,
                            drive: DriveVector | None = None) -> np.ndarray:
    """Drive Hamiltonian (MHz) in the frame where every level rotates at its
    own eigenfrequency, under a per-transition rotating-wave approximation.

    Element ``[i, f]`` (lower ``i``, upper ``f``) of a tone is
    ``gamma_e (A/2) <i|S.d|f> exp(i (2 pi (nu - w_fi) t + phi))`` and kept
    only if ``|nu - w_fi| < rwa_cutoff``. Residual couplings inside
    near-degenerate clusters of the aligned eigenbasis are included at their
    own (slow) rotation frequency.
    """
    system = eig if isinstance(eig, DrivenSystem) else DrivenSystem(eig, drive, rwa_cutoff)
    return _interaction_h(system, tones, t, exact=False)


def _interaction_h(system: DrivenSystem, tones: Sequence[ToneConfig], t: float,
                   exact: bool) -> np.ndarray:
    e = system.energies
    h = system.h0_offdiag * np.exp(1j * TWO_PI * np.subtract.outer(e, e) * t)
    if exact:
        # full cosine drive rotated into the eigenframe
        rot = np.exp(1j * TWO_PI * np.subtract.outer(e, e) * t)
        for tone in tones:
            amp = system.gamma_e * tone.rabi_scale * math.cos(TWO_PI * tone.frequency * t + tone.phase)
            h = h + amp * system.x * rot
        return h
    for c in system.couplings(tones):
        phase = TWO_PI * c.detuning * t + tones[c.tone].phase
        val = c.amplitude * np.exp(1j * phase)
        h[c.lower, c.upper] += val
        h[c.upper, c.lower] += np.conj(val)
    return h


# ---------------------------------------------------------------------------
# RK4 trajectories


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # [n_records, n, n]
    labels: tuple[tuple[int, int], ...]
    contrast: float = DEFAULT_CONTRAST

    def readout(self) -> np.ndarray:
        w = readout_weights(self.labels, self.contrast)
        return np.real(np.einsum("tkk->tk", self.states)) @ w

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _max_frequency(system: DrivenSystem, tones: Sequence[ToneConfig], exact: bool) -> float:
    e = system.energies
    f = 0.0
    offd = np.abs(system.h0_offdiag) > 0
    if np.any(offd):
        f = max(f, float(np.max(np.abs(np.subtract.outer(e, e))[offd])))
    if exact:
        f = max(f, max((t.frequency for t in tones), default=0.0) + float(np.ptp(e)))
    else:
        for c in system.couplings(tones):
            f = max(f, abs(c.detuning))
    return f


def max_step(system: DrivenSystem, tones: Sequence[ToneConfig], diss: DissipatorConfig,
             laser: bool, exact: bool = False) -> float:
    """Largest admissible RK4 step (us) for the given drive and rates."""
    rabi = max((system.gamma_e * t.rabi_scale * float(np.max(np.abs(system.x))) for t in tones),
               default=0.0)
    if exact:
        return 1.0 / (100.0 * max(_max_frequency(system, tones, True), 1e-12))
    scale = max(rabi, diss.max_rate(laser), _max_frequency(system, tones, False), 1e-12)
    return 0.01 / scale


def evolve(
    rho0: np.ndarray,
    eig: EigenSystem | DrivenSystem,
    tones: Sequence[ToneConfig],
    diss: DissipatorConfig,
    laser: bool,
    duration: float,
    dt: float,
    drive: DriveVector | None = None,
    rwa_cutoff: float = DEFAULT_CUTOFF,
    exact: bool = False,
    record_every: int = 1,
    t0: float = 0.0,
) -> Trajectory:
    """Integrate the Lindblad equation with fixed-step classical RK4.

    The state lives in the interaction frame of :func:`interaction_hamiltonian`
    (populations are frame independent). ``exact=True`` drops the
    rotating-wave approximation and keeps the full cosine drive; it needs
    ``dt <= 1/(100 f_max)`` and is meant for short validation runs.

    Raises ``StepSizeError`` if ``dt`` exceeds the admissible step or the
    trace drifts by more than 1e-6 over any 1000 steps.
    """
    system = eig if isinstance(eig, DrivenSystem) else DrivenSystem(eig, drive, rwa_cutoff)
    tones = tuple(tones)
    if not duration > 0 or not dt > 0:
        raise ValueError("duration and dt must be positive")
    bound = max_step(system, tones, diss, laser, exact)
    if dt > bound * (1 + 1e-12):
        raise StepSizeError(f"dt = {dt:g} us exceeds the admissible step {bound:g} us")
    n_steps = int(round(duration / dt))
    if n_steps < 1 or abs(n_steps * dt - duration) > 1e-9 * max(duration, 1.0):
        raise ValueError("duration must be an integer multiple of dt")
    ops = system.jump_operators(diss, laser)
    dsup = dissipator_superop(ops, system.n) if ops else None
    n = system.n

    # H(t) = sum_m C_m exp(2 pi i w_m t): precompute coefficient stack
    coeffs, freqs, consts = _drive_expansion(system, tones, exact)

    def h_at(t):
        h = consts.copy()
        if freqs.size:
            h += np.tensordot(np.exp(1j * TWO_PI * freqs * t), coeffs, axes=1)
        return h

    def rhs(t, rho):
        h = h_at(t)
        out = -1j * TWO_PI * (h @ rho - rho @ h)
        if dsup is not None:
            out += (dsup @ rho.reshape(-1)).reshape(n, n)
        return out

    rho = np.array(rho0, dtype=complex)
    times = [t0]
    states = [rho.copy()]
    tr_ref = np.trace(rho).real
    t = t0
    for k in range(1, n_steps + 1):
        k1 = rhs(t, rho)
        k2 = rhs(t + dt / 2, rho + dt / 2 * k1)
        k3 = rhs(t + dt / 2, rho + dt / 2 * k2)
        k4 = rhs(t + dt, rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + k * dt
        if k % 1000 == 0:
            tr = np.trace(rho).real
            if abs(tr - tr_ref) > 1e-6:
                raise StepSizeError(f"trace drift {tr - tr_ref:.3g} over 1000 steps; reduce dt")
            tr_ref = tr
        if k % record_every == 0 or k == n_steps:
            times.append(t)
            states.append(rho.copy())
    return Trajectory(np.array(times), np.array(states), system.labels, system.contrast)


def _drive_expansion(system: DrivenSystem, tones: Sequence[ToneConfig], exact: bool):
    """Write the interaction Hamiltonian as ``consts + sum_m C_m e^{2 pi i w_m t}``."""
    n = system.n
    e = system.energies
    terms: dict[float, np.ndarray] = {}

    def add(w: float, mat: np.ndarray):
        key = round(float(w), 12)
        terms[key] = terms.get(key, np.zeros((n, n), dtype=complex)) + mat

    offd = system.h0_offdiag
    for a, b in zip(*np.nonzero(np.abs(offd) > 0)):
        m = np.zeros((n, n), dtype=complex)
        m[a, b] = offd[a, b]
        add(e[a] - e[b], m)
    if exact:
        for tone in tones:
            if tone.rabi_scale == 0:
                continue
            amp = 0.5 * system.gamma_e * tone.rabi_scale
            for a in range(n):
                for b in range(n):
                    if system.x[a, b] == 0:
                        continue
                    for sign in (1, -1):
                        m = np.zeros((n, n), dtype=complex)
                        m[a, b] = amp * system.x[a, b] * np.exp(1j * sign * tone.phase)
                        add(e[a] - e[b] + sign * tone.frequency, m)
    else:
        for c in system.couplings(tones):
            phi = tones[c.tone].phase
            m = np.zeros((n, n), dtype=complex)
            m[c.lower, c.upper] = c.amplitude * np.exp(1j * phi)
            add(c.detuning, m)
            m = np.zeros((n, n), dtype=complex)
            m[c.upper, c.lower] = np.conj(c.amplitude) * np.exp(-1j * phi)
            add(-c.detuning, m)
    consts = terms.pop(0.0, np.zeros((n, n), dtype=complex))
    if not terms:
        return np.zeros((0, n, n), dtype=complex), np.zeros(0), consts
    keys = sorted(terms)
    return np.array([terms[k] for k in keys]), np.array(keys), consts


# ---------------------------------------------------------------------------
# exact segment propagation in the manifold frame

# fourth-order commutator-free Magnus (two exponentials, Gauss nodes)
_GAUSS = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)
_CF4_A = ((3 - 2 * math.sqrt(3)) / 12, (3 + 2 * math.sqrt(3)) / 12)


class SequenceEngine:
    """Propagates pulse sequences with exact segment propagators.

    In the manifold frame the lower levels are at rest and the upper levels
    rotate at ``w_ref`` (the first tone of a segment; tone-less segments keep
    the previous frame). The generator of a segment is
    ``A(tau) = A_s + sum_k (M_k e^{i theta_k} + N_k e^{-i theta_k})`` with one
    rotating pair per tone whose frequency differs from ``w_ref``. Static
    segments use ``expm``; periodic ones use the commutator-free Magnus
    scheme over one period (``steps_per_period`` steps, never longer than
    ``max_step``) and a matrix power. A readout row is appended to the
    generator so record windows are integrated exactly alongside the state.
    """

    def __init__(self, system: DrivenSystem, diss: DissipatorConfig,
                 steps_per_period: int = 32, max_step: float = 0.1, cache_size: int = 64):
        self.system = system
        self.diss = diss
        self.steps_per_period = int(steps_per_period)
        self.max_step = float(max_step)
        n = system.n
        self.dim = n * n
        self.r = system.readout_row()
        self._cache: dict = {}
        self._cache_size = cache_size
        self.w0 = float(np.mean(system.energies[system.upper]) - np.mean(system.energies[system.lower]))

    # -- generators --------------------------------------------------------
    def _augment(self, a: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim + 1, self.dim + 1), dtype=complex)
        out[: self.dim, : self.dim] = a
        out[self.dim, : self.dim] = self.r
        return out

    def _frame_h0(self, w_ref: float) -> np.ndarray:
        s = self.system
        f = np.where(s.ms == 0, 0.0, w_ref)
        return s.h0 - np.diag(f)

    def generator_parts(self, tones: Sequence[ToneConfig], laser: bool, w_ref: float, t0: float):
        """Static generator and rotating terms ``(delta, M, N)`` for a segment."""
        s = self.system
        n = s.n
        h_static = self._frame_h0(w_ref).astype(complex)
        rotating: dict[float, np.ndarray] = {}
        for c in s.couplings(tones):
            tone = tones[c.tone]
            delta = tone.frequency - w_ref
            phase = TWO_PI * delta * t0 + tone.phase
            p = np.zeros((n, n), dtype=complex)
            p[c.lower, c.upper] = c.amplitude * np.exp(1j * phase)
            key = round(delta, 12)
            if key == 0.0:
                h_static = h_static + p + p.conj().T
            else:
                rotating[key] = rotating.get(key, np.zeros((n, n), dtype=complex)) + p
        a_s = commutator_superop(h_static) + s.dissipator(self.diss, laser)
        rot = [(d, commutator_superop(p), commutator_superop(p.conj().T))
               for d, p in sorted(rotating.items())]
        return a_s, rot

    # -- propagators -------------------------------------------------------
    def _cf4_step(self, a_s, rot, tau: float, h: float) -> np.ndarray:
        mats = []
        for c in _GAUSS:
            a = a_s.copy()
            t = tau + c * h
            for d, m, nn in rot:
                z = np.exp(1j * TWO_PI * d * t)
                a += m * z + nn * np.conj(z)
            mats.append(self._augment(a))
        a1, a2 = mats
        first = expm(h * (_CF4_A[1] * a1 + _CF4_A[0] * a2))
        second = expm(h * (_CF4_A[0] * a1 + _CF4_A[1] * a2))
        return second @ first

    def _stepped(self, a_s, rot, start: float, length: float, h_target: float) -> np.ndarray:
        k = max(1, math.ceil(length / h_target - 1e-9))
        h = length / k
        u = np.eye(self.dim + 1, dtype=complex)
        for j in range(k):
            u = self._cf4_step(a_s, rot, start + j * h, h) @ u
        return u

    def propagator(self, tones: Sequence[ToneConfig], laser: bool, duration: float,
                   w_ref: float, t0: float) -> np.ndarray:
        """Augmented propagator of one segment (state plus running readout)."""
        tones = tuple(tones)
        key = (tones, bool(laser), round(duration, 12), round(w_ref, 9), round(t0, 12))
        if key in self._cache:
            return self._cache[key]
        a_s, rot = self.generator_parts(tones, laser, w_ref, t0)
        if not rot:
            u = expm(self._augment(a_s) * duration)
        elif len(rot) == 1:
            period = 1.0 / abs(rot[0][0])
            n_per = int(duration // period)
            if n_per >= 1:
                h = min(period / self.steps_per_period, self.max_step)
                u_p = self._stepped(a_s, rot, 0.0, period, h)
                u = np.linalg.matrix_power(u_p, n_per)
                rest = duration - n_per * period
                if rest > 1e-12 * period:
                    u = self._stepped(a_s, rot, 0.0, rest, h) @ u
            else:
                h = min(period / self.steps_per_period, self.max_step)
                u = self._stepped(a_s, rot, 0.0, duration, h)
        else:
            fastest = max(abs(d) for d, _, _ in rot)
            h = min(1.0 / (fastest * self.steps_per_period), self.max_step)
            u = self._stepped(a_s, rot, 0.0, duration, h)
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = u
        return u

    # -- sequences ---------------------------------------------------------
    def _reframe(self, vec: np.ndarray, w_old: float, w_new: float, t: float) -> np.ndarray:
        if w_old == w_new:
            return vec
        s = self.system
        f_old = np.where(s.ms == 0, 0.0, w_old)
        f_new = np.where(s.ms == 0, 0.0, w_new)
        # rho_frame = e^{i 2 pi F t} rho_lab e^{-i 2 pi F t}
        ph_old = np.exp(1j * TWO_PI * np.subtract.outer(f_old, f_old) * t)
        ph_new = np.exp(1j * TWO_PI * np.subtract.outer(f_new, f_new) * t)
        rho = vec.reshape(s.n, s.n) / ph_old * ph_new
        return rho.reshape(-1)

    def run(self, seq: PulseSequence, rho0: np.ndarray | None = None) -> "SequenceResult":
        s = self.system
        if rho0 is None:
            rho0 = np.eye(s.n, dtype=complex) / s.n
        vec = np.asarray(rho0, dtype=complex).reshape(-1)
        w = self.w0
        t = 0.0
        windows: dict[str, float] = {}
        for seg in seq.segments:
            w_new = seg.tones[0].frequency if seg.tones else w
            vec = self._reframe(vec, w, w_new, t)
            w = w_new
            u = self.propagator(seg.tones, seg.laser, seg.duration, w, t)
            y = u @ np.append(vec, 0.0)
            vec = y[: self.dim]
            if seg.record:
                windows[seg.record] = float(np.real(y[self.dim])) / seg.duration
            t += seg.duration
        rho_f = vec.reshape(s.n, s.n)
        return SequenceResult(windows.get("ref"), windows.get("signal"), rho_f)


@dataclass
class SequenceResult:
    ref: float | None
    signal: float | None
    final_state: np.ndarray = field(repr=False)

    @property
    def output(self) -> float:
        if self.ref is None or self.signal is None:
            raise ValueError("sequence lacks a ref or signal window")
        return self.ref - self.signal


def run_sequence(seq: PulseSequence, eig: EigenSystem | DrivenSystem, diss: DissipatorConfig,
                 drive: DriveVector | None = None, noise_sigma: float = 0.0,
                 seed: int | None = None, engine: SequenceEngine | None = None) -> tuple[float, float, float]:
    """Return ``(ref, signal, ref - signal)`` for one shot of ``seq``.

    Each record window reports the time-averaged fluorescence. Optional
    Gaussian readout noise (``noise_sigma`` per window) is seeded.
    """
    if not any(s.record == "ref" for s in seq.segments) or not any(
            s.record == "signal" for s in seq.segments):
        raise ValueError("sequence needs both a 'ref' and a 'signal' record window")
    system = eig if isinstance(eig, DrivenSystem) else DrivenSystem(eig, drive)
    engine = engine or SequenceEngine(system, diss)
    res = engine.run(seq)
    ref, sig = res.ref, res.signal
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        ref += rng.normal(0.0, noise_sigma)
        sig += rng.normal(0.0, noise_sigma)
    return ref, sig, ref - sig


# ---------------------------------------------------------------------------
# Rabi oscillations


@dataclass
class RabiResult:
    times: np.ndarray
    signal: np.ndarray
    frequency: float  # extracted, MHz
    expected: float  # gamma_e * amplitude * |matrix element|, MHz
    transition: str


def laser_pumped_state(system: DrivenSystem, diss: DissipatorConfig, duration: float | None = None) -> np.ndarray:
    """Maximally mixed state after ``duration`` us of laser (default 50/gamma_pump)."""
    n = system.n
    if diss.gamma_pump == 0:
        return np.eye(n, dtype=complex) / n
    duration = 50.0 / diss.gamma_pump if duration is None else duration
    gen = commutator_superop(system.h0 - np.diag(np.diag(system.h0))) + system.dissipator(diss, True)
    vec = expm(gen * duration) @ (np.eye(n, dtype=complex) / n).reshape(-1)
    rho = vec.reshape(n, n)
    return 0.5 * (rho + rho.conj().T)


def extract_oscillation_frequency(times: np.ndarray, signal: np.ndarray) -> float:
    """Oscillation frequency from the spacing of interior minima (MHz).

    Minima are refined by parabolic interpolation. Returns 0 when fewer
    than two minima are found (flat trace).
    """
    y = np.asarray(signal, dtype=float)
    if y.size < 5 or np.ptp(y) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        return 0.0
    idx, _ = find_peaks(-y, prominence=0.1 * np.ptp(y))
    if idx.size < 2:
        return 0.0
    dt = times[1] - times[0]
    refined = []
    for i in idx:
        ym, y0, yp = y[i - 1], y[i], y[i + 1]
        den = ym - 2 * y0 + yp
        off = 0.5 * (ym - yp) / den if den != 0 else 0.0
        refined.append(times[i] + off * dt)
    return (len(refined) - 1) / (refined[-1] - refined[0])


def simulate_rabi(
    eig: EigenSystem | DrivenSystem,
    transition_name: str,
    tone: ToneConfig,
    diss: DissipatorConfig,
    duration: float,
    dt: float,
    drive: DriveVector | None = None,
) -> RabiResult:
    """Resonant single-tone drive of a named line from the laser-pumped state.

    The tone frequency is replaced by the transition frequency; the laser is
    off during the drive. Returns the readout trace sampled every ``dt`` and
    the oscillation frequency extracted from it.
    """
    system = eig if isinstance(eig, DrivenSystem) else DrivenSystem(eig, drive)
    try:
        freq = system.frequency(transition_name)
    except KeyError:
        raise ValueError(f"unknown transition name {transition_name!r}") from None
    tone = replace(tone, frequency=freq, target=transition_name)
    n_steps = int(round(duration / dt))
    if n_steps < 1:
        raise ValueError("duration must cover at least one step")
    rho0 = laser_pumped_state(system, diss)
    engine = SequenceEngine(system, diss)
    a_s, rot = engine.generator_parts((tone,), False, freq, 0.0)
    assert not rot
    step = expm(a_s * dt)
    vec = rho0.reshape(-1)
    out = np.empty(n_steps + 1)
    w = system.weights
    diag = np.arange(system.n) * (system.n + 1)
    out[0] = float(np.real(vec[diag]) @ w)
    for k in range(1, n_steps + 1):
        vec = step @ vec
        out[k] = float(np.real(vec[diag]) @ w)
    times = np.arange(n_steps + 1) * dt
    return RabiResult(
        times=times,
        signal=out,
        frequency=extract_oscillation_frequency(times, out),
        expected=system.rabi_frequency(transition_name, tone.rabi_scale),
        transition=transition_name,
    )


# ---------------------------------------------------------------------------
# scans


@dataclass
class CptScanResult:
    probe_frequencies: np.ndarray
    signal: np.ndarray
    pump_frequencies: np.ndarray | None = None
    ref: np.ndarray | None = None
    raw_signal: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.probe_frequencies = np.asarray(self.probe_frequencies, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.pump_frequencies is None:
            if self.signal.shape != self.probe_frequencies.shape:
                raise ValueError("signal length must match the probe grid")
        else:
            self.pump_frequencies = np.asarray(self.pump_frequencies, dtype=float)
            shape = (self.pump_frequencies.size, self.probe_frequencies.size)
            if self.signal.shape != shape:
                raise ValueError(f"2D signal must have shape {shape}")

    @property
    def is_2d(self) -> bool:
        return self.pump_frequencies is not None

    def to_csv(self) -> str:
        if self.is_2d:
            lines = ["pump_mhz,probe_mhz,signal"]
            for i, pf in enumerate(self.pump_frequencies.tolist()):
                for j, f in enumerate(self.probe_frequencies.tolist()):
                    lines.append(f"{pf!r},{f!r},{float(self.signal[i, j])!r}")
        else:
            lines = ["probe_mhz,signal"]
            lines += [f"{f!r},{v!r}" for f, v in
                      zip(self.probe_frequencies.tolist(), self.signal.tolist())]
        return "\n".join(lines) + "\n"


def read_scan_csv(path: str | Path) -> CptScanResult:
    """Read a scan written by :meth:`CptScanResult.to_csv`.

    Accepts ``probe_mhz,signal`` (1-D) or ``pump_mhz,probe_mhz,signal``
    (2-D, row-major). Raises ValueError on malformed content.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header not in (["probe_mhz", "signal"], ["pump_mhz", "probe_mhz", "signal"]):
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError:
        raise ValueError(f"{path}: non-numeric data row") from None
    if data.size == 0 or data.shape[1] != len(header):
        raise ValueError(f"{path}: no data rows or ragged rows")
    if len(header) == 2:
        return CptScanResult(data[:, 0], data[:, 1])
    pumps = np.unique(data[:, 0])
    probes = data[: data.shape[0] // pumps.size, 1]
    if pumps.size * probes.size != data.shape[0]:
        raise ValueError(f"{path}: 2-D scan is not a full grid")
    return CptScanResult(probes, data[:, 2].reshape(pumps.size, probes.size), pump_frequencies=pumps)


def _ascending(grid, what: str) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValueError(f"{what} grid must be a non-empty 1-D sequence")
    if g.size > 1 and not np.all(np.diff(g) > 0):
        raise ValueError(f"{what} grid must be strictly ascending")
    return g


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _metadata(system: DrivenSystem, diss: DissipatorConfig, **extra) -> dict:
    f = system.eig.field
    meta = {
        "field": None if f is None else {"magnitude": f.magnitude, "tilt": f.tilt,
                                          "azimuth": f.azimuth},
        "dissipators": {k: getattr(diss, k) for k in
                        ("gamma_pump", "p_flip", "gamma_2e", "gamma_2n", "gamma_1")},
        "drive_direction": list(system.drive.direction),
        "readout_contrast": system.contrast,
        "rwa_cutoff_mhz": system.cutoff,
    }
    meta.update(extra)
    return meta


def _tone_dict(t: ToneConfig) -> dict:
    return {"frequency": t.frequency, "rabi_scale": t.rabi_scale, "phase": t.phase,
            "target": t.target}


def odmr_scan(eig: EigenSystem | DrivenSystem, probe: ToneConfig, probe_grid,
              diss: DissipatorConfig, seq_template: PulseSequence | None = None,
              drive: DriveVector | None = None, workers: int = 1) -> CptScanResult:
    """Single-tone ODMR: the probe tone swept over ``probe_grid``."""
    return cpt_scan(eig, None, probe_grid, diss, seq_template, probe=probe, drive=drive,
                    workers=workers)


def cpt_scan(
    eig: EigenSystem | DrivenSystem,
    pump: ToneConfig | None,
    probe_grid,
    diss: DissipatorConfig,
    seq_template: PulseSequence | None = None,
    probe: ToneConfig | None = None,
    drive: DriveVector | None = None,
    workers: int = 1,
    engine: SequenceEngine | None = None,
) -> CptScanResult:
    """Two-tone scan: fixed pump plus a probe swept over ``probe_grid``.

    Each grid point runs ``seq_template`` (default :func:`cpt_sequence`) with
    pump and probe applied together on the signal window, and reports
    ``ref - signal``. ``pump=None`` gives ordinary single-tone ODMR.
    """
    system = eig if isinstance(eig, DrivenSystem) else DrivenSystem(eig, drive)
    grid = _ascending(probe_grid, "probe")
    seq_template = seq_template or cpt_sequence()
    probe = probe or ToneConfig(frequency=float(grid[0]), rabi_scale=0.05)
    engine = engine or SequenceEngine(system, diss)

    def point(f):
        tones = [replace(probe, frequency=float(f))]
        if pump is not None:
            tones.insert(0, pump)
        res = engine.run(seq_template.with_tones(tones))
        return res.ref, res.signal

    vals = _map(point, list(grid), workers)
    ref = np.array([v[0] for v in vals])
    sig = np.array([v[1] for v in vals])
    return CptScanResult(
        probe_frequencies=grid,
        signal=ref - sig,
        ref=ref,
        raw_signal=sig,
        metadata=_metadata(system, diss, pump=None if pump is None else _tone_dict(pump),
                           probe=_tone_dict(probe)),
    )


def cpt_2d_scan(eig: EigenSystem | DrivenSystem, pump_grid, probe_grid, diss: DissipatorConfig,
                pump: ToneConfig | None = None, probe: ToneConfig | None = None,
                seq_template: PulseSequence | None = None, drive: DriveVector | None = None,
                workers: int = 1) -> CptScanResult:
    """Pump x probe grid of two-tone outputs (row-major, pump index first)."""
    system = eig if isinstance(eig, DrivenSystem) else DrivenSystem(eig, drive)
    pumps = _ascending(pump_grid, "pump")
    probes = _ascending(probe_grid, "probe")
    pump = pump or ToneConfig(frequency=float(pumps[0]), rabi_scale=0.5)
    engine = SequenceEngine(system, diss)
    rows = [
        cpt_scan(system, replace(pump, frequency=float(p)), probes, diss, seq_template,
                 probe=probe, workers=workers, engine=engine).signal
        for p in pumps
    ]
    return CptScanResult(
        probe_frequencies=probes,
        signal=np.array(rows),
        pump_frequencies=pumps,
        metadata=_metadata(system, diss, pump=_tone_dict(pump),
                           probe=None if probe is None else _tone_dict(probe)),
    )


def locate_dip(freqs: np.ndarray, values: np.ndarray,
               window: tuple[float, float] | None = None) -> tuple[float, float]:
    """Position and depth of the most prominent local minimum.

    Depth is the topographic prominence of the minimum (height of the lower
    of the two bounding maxima above it); the position is refined by a
    parabola through the minimum and its neighbours.
    """
    f = np.asarray(freqs, float)
    y = np.asarray(values, float)
    if window is not None:
        m = (f >= window[0]) & (f <= window[1])
        f, y = f[m], y[m]
    if f.size < 3:
        raise NoDipError("too few points to locate a dip")
    idx, props = find_peaks(-y, prominence=0.0)
    if idx.size == 0:
        raise NoDipError("no interior dip found")
    j = int(np.argmax(props["prominences"]))
    k = int(idx[j])
    ym, y0, yp = y[k - 1], y[k], y[k + 1]
    den = ym - 2 * y0 + yp
    off = 0.5 * (ym - yp) / den if den > 0 else 0.0
    step = 0.5 * (f[k + 1] - f[k - 1])
    return float(f[k] + off * step), float(props["prominences"][j])


# ---------------------------------------------------------------------------
# contrast metrics


@dataclass(frozen=True)
class ContrastReport:
    f_r: float
    A_EIT_at_fr: float
    A_ODMR_at_fr: float
    delta_A: float
    apparent: float
    true_contrast: float

    def to_dict(self) -> dict:
        return {
            "f_r": self.f_r,
            "A_EIT_at_fr": self.A_EIT_at_fr,
            "A_ODMR_at_fr": self.A_ODMR_at_fr,
            "delta_A": self.delta_A,
            "apparent": self.apparent,
            "true_contrast": self.true_contrast,
        }


def contrast_metrics(cpt: CptScanResult, odmr_reference: CptScanResult, baseline_points: int = 5,
                     min_relative_dip: float = 1e-3) -> ContrastReport:
    """Apparent and true CPT contrast.

    Baselines ``b`` are the means of the ``baseline_points`` outermost
    points on each side (far-detuned probe). With ``A_ODMR(f) = odmr - b_odmr``
    and ``A_EIT(f) = A_ODMR(f) - (cpt - b_cpt)``, the fringe ``f_r`` is the
    maximum of ``A_EIT``, ``delta_A = b_cpt - b_odmr`` and

    ``apparent = A_EIT(f_r) / A_ODMR(f_r)``,
    ``true = A_EIT(f_r) / (A_ODMR(f_r) + delta_A)``.
    """
    f = cpt.probe_frequencies
    if cpt.is_2d or odmr_reference.is_2d:
        raise ValueError("contrast metrics need one-dimensional scans")
    if f.shape != odmr_reference.probe_frequencies.shape or not np.allclose(
            f, odmr_reference.probe_frequencies, rtol=0, atol=1e-9):
        raise ValueError("CPT and ODMR scans must share the probe grid")
    k = int(baseline_points)
    if k < 1 or 2 * k >= f.size:
        raise ValueError("baseline_points must leave interior points")

    def baseline(y):
        return float(np.mean(np.concatenate([y[:k], y[-k:]])))

    y_cpt, y_odmr = cpt.signal, odmr_reference.signal
    b_cpt, b_odmr = baseline(y_cpt), baseline(y_odmr)
    a_odmr = y_odmr - b_odmr
    a_eit = a_odmr - (y_cpt - b_cpt)
    j = int(np.argmax(a_eit))
    scale = float(np.max(np.abs(a_odmr)))
    if not a_eit[j] > min_relative_dip * max(scale, 1e-300):
        raise NoDipError("no CPT dip above the detection threshold")
    delta_a = b_cpt - b_odmr
    a_e, a_o = float(a_eit[j]), float(a_odmr[j])
    return ContrastReport(
        f_r=float(f[j]),
        A_EIT_at_fr=a_e,
        A_ODMR_at_fr=a_o,
        delta_A=float(delta_a),
        apparent=a_e / a_o,
        true_contrast=a_e / (a_o + delta_a),
    )


# ---------------------------------------------------------------------------
# Larmor comparison and wing modulation


def larmor_frequency(b_gauss: float, constant_mode: str = "standard") -> float:
    """13C Larmor frequency in kHz.

    ``standard`` uses 1.0705 kHz/G; ``literal`` uses 0.535 kHz/G, which gives
    half the commonly quoted values.
    """
    if not b_gauss >= 0:
        raise ValueError(f"field must be >= 0, got {b_gauss}")
    try:
        g = {"standard": LARMOR_STANDARD, "literal": LARMOR_LITERAL}[constant_mode]
    except KeyError:
        raise ValueError(f"constant_mode must be 'standard' or 'literal', got {constant_mode!r}") from None
    return g * b_gauss


def larmor_report(b_gauss: float) -> dict:
    std = larmor_frequency(b_gauss, "standard")
    lit = larmor_frequency(b_gauss, "literal")
    return {
        "field_g": b_gauss,
        "standard_khz": std,
        "literal_khz": lit,
        "standard_constant_khz_per_g": LARMOR_STANDARD,
        "literal_constant_khz_per_g": LARMOR_LITERAL,
        "note": ("the literal 0.535 kHz/G constant gives half the standard 13C value; "
                 "quoted reference values (32 kHz at 30 G, 48 kHz at 45 G) follow the "
                 "standard constant"),
    }


@dataclass(frozen=True)
class ModulationResult:
    period_khz: float
    n_extrema: int
    larmor_standard_khz: float | None = None
    larmor_literal_khz: float | None = None


def modulation_period(scan: CptScanResult, field_g: float | None = None, detrend_degree: int = 3,
                      min_extrema: int = 3, rel_threshold: float = 0.2) -> ModulationResult:
    """Spacing of the wing modulation of a scan, as a frequency in kHz.

    The scan is detrended with a low-order polynomial; extrema whose
    prominence exceeds ``rel_threshold`` times the residual range are kept
    and the period is twice the median spacing of consecutive extrema.
    """
    f = scan.probe_frequencies
    y = np.asarray(scan.signal, dtype=float)
    if scan.is_2d:
        raise ValueError("modulation analysis needs a one-dimensional scan")
    x = (f - f.mean()) / max(np.ptp(f), 1e-300)
    resid = y - np.polyval(np.polyfit(x, y, detrend_degree), x)
    rng = float(np.ptp(resid))
    if rng <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        raise InsufficientExtremaError("scan has no wing modulation")
    prom = rel_threshold * rng
    hi, _ = find_peaks(resid, prominence=prom)
    lo, _ = find_peaks(-resid, prominence=prom)
    ext = np.sort(np.concatenate([hi, lo]))
    if ext.size < min_extrema:
        raise InsufficientExtremaError(f"found {ext.size} extrema, need {min_extrema}")
    period_mhz = 2.0 * float(np.median(np.diff(f[ext])))
    return ModulationResult(
        period_khz=1e3 * period_mhz,
        n_extrema=int(ext.size),
        larmor_standard_khz=None if field_g is None else larmor_frequency(field_g, "standard"),
        larmor_literal_khz=None if field_g is None else larmor_frequency(field_g, "literal"),
    )


# ---------------------------------------------------------------------------
# reduced three-level model


@dataclass(frozen=True)
class ReducedLambda:
    kind: str  # "lambda" or "V"
    levels: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]  # (side 1, side 2, common)
    frequencies: tuple[float, float]
    matrix_elements: tuple[float, float]
    splitting: float  # energy(side 2) - energy(side 1), MHz


def reduce_lambda(eig: EigenSystem, level_triple: Sequence[tuple[int, int]],
                  drive: DriveVector | None = None) -> ReducedLambda:
    """Three labeled levels forming a Lambda (two lower, one upper) or V."""
    labels = [tuple(l) for l in level_triple]
    if len(labels) != 3 or len(set(labels)) != 3:
        raise ValueError(f"need three distinct levels, got {level_triple}")
    idx = [eig.index(l) for l in labels]
    lower = [k for k, l in zip(idx, labels) if l[0] == 0]
    upper = [k for k, l in zip(idx, labels) if l[0] != 0]
    if len(lower) == 2 and len(upper) == 1:
        kind, sides, common = "lambda", sorted(lower, key=lambda k: eig.values[k]), upper[0]
    elif len(lower) == 1 and len(upper) == 2:
        kind, sides, common = "V", sorted(upper, key=lambda k: eig.values[k]), lower[0]
    else:
        raise LabelError("levels do not share a common state across the manifolds")
    x = np.abs(coupling_matrix(eig, drive or DriveVector()))
    e = eig.values
    freqs = tuple(float(abs(e[common] - e[s])) for s in sides)
    elems = tuple(float(x[common, s]) for s in sides)
    return ReducedLambda(
        kind=kind,
        levels=(eig.labels[sides[0]], eig.labels[sides[1]], eig.labels[common]),
        frequencies=freqs,
        matrix_elements=elems,
        splitting=float(e[sides[1]] - e[sides[0]]),
    )


def lambda_steady_state(omega1: float, omega2: float, delta1: float = 0.0, delta2: float = 0.0,
                        gamma: float = 1.0, gamma_g: float = 0.0) -> np.ndarray:
    """Steady state of a three-level Lambda system, basis ``(g1, g2, e)``.

    ``omega1``, ``omega2`` are Rabi frequencies (MHz) on ``g1-e`` and
    ``g2-e``, ``delta1``, ``delta2`` the one-photon detunings (MHz),
    ``gamma`` the excited-state decay rate split equally into both ground
    states, and ``gamma_g`` a ground-coherence dephasing rate.
    """
    h = np.array([
        [0.0, 0.0, omega1 / 2],
        [0.0, delta1 - delta2, omega2 / 2],
        [omega1 / 2, omega2 / 2, delta1],
    ], dtype=complex)
    ops = []
    for g in (0, 1):
        m = np.zeros((3, 3), dtype=complex)
        m[g, 2] = math.sqrt(gamma / 2)
        ops.append(m)
    if gamma_g > 0:
        ops.append(math.sqrt(2 * gamma_g) * np.diag([0.5, -0.5, 0.0]).astype(complex))
    gen = commutator_superop(h) + dissipator_superop(ops, 3)
    ns = null_space(gen)
    if ns.shape[1] != 1:
        raise InvariantError(f"steady state not unique (kernel dimension {ns.shape[1]})")
    rho = ns[:, 0].reshape(3, 3)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def dark_state(omega1: float, omega2: float) -> np.ndarray:
    """Normalized ``omega2 |g1> - omega1 |g2>`` in the basis ``(g1, g2, e)``."""
    v = np.array([omega2, -omega1, 0.0], dtype=complex)
    return v / np.linalg.norm(v)
