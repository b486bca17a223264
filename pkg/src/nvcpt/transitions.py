"""Microwave transitions between the mS = 0 and mS = +/-1 manifolds.

Naming follows the usual level scheme for a near-perpendicular field. Inside
the mS = +/-1 manifolds the states come in pairs of equal nuclear label; the
higher-energy member of each pair forms the "+" branch and the lower one the
"-" branch. Allowed lines (nuclear label conserved) are

* ``1`` / ``1-``: mI = -1
* ``2`` / ``2-``: mI = 0
* ``3`` / ``3-``: mI = +1

and the named forbidden lines all end on the "+" branch:

* ``c``: |0,-1> -> (+, mI=0)
* ``d``: |0,+1> -> (+, mI=0)
* ``a``: |0, 0> -> (+, mI=-1)
* ``b``: |0, 0> -> (+, mI=+1)

``c-d`` denotes the unresolved c/d pair, reported at the mean frequency.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConvergenceError, LabelError, StepSizeError, UnderdeterminedError
from .lsq import levenberg_marquardt
from .spin_model import (
    EigenSystem,
    HamiltonianParams,
    MagneticField,
    _lifted,
    build_hamiltonian,
    diagonalize,
    eigensolve,
    label_states,
    overlap_matrix,
)

ALLOWED_NAMES = {-1: "1", 0: "2", 1: "3"}
TRANSITION_NAMES = ("1", "2", "3", "1-", "2-", "3-", "a", "b", "c", "d")
COMPOSITE_NAMES = {"c-d": ("c", "d")}

_DEFAULT_DIRECTION = (1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0), 0.0)


@dataclass(frozen=True)
class DriveVector:
    """Linearly polarized microwave field: amplitude (G) and unit direction.

    The direction is normalized on construction. ``include_nuclear`` adds the
    nuclear Zeeman coupling ``-(gamma_n/gamma_e) I.d`` to the drive operator.
    """

    amplitude: float = 1.0
    direction: tuple[float, float, float] = _DEFAULT_DIRECTION
    include_nuclear: bool = False

    def __post_init__(self) -> None:
        if not self.amplitude >= 0:
            raise ValueError(f"drive amplitude must be >= 0, got {self.amplitude}")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or not np.all(np.isfinite(d)):
            raise ValueError(f"direction must be a finite 3-vector, got {self.direction}")
        n = float(np.linalg.norm(d))
        if n == 0.0:
            raise ValueError("drive direction must be nonzero")
        object.__setattr__(self, "direction", tuple(float(x) for x in d / n))

    def rotated(self, azimuth_deg: float) -> "DriveVector":
        """Copy rotated about the NV axis by ``azimuth_deg``."""
        c, s = math.cos(math.radians(azimuth_deg)), math.sin(math.radians(azimuth_deg))
        x, y, z = self.direction
        return replace(self, direction=(c * x - s * y, s * x + c * y, z))


def drive_operator(drive: DriveVector, params: HamiltonianParams | None = None) -> np.ndarray:
    """Product-basis operator ``S.d`` (optionally ``- (gamma_n/gamma_e) I.d``)."""
    (sx, sy, sz), (ix, iy, iz) = _lifted()
    dx, dy, dz = drive.direction
    op = dx * sx + dy * sy + dz * sz
    if drive.include_nuclear:
        p = params or HamiltonianParams()
        op = op - (p.gamma_n / p.gamma_e) * (dx * ix + dy * iy + dz * iz)
    return op


def coupling_matrix(eig: EigenSystem, drive: DriveVector) -> np.ndarray:
    """Drive operator in the eigenbasis, ``X[f, i] = <f| S.d |i>``."""
    v = eig.vectors
    return v.conj().T @ drive_operator(drive, eig.params) @ v


@dataclass(frozen=True)
class Transition:
    lower_label: tuple[int, int]
    upper_label: tuple[int, int]
    frequency: float
    matrix_element: float
    cls: str
    name: str | None = None
    lower_index: int = -1
    upper_index: int = -1

    @property
    def allowed(self) -> bool:
        return self.cls == "allowed"


def _fmt_label(lab: tuple[int, int]) -> str:
    return f"|{lab[0]:+d},{lab[1]:+d}>".replace("+0", "0")


@dataclass(frozen=True)
class TransitionTable:
    field: MagneticField | None
    transitions: tuple[Transition, ...]

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    def by_name(self, name: str) -> Transition:
        for t in self.transitions:
            if t.name == name:
                return t
        raise KeyError(f"no transition named {name!r}")

    def frequency(self, name: str) -> float:
        """Frequency of a named line; ``c-d`` is the mean of ``c`` and ``d``."""
        if name in COMPOSITE_NAMES:
            return float(np.mean([self.by_name(n).frequency for n in COMPOSITE_NAMES[name]]))
        return self.by_name(name).frequency

    def named(self) -> dict[str, Transition]:
        return {t.name: t for t in self.transitions if t.name}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "lower", "upper", "frequency_mhz", "matrix_element", "class"])
        for t in self.transitions:
            w.writerow([t.name or "", _fmt_label(t.lower_label), _fmt_label(t.upper_label),
                        repr(t.frequency), repr(t.matrix_element), t.cls])
        return buf.getvalue()

    def to_dict(self) -> dict:
        f = self.field
        return {
            "field": None if f is None else
            {"magnitude": f.magnitude, "tilt": f.tilt, "azimuth": f.azimuth},
            "transitions": [
                {
                    "name": t.name,
                    "lower": list(t.lower_label),
                    "upper": list(t.upper_label),
                    "frequency_mhz": t.frequency,
                    "matrix_element": t.matrix_element,
                    "class": t.cls,
                }
                for t in self.transitions
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def name_pairs(eig: EigenSystem) -> dict[str, tuple[int, int]]:
    """Map each transition name to its ``(lower index, upper index)``."""
    labels = eig.require_labels()
    lower = {lab[1]: k for k, lab in enumerate(labels) if lab[0] == 0}
    upper = [k for k, lab in enumerate(labels) if lab[0] != 0]
    if len(lower) != 3 or len(upper) != 6:
        raise LabelError(f"labels do not split into 3 + 6 states: {labels}")
    branch: dict[tuple[str, int], int] = {}
    for m in (1, 0, -1):
        pair = sorted((k for k in upper if labels[k][1] == m), key=lambda k: (eig.values[k], k))
        if len(pair) != 2:
            raise LabelError(f"expected two upper states with mI = {m}, found {len(pair)}")
        branch[("-", m)], branch[("+", m)] = pair
    out = {}
    for m, n in ALLOWED_NAMES.items():
        out[n] = (lower[m], branch[("+", m)])
        out[n + "-"] = (lower[m], branch[("-", m)])
    out["c"] = (lower[-1], branch[("+", 0)])
    out["d"] = (lower[1], branch[("+", 0)])
    out["a"] = (lower[0], branch[("+", -1)])
    out["b"] = (lower[0], branch[("+", 1)])
    return out


def transition_table(eig: EigenSystem, drive: DriveVector | None = None) -> TransitionTable:
    """All 18 lower-to-upper transitions, sorted by frequency."""
    drive = drive or DriveVector()
    labels = eig.require_labels()
    x = np.abs(coupling_matrix(eig, drive))
    names = {pair: n for n, pair in name_pairs(eig).items()}
    rows = []
    for i, li in enumerate(labels):
        if li[0] != 0:
            continue
        for f, lf in enumerate(labels):
            if lf[0] == 0:
                continue
            rows.append(Transition(
                lower_label=li,
                upper_label=lf,
                frequency=float(eig.values[f] - eig.values[i]),
                matrix_element=float(x[f, i]),
                cls="allowed" if li[1] == lf[1] else "forbidden",
                name=names.get((i, f)),
                lower_index=i,
                upper_index=f,
            ))
    rows.sort(key=lambda t: (t.frequency, t.lower_index, t.upper_index))
    return TransitionTable(field=eig.field, transitions=tuple(rows))


def named_frequencies(eig: EigenSystem) -> dict[str, float]:
    """Frequencies of all named lines including the ``c-d`` mean."""
    out = {n: float(eig.values[f] - eig.values[i]) for n, (i, f) in name_pairs(eig).items()}
    for comp, parts in COMPOSITE_NAMES.items():
        out[comp] = float(np.mean([out[p] for p in parts]))
    return out


@dataclass(frozen=True)
class AngleScan:
    magnitude: float
    angles: np.ndarray
    level_curves: dict[tuple[int, int], np.ndarray]
    transition_curves: dict[str, np.ndarray]
    element_curves: dict[str, np.ndarray]
    classes: dict[str, str]
    tables: tuple[TransitionTable, ...] = dc_field(repr=False, default=())

    def levels_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["angle_deg", "label", "energy_mhz"])
        for lab in sorted(self.level_curves, key=lambda l: (-l[0], -l[1])):
            for a, e in zip(self.angles.tolist(), self.level_curves[lab].tolist()):
                w.writerow([repr(a), _fmt_label(lab), repr(e)])
        return buf.getvalue()

    def transitions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["angle_deg", "name", "frequency_mhz", "matrix_element", "class"])
        for n in TRANSITION_NAMES:
            for a, f, m in zip(self.angles.tolist(), self.transition_curves[n].tolist(),
                               self.element_curves[n].tolist()):
                w.writerow([repr(a), n, repr(f), repr(m), self.classes[n]])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "magnitude": self.magnitude,
            "angles_deg": self.angles.tolist(),
            "levels": {_fmt_label(k): v.tolist() for k, v in self.level_curves.items()},
            "transitions": {
                n: {
                    "frequency_mhz": self.transition_curves[n].tolist(),
                    "matrix_element": self.element_curves[n].tolist(),
                    "class": self.classes[n],
                }
                for n in TRANSITION_NAMES
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def track(eig: EigenSystem, previous: EigenSystem, min_overlap: float = 0.5) -> EigenSystem:
    """Label ``eig`` by maximal overlap with ``previous`` (adiabatic tracking)."""
    tracked = label_states(eig, previous=previous)
    ov = overlap_matrix(previous, tracked)
    prev_index = {lab: j for j, lab in enumerate(previous.require_labels())}
    worst = min(ov[k, prev_index[lab]] for k, lab in enumerate(tracked.labels))
    if worst < min_overlap:
        raise StepSizeError(
            f"state overlap {worst:.3f} between consecutive scan points is below "
            f"{min_overlap}; refine the angle grid"
        )
    return tracked


def angle_scan(
    params: HamiltonianParams | None,
    magnitude: float,
    angle_grid: Sequence[float],
    drive: DriveVector | None = None,
    azimuth: float = 0.0,
    min_overlap: float = 0.5,
) -> AngleScan:
    """Levels and named transitions versus field tilt at fixed magnitude.

    The first grid point is labeled by dominant product component; every
    later point inherits labels by state overlap with its predecessor.
    """
    params = params or HamiltonianParams()
    drive = drive or DriveVector()
    angles = np.asarray(angle_grid, dtype=float)
    if angles.ndim != 1 or angles.size == 0:
        raise ValueError("angle grid must be a non-empty 1-D sequence")
    if np.any(angles < 0) or np.any(angles > 90):
        raise ValueError("angles must lie within [0, 90] degrees")
    if angles.size > 1 and not (np.all(np.diff(angles) > 0) or np.all(np.diff(angles) < 0)):
        raise ValueError("angle grid must be strictly monotone")
    prev = None
    tables = []
    for a in angles:
        fld = MagneticField(magnitude, float(a), azimuth)
        if prev is None:
            eig = diagonalize(params, fld)
        else:
            raw = replace(eigensolve(build_hamiltonian(params, fld)), params=params, field=fld)
            eig = track(raw, prev, min_overlap=min_overlap)
        tables.append((eig, transition_table(eig, drive)))
        prev = eig
    level_curves = {
        lab: np.array([e.values[e.index(lab)] for e, _ in tables])
        for lab in tables[0][0].labels
    }
    freq = {n: np.empty(angles.size) for n in TRANSITION_NAMES}
    elem = {n: np.empty(angles.size) for n in TRANSITION_NAMES}
    classes = {}
    for k, (_, tab) in enumerate(tables):
        named = tab.named()
        for n in TRANSITION_NAMES:
            freq[n][k] = named[n].frequency
            elem[n][k] = named[n].matrix_element
            classes[n] = named[n].cls
    return AngleScan(
        magnitude=float(magnitude),
        angles=angles,
        level_curves=level_curves,
        transition_curves=freq,
        element_curves=elem,
        classes=classes,
        tables=tuple(t for _, t in tables),
    )


@dataclass(frozen=True)
class CalibrationResult:
    field: MagneticField
    residuals: dict[str, float]
    rms: float
    iterations: int
    converged: bool
    predicted: dict[str, float]

    def to_json(self) -> str:
        doc = {
            "field": {"magnitude": self.field.magnitude, "tilt": self.field.tilt,
                      "azimuth": self.field.azimuth},
            "residuals_mhz": self.residuals,
            "predicted_mhz": self.predicted,
            "rms_mhz": self.rms,
            "iterations": self.iterations,
            "converged": self.converged,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def calibrate_field(
    measured: Iterable[tuple[str, float]],
    initial: MagneticField,
    params: HamiltonianParams | None = None,
    max_iter: int = 100,
) -> CalibrationResult:
    """Fit field magnitude and tilt to measured named line frequencies.

    Azimuth stays at its initial value. Raises ``UnderdeterminedError`` for
    fewer than two distinct lines and ``ConvergenceError`` if the damped
    least-squares iteration does not converge.
    """
    params = params or HamiltonianParams()
    items = list(measured)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate line names in {names}")
    if len(items) < 2:
        raise UnderdeterminedError("field calibration needs at least two distinct lines")
    known = set(TRANSITION_NAMES) | set(COMPOSITE_NAMES)
    unknown = [n for n in names if n not in known]
    if unknown:
        raise ValueError(f"unknown transition names {unknown}; expected {sorted(known)}")
    target = np.array([float(f) for _, f in items])
    az = initial.azimuth

    def predict(x):
        fld = MagneticField(float(x[0]), float(x[1]), az)
        freqs = named_frequencies(diagonalize(params, fld))
        return np.array([freqs[n] for n in names])

    def resid(x):
        return predict(x) - target

    def project(x):
        return np.array([max(x[0], 0.0), min(max(x[1], 0.0), 180.0)])

    res = levenberg_marquardt(
        resid, np.array([initial.magnitude, initial.tilt]), project=project,
        max_iter=max_iter, fd_step=np.array([1e-4, 1e-4]), ftol=1e-12, gtol=1e-10,
    )
    if not res.converged:
        raise ConvergenceError(f"field calibration did not converge: {res.message}")
    fld = MagneticField(float(res.x[0]), float(res.x[1]), az)
    pred = predict(res.x)
    return CalibrationResult(
        field=fld,
        residuals={n: float(p - t) for n, p, t in zip(names, pred, target)},
        rms=float(np.sqrt(np.mean((pred - target) ** 2))),
        iterations=res.iterations,
        converged=res.converged,
        predicted={n: float(p) for n, p in zip(names, pred)},
    )
