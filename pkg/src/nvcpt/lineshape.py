"""Nine-Lorentzian ODMR lineshape with 13C sidebands: synthesis and fitting.

For one NV orientation the subtracted ODMR signal is modeled as

    f(nu) = C [ (1 - 9a) sum_i L(nu - nu0_i)
                + (9a/2) sum_i L(nu - nu0_i + Delta/2)
                + (9a/2) sum_i L(nu - nu0_i - Delta/2) ] + offset

with the unnormalized Lorentzian ``L(x) = sigma_i / (x^2 + sigma_i^2)``,
``a`` the 13C site occupancy and ``Delta`` the averaged 13C splitting. The
optional two-splitting mode replaces the 9 sideband sites by groups of 6
(``Delta``) and 3 (``Delta2``).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NoPeaksError
from .lsq import levenberg_marquardt

DEFAULT_ALPHA = 0.012
DEFAULT_DELTA = 13.4
# two-group mode: 6 sites at 13.7 MHz, 3 sites at 12.8 MHz
TWO_GROUP_DELTAS = (13.7, 12.8)

PARAM_NAMES = (
    "nu0_1", "nu0_2", "nu0_3",
    "sigma_1", "sigma_2", "sigma_3",
    "C", "alpha", "Delta", "offset", "Delta2",
)


@dataclass(frozen=True)
class OdmrModelParams:
    nu0: tuple[float, float, float]
    sigma: tuple[float, float, float]
    C: float
    alpha: float = DEFAULT_ALPHA
    Delta: float = DEFAULT_DELTA
    offset: float = 0.0
    Delta2: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "nu0", tuple(float(v) for v in self.nu0))
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))
        if len(self.nu0) != 3 or len(self.sigma) != 3:
            raise ValueError("nu0 and sigma need exactly three entries")
        if min(self.sigma) <= 0:
            raise ValueError(f"widths must be positive, got {self.sigma}")
        if not 0.0 <= self.alpha < 1.0 / 9.0:
            raise ValueError(f"alpha must lie in [0, 1/9), got {self.alpha}")
        if not self.Delta > 0:
            raise ValueError(f"Delta must be positive, got {self.Delta}")
        if self.Delta2 is not None and not self.Delta2 > 0:
            raise ValueError(f"Delta2 must be positive, got {self.Delta2}")

    @property
    def two_group(self) -> bool:
        return self.Delta2 is not None

    def sideband_groups(self) -> list[tuple[float, float]]:
        """(weight per sideband, splitting) pairs."""
        if self.Delta2 is None:
            return [(9.0 * self.alpha / 2.0, self.Delta)]
        return [(6.0 * self.alpha / 2.0, self.Delta), (3.0 * self.alpha / 2.0, self.Delta2)]

    def weight_groups(self) -> tuple[float, ...]:
        """Weights of the main lines and of every sideband family; sums to 1."""
        w = [1.0 - 9.0 * self.alpha]
        for wg, _ in self.sideband_groups():
            w.extend([wg, wg])
        return tuple(w)

    def to_vector(self) -> np.ndarray:
        d2 = self.Delta2 if self.Delta2 is not None else TWO_GROUP_DELTAS[1]
        return np.array([*self.nu0, *self.sigma, self.C, self.alpha, self.Delta, self.offset, d2])

    @classmethod
    def from_vector(cls, v: Sequence[float], two_group: bool = False) -> "OdmrModelParams":
        v = [float(x) for x in v]
        return cls(
            nu0=tuple(v[0:3]), sigma=tuple(v[3:6]), C=v[6], alpha=v[7], Delta=v[8],
            offset=v[9], Delta2=v[10] if two_group else None,
        )

    def as_dict(self) -> dict:
        return {
            "nu0": list(self.nu0), "sigma": list(self.sigma), "C": self.C,
            "alpha": self.alpha, "Delta": self.Delta, "offset": self.offset,
            "Delta2": self.Delta2,
        }


def _lorentz(x: np.ndarray, s: float) -> np.ndarray:
    return s / (x * x + s * s)


def odmr_profile(nu, p: OdmrModelParams):
    """Evaluate the model at ``nu`` (scalar or array, MHz)."""
    nu = np.asarray(nu, dtype=float)
    w0 = 1.0 - 9.0 * p.alpha
    total = np.zeros_like(nu)
    for c, s in zip(p.nu0, p.sigma):
        x = nu - c
        total = total + w0 * _lorentz(x, s)
        for wg, d in p.sideband_groups():
            total = total + wg * (_lorentz(x + d / 2, s) + _lorentz(x - d / 2, s))
    out = p.C * total + p.offset
    return float(out) if out.ndim == 0 else out


def odmr_jacobian(nu: np.ndarray, p: OdmrModelParams) -> np.ndarray:
    """Analytic derivatives of :func:`odmr_profile`, columns in ``PARAM_NAMES`` order."""
    nu = np.asarray(nu, dtype=float)
    jac = np.zeros((nu.size, len(PARAM_NAMES)))
    w0 = 1.0 - 9.0 * p.alpha
    groups = p.sideband_groups()
    sites = (9.0,) if not p.two_group else (6.0, 3.0)

    def parts(x, s):
        den = x * x + s * s
        l = s / den
        # written via l/s to avoid overflowing den**2 at extreme trial points
        q = l * l / (s * s)
        return l, 2.0 * x * s * q, (x * x - s * s) * q

    bracket = np.zeros_like(nu)
    for i, (c, s) in enumerate(zip(p.nu0, p.sigma)):
        x = nu - c
        l0, dc0, ds0 = parts(x, s)
        d_center = w0 * dc0
        d_sigma = w0 * ds0
        d_alpha = -9.0 * l0
        bracket += w0 * l0
        for g, ((wg, d), n_sites) in enumerate(zip(groups, sites)):
            lp, dcp, dsp = parts(x + d / 2, s)
            lm, dcm, dsm = parts(x - d / 2, s)
            bracket += wg * (lp + lm)
            d_center += wg * (dcp + dcm)
            d_sigma += wg * (dsp + dsm)
            d_alpha += n_sites / 2.0 * (lp + lm)
            # dL/dx = -2 x s / den^2 = -dc; x+ moves by +d/2, x- by -d/2
            jac[:, 8 if g == 0 else 10] += p.C * wg * 0.5 * (-dcp + dcm)
        jac[:, i] = p.C * d_center
        jac[:, 3 + i] = p.C * d_sigma
        jac[:, 7] += p.C * d_alpha
    jac[:, 6] = bracket
    jac[:, 9] = 1.0
    return jac


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray
    values: np.ndarray
    noise_sigma: float | None = None

    def __post_init__(self) -> None:
        f = np.asarray(self.frequencies, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if f.shape != v.shape or f.ndim != 1:
            raise ValueError("frequencies and values must be 1-D arrays of equal length")
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise ValueError("frequency grid must be strictly ascending")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "values", v)

    def to_csv(self, path: str | Path) -> None:
        write_spectrum_csv(path, self)


def write_spectrum_csv(path: str | Path, s: Spectrum) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(spectrum_csv_text(s))


def spectrum_csv_text(s: Spectrum) -> str:
    lines = ["frequency_mhz,signal"]
    lines += [f"{f!r},{v!r}" for f, v in zip(s.frequencies.tolist(), s.values.tolist())]
    return "\n".join(lines) + "\n"


def read_spectrum_csv(path: str | Path) -> Spectrum:
    """Read a ``frequency_mhz,signal`` file; raises ValueError on bad content."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header != ["frequency_mhz", "signal"]:
        raise ValueError(f"{path}: expected header 'frequency_mhz,signal', got {rows[0]}")
    data = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            data.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{n}: cannot parse row {row}") from None
    if not data:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(data)
    return Spectrum(arr[:, 0], arr[:, 1])


def synth_spectrum(grid, p: OdmrModelParams, noise_sigma: float = 0.0, seed: int | None = 0) -> Spectrum:
    """Model spectrum on ``grid`` plus white Gaussian noise (seeded)."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(odmr_profile(grid, p), dtype=float).reshape(grid.shape)
    if noise_sigma > 0:
        values = values + np.random.default_rng(seed).normal(0.0, noise_sigma, grid.shape)
    return Spectrum(grid, values, noise_sigma=noise_sigma)


def estimate_noise(values: np.ndarray) -> float:
    # MAD of first differences; insensitive to smooth line shapes
    d = np.diff(values)
    if d.size == 0:
        return 0.0
    return float(1.4826 * np.median(np.abs(d - np.median(d))) / math.sqrt(2.0))


def _half_width(f: np.ndarray, v: np.ndarray, k: int, base: float) -> float:
    half = base + 0.5 * (v[k] - base)
    lo = k
    while lo > 0 and v[lo] > half:
        lo -= 1
    hi = k
    while hi < len(v) - 1 and v[hi] > half:
        hi += 1

    def cross(a, b):
        if v[a] == v[b]:
            return f[a]
        return f[a] + (half - v[a]) * (f[b] - f[a]) / (v[b] - v[a])

    left = cross(lo, lo + 1) if lo < k else f[k]
    right = cross(hi - 1, hi) if hi > k else f[k]
    step = float(np.median(np.diff(f)))
    return max(0.5 * (right - left), step)


def find_peaks(s: Spectrum, k: float = 5.0, max_peaks: int = 3) -> list[tuple[float, float, float]]:
    """Strongest local maxima above ``k`` times the noise floor.

    Returns ``(center, half_width, height_above_baseline)`` tuples, strongest
    first, at most ``max_peaks``; peaks closer than twice the width of an
    already accepted one are skipped.
    """
    f, v = s.frequencies, s.values
    if v.size < 3:
        raise NoPeaksError("spectrum too short for peak detection")
    base = float(np.median(v))
    noise = estimate_noise(v)
    height = v - base
    thresh = max(k * noise, 1e-12 * max(1.0, float(np.max(np.abs(v)))))
    idx = [
        i for i in range(1, v.size - 1)
        if v[i] >= v[i - 1] and v[i] > v[i + 1] and height[i] > thresh
    ]
    if not idx:
        raise NoPeaksError("no peaks above the noise floor")
    idx.sort(key=lambda i: -height[i])
    peaks: list[tuple[float, float, float]] = []
    for i in idx:
        if len(peaks) == max_peaks:
            break
        if any(abs(f[i] - c) < 2 * w for c, w, _ in peaks):
            continue
        peaks.append((float(f[i]), _half_width(f, v, i, base), float(height[i])))
    return peaks


def initial_guess(s: Spectrum, k: float = 5.0, alpha: float = DEFAULT_ALPHA,
                  Delta: float = DEFAULT_DELTA) -> OdmrModelParams:
    """Starting point for :func:`fit_spectrum` from peak detection.

    Missing lines (fewer than three resolvable peaks) are seeded half a
    width either side of the strongest peak.
    """
    peaks = find_peaks(s, k=k)
    base = float(np.median(s.values))
    strongest = peaks[0]
    side = 1
    while len(peaks) < 3:
        c, w, h = strongest
        peaks.append((c + side * 0.5 * w, w, 0.5 * h))
        side = -side
    peaks.sort(key=lambda t: t[0])
    w0 = 1.0 - 9.0 * alpha
    C = float(np.mean([h * w for _, w, h in peaks])) / w0
    return OdmrModelParams(
        nu0=tuple(c for c, _, _ in peaks),
        sigma=tuple(w for _, w, _ in peaks),
        C=C, alpha=alpha, Delta=Delta, offset=base,
    )


@dataclass
class FitResult:
    params: OdmrModelParams
    residual_rms: float
    iterations: int
    converged: bool
    uncertainties: dict[str, float]
    gradient_norm: float
    message: str = ""
    frozen: tuple[str, ...] = ()
    cost_history: list[float] = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        doc = {
            "params": self.params.as_dict(),
            "uncertainties": self.uncertainties,
            "residual_rms": self.residual_rms,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "frozen": list(self.frozen),
            "message": self.message,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _project(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    v[3:6] = np.maximum(v[3:6], 1e-9)
    v[7] = min(max(v[7], 0.0), 1.0 / 9.0 - 1e-12)
    v[8] = max(v[8], 1e-9)
    v[10] = max(v[10], 1e-9)
    return v


def fit_spectrum(
    s: Spectrum,
    init: OdmrModelParams,
    frozen: Iterable[str] = ("Delta",),
    max_iter: int = 200,
    fit_offset: bool = True,
) -> FitResult:
    """Damped least-squares fit of the lineshape model to a spectrum.

    ``frozen`` names parameters held at their initial value (any of
    ``PARAM_NAMES``; ``"nu0"``/``"sigma"`` freeze all three). Non-convergence
    returns the best point found with ``converged=False``.
    """
    if not isinstance(init, OdmrModelParams):
        raise TypeError("init must be OdmrModelParams")
    frozen = set(frozen)
    for group in ("nu0", "sigma"):
        if group in frozen:
            frozen.discard(group)
            frozen.update(f"{group}_{i}" for i in (1, 2, 3))
    unknown = frozen - set(PARAM_NAMES)
    if unknown:
        raise ValueError(f"unknown parameter names in frozen mask: {sorted(unknown)}")
    if not fit_offset:
        frozen.add("offset")
    if not init.two_group:
        frozen.add("Delta2")
    free = np.array([n not in frozen for n in PARAM_NAMES])
    two = init.two_group
    nu, y = s.frequencies, s.values

    def resid(v):
        return odmr_profile(nu, OdmrModelParams.from_vector(v, two)) - y

    def jac(v):
        return odmr_jacobian(nu, OdmrModelParams.from_vector(v, two))

    res = levenberg_marquardt(resid, init.to_vector(), jac=jac, free=free, project=_project,
                              max_iter=max_iter)
    params = OdmrModelParams.from_vector(res.x, two)
    n_free = int(free.sum())
    dof = max(nu.size - n_free, 1)
    jf = res.jacobian[:, free]
    s2 = 2.0 * res.cost / dof
    try:
        cov = np.linalg.inv(jf.T @ jf) * s2
        std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        std = np.full(n_free, np.nan)
    unc = {n: 0.0 for n in PARAM_NAMES}
    for name, sd in zip([n for n, f in zip(PARAM_NAMES, free) if f], std):
        unc[name] = float(sd)
    if not two:
        unc.pop("Delta2")
    return FitResult(
        params=params,
        residual_rms=float(np.sqrt(np.mean(res.residual**2))),
        iterations=res.iterations,
        converged=res.converged,
        uncertainties=unc,
        gradient_norm=res.gradient_norm,
        message=res.message,
        frozen=tuple(sorted(frozen)),
        cost_history=res.cost_history,
    )


def sideband_positions(p: OdmrModelParams) -> list[float]:
    """Centers of the 13C sidebands, ``nu0_i -/+ Delta/2`` for each line."""
    out = []
    for c in p.nu0:
        for _, d in p.sideband_groups():
            out.extend([c - d / 2, c + d / 2])
    return sorted(out)
