"""Population model of the electrically detected ENDOR protocol.

One protocol step per rf frequency:

1. selective ionization of the As0 donors in the target m_I state,
2. rf transfer between adjacent As+ levels (square-pulse excitation profile),
3. ionization of the remaining As0 by the slow parallel recombination,
4. reset of every donor to As0 with its m_I preserved.

The signal is the As0 occupancy of the read-out state, normalized to the
off-resonant value. Levels are ordered m = 3/2, 1/2, -1/2, -3/2.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy import signal as sps

from .dynamics import excitation_profile
from .spincore import (ARSENIC_75, DEFAULT_CONSTANTS, FieldConfig, PhysicalConstants, SpinSystem,
                       TransitionTable, build_hamiltonian, larmor_frequency, spin_operators,
                       transition_frequencies)
from .strainmap import EFGTensor, rotate_to_field_frame

__all__ = [
    "EndorConfig",
    "PopulationVector",
    "BroadeningModel",
    "Spectrum",
    "Peak",
    "M_LEVELS",
    "run_endor_step",
    "endor_signal",
    "synthesize_spectrum",
    "synthesize_four_spectra",
    "peak_positions",
    "edmr_line_fields",
    "HYPERFINE_AS",
]

M_LEVELS = (1.5, 0.5, -0.5, -1.5)
HYPERFINE_AS = 198.35e6


def _m_index(m: float) -> int:
    for i, mm in enumerate(M_LEVELS):
        if abs(mm - m) < 1e-9:
            return i
    raise ValueError(f"m_I must be one of {M_LEVELS}, got {m}")


@dataclass(frozen=True)
class EndorConfig:
    ionize: float = 1.5
    read: float | None = None
    t_antiparallel: float = 5e-6
    t_parallel: float = 6e-4
    efficiency: float = 1.0
    rf_range: tuple[float, float] | None = None
    pulse_duration: float = 400e-6
    flip: float = math.pi

    def __post_init__(self):
        _m_index(self.ionize)
        if self.read is not None:
            _m_index(self.read)
        if not 0 <= self.efficiency <= 1:
            raise ValueError("ionization efficiency must lie in [0, 1]")
        if self.pulse_duration <= 0:
            raise ValueError("rf pulse duration must be positive")

    @property
    def read_target(self) -> float:
        return self.ionize if self.read is None else self.read


@dataclass(frozen=True, eq=False)
class PopulationVector:
    """Occupancies of As0 and As+ per m_I; arrays may carry leading batch axes."""

    neutral: np.ndarray
    ionized: np.ndarray

    @classmethod
    def thermal(cls) -> "PopulationVector":
        return cls(np.full(4, 0.25), np.zeros(4))

    @property
    def total(self):
        return self.neutral.sum(-1) + self.ionized.sum(-1)


@dataclass(frozen=True)
class BroadeningModel:
    """Distribution of the quadrupole coupling around its nominal value.

    ``gaussian``: normal with standard deviation ``spread``.
    ``one-sided-exponential``: exponential tails with decay lengths
    spread*(1+asymmetry) above and spread*(1-asymmetry) below the nominal
    coupling; asymmetry = +1 or -1 gives a purely one-sided distribution.
    """

    spread: float = 0.0
    asymmetry: float = 0.0
    shape: str = "gaussian"
    nodes: int = 32

    def __post_init__(self):
        if self.spread < 0:
            raise ValueError("spread must be >= 0")
        if not -1 <= self.asymmetry <= 1:
            raise ValueError("asymmetry must lie in [-1, 1]")
        if self.shape not in ("gaussian", "one-sided-exponential"):
            raise ValueError(f"unknown broadening shape {self.shape!r}")
        if self.nodes < 32:
            raise ValueError("at least 32 quadrature nodes required")

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Offsets (Hz) and weights summing to one."""
        if self.spread == 0:
            return np.zeros(1), np.ones(1)
        if self.shape == "gaussian":
            x, w = np.polynomial.hermite_e.hermegauss(self.nodes)
            return self.spread * x, w / w.sum()
        x, w = np.polynomial.laguerre.laggauss(self.nodes)
        up, dn = self.spread * (1 + self.asymmetry), self.spread * (1 - self.asymmetry)
        offs, wts = [], []
        for scale, sign in ((up, 1.0), (dn, -1.0)):
            if scale > 0:
                offs.append(sign * scale * x)
                wts.append(w * scale)
        offs, wts = np.concatenate(offs), np.concatenate(wts)
        return offs, wts / wts.sum()


@dataclass
class Spectrum:
    frequency: np.ndarray
    signal: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequency = np.asarray(self.frequency, float)
        self.signal = np.asarray(self.signal, float)
        if self.frequency.shape != self.signal.shape or self.frequency.ndim != 1:
            raise ValueError("frequency and signal must be 1-D arrays of equal length")
        if np.any(np.diff(self.frequency) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frequency_Hz", "signal"])
        for f, s in zip(self.frequency, self.signal):
            w.writerow([repr(float(f)), repr(float(s))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, meta: dict | None = None) -> "Spectrum":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["frequency_Hz", "signal"]:
            raise ValueError("spectrum CSV must start with header 'frequency_Hz,signal'")
        data = [r for r in rows[1:] if r]
        if not data:
            raise ValueError("spectrum CSV has no data rows")
        try:
            arr = np.array([[float(a), float(b)] for a, b in data])
        except ValueError as exc:
            raise ValueError(f"malformed spectrum row: {exc}") from None
        return cls(arr[:, 0], arr[:, 1], meta or {})

    def to_json(self) -> str:
        return json.dumps({"meta": self.meta, "frequency_Hz": self.frequency.tolist(),
                           "signal": self.signal.tolist()}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Spectrum":
        d = json.loads(text)
        try:
            return cls(d["frequency_Hz"], d["signal"], d.get("meta", {}))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed spectrum JSON: {exc}") from None


def _transfer(pop: np.ndarray, i: int, j: int, p) -> np.ndarray:
    a, b = pop[..., i].copy(), pop[..., j].copy()
    pop[..., i] = (1 - p) * a + p * b
    pop[..., j] = (1 - p) * b + p * a
    return pop


def run_endor_step(pop: PopulationVector, cfg: EndorConfig, rf, table: TransitionTable | Sequence[float]
                   ) -> PopulationVector:
    """Apply ionization, rf transfer, recombination and reset at frequency ``rf``.

    ``rf`` may be an array; populations then gain that batch shape. ``rf=None``
    skips the rf transfer (reference shot).
    """
    freqs = table.frequencies if isinstance(table, TransitionTable) else np.asarray(table, float)
    if len(freqs) != 3:
        raise ValueError("ENDOR model expects the three I = 3/2 transitions")
    t = _m_index(cfg.ionize)
    rf_arr = None if rf is None else np.asarray(rf, float)
    shape = () if rf_arr is None else rf_arr.shape
    neutral = np.broadcast_to(pop.neutral, shape + (4,)).copy()
    ionized = np.broadcast_to(pop.ionized, shape + (4,)).copy()

    moved = neutral[..., t] * cfg.efficiency
    neutral[..., t] -= moved
    ionized[..., t] += moved

    if rf_arr is not None:
        for k, f in enumerate(freqs):
            p = excitation_profile(cfg.pulse_duration, rf_arr - f, cfg.flip)
            ionized = _transfer(ionized, k, k + 1, p)

    ionized = ionized + neutral
    return PopulationVector(ionized, np.zeros_like(ionized))


def endor_signal(cfg: EndorConfig, rf, table, pop: PopulationVector | None = None):
    """Read-out occupancy after one step, normalized to the rf-off reference."""
    pop = pop or PopulationVector.thermal()
    r = _m_index(cfg.read_target)
    ref = run_endor_step(pop, cfg, None, table).neutral[..., r]
    after = run_endor_step(pop, cfg, rf, table).neutral[..., r]
    return after / ref


def synthesize_spectrum(cfg: EndorConfig, sys: SpinSystem, field: FieldConfig, efg: EFGTensor | None = None,
                        broadening: BroadeningModel = BroadeningModel(), n_points: int = 500,
                        k: PhysicalConstants = DEFAULT_CONSTANTS,
                        broadening_axis=None) -> Spectrum:
    """ENDOR spectrum averaged over the f_Q distribution of ``broadening``.

    ``efg`` is in the crystal frame; ``field.axis`` gives B0 in the same frame.
    The coupling spread is applied along the principal axis of ``efg`` (or
    ``broadening_axis`` / the field axis when the nominal EFG vanishes).
    """
    if n_points < 10:
        raise ValueError("n_points must be >= 10")
    f0 = larmor_frequency(sys, field, k)
    V0 = np.zeros((3, 3)) if efg is None else efg.matrix
    V_lab = rotate_to_field_frame(V0, field.axis)
    scale = k.e * sys.q / k.h  # V/m^2 -> Hz

    if broadening_axis is not None:
        n_ax = np.asarray(broadening_axis, float)
    elif np.any(V0):
        vals, vecs = EFGTensor(V0).principal()
        n_ax = vecs[:, 0]
    else:
        n_ax = np.asarray(field.axis, float)
    n_ax = n_ax / np.linalg.norm(n_ax)
    unit = rotate_to_field_frame(1.5 * np.outer(n_ax, n_ax) - 0.5 * np.eye(3), field.axis)

    offsets, weights = broadening.quadrature()
    Ix = spin_operators(sys.I)[0]
    tables = []
    for off in offsets:
        V = V_lab + (off / scale) * unit
        tables.append(transition_frequencies(build_hamiltonian(sys, f0, V, k), Ix))

    nominal = transition_frequencies(build_hamiltonian(sys, f0, V_lab, k), Ix)
    if cfg.rf_range is not None:
        lo, hi = cfg.rf_range
    else:
        fr = nominal.frequencies
        pad = 8.0 / cfg.pulse_duration + 4 * broadening.spread
        lo, hi = fr.min() - pad, fr.max() + pad
    rf = np.linspace(lo, hi, n_points)
    fr = nominal.frequencies
    bw = 1.0 / cfg.pulse_duration + 3 * broadening.spread
    if np.all((fr < lo - bw) | (fr > hi + bw)):
        warnings.warn("rf sweep range covers no transition; spectrum is flat", RuntimeWarning, stacklevel=2)

    sig = np.zeros(n_points)
    for w, table in zip(weights, tables):
        sig += w * endor_signal(cfg, rf, table)
    meta = {
        "ionize": cfg.ionize,
        "read": cfg.read_target,
        "B0_T": field.B0,
        "f0_Hz": f0,
        "pulse_duration_s": cfg.pulse_duration,
        "transitions_Hz": [float(x) for x in fr],
        "broadening": {"spread_Hz": broadening.spread, "asymmetry": broadening.asymmetry,
                       "shape": broadening.shape},
    }
    return Spectrum(rf, np.clip(sig, 0.0, 1.0), meta)


def synthesize_four_spectra(cfg: EndorConfig, sys: SpinSystem, fields: Sequence[FieldConfig] | FieldConfig,
                            efg: EFGTensor | None = None, broadening: BroadeningModel = BroadeningModel(),
                            n_points: int = 500, k: PhysicalConstants = DEFAULT_CONSTANTS) -> list[Spectrum]:
    """One spectrum per ionization target m_I = 3/2 .. -3/2 (read on the same line)."""
    if isinstance(fields, FieldConfig):
        fields = [fields] * 4
    if len(fields) != 4:
        raise ValueError("four fields required, one per EDMR line")
    out = []
    for m, fld in zip(M_LEVELS, fields):
        c = replace(cfg, ionize=m, read=None)
        out.append(synthesize_spectrum(c, sys, fld, efg, broadening, n_points, k))
    return out


def edmr_line_fields(mw_frequency: float = 9.7e9, g_e: float = 1.9985,
                     hyperfine: float = HYPERFINE_AS) -> list[float]:
    """First-order As0 EDMR line positions (T) for m_I = 3/2 .. -3/2.

    Resonance condition h*nu = g_e*mu_B*B + A*m_I with the hyperfine constant
    A in Hz.
    """
    mu_B_over_h = 1.39962449361e10  # Hz/T
    return [(mw_frequency - hyperfine * m) / (g_e * mu_B_over_h) for m in M_LEVELS]


class Peak(NamedTuple):
    center: float
    depth: float
    width: float
    multiplet: bool


def peak_positions(spec: Spectrum, min_prominence: float = 0.3) -> list[Peak]:
    """Dips of a baseline-normalized spectrum, refined by parabolic interpolation.

    Dips whose centers lie closer than their width are flagged as multiplets.
    """
    f, s = spec.frequency, spec.signal
    depth = 1.0 - s
    idx, props = sps.find_peaks(depth, prominence=min_prominence)
    if idx.size == 0:
        return []
    widths, _, left, right = sps.peak_widths(depth, idx, rel_height=0.5)
    grid = np.arange(f.size)
    out = []
    for i, li, ri in zip(idx, left, right):
        c = f[i]
        if 0 < i < f.size - 1:
            x0, x1, x2 = f[i - 1], f[i], f[i + 1]
            y0, y1, y2 = depth[i - 1], depth[i], depth[i + 1]
            denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
            a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
            b = (x2 ** 2 * (y0 - y1) + x1 ** 2 * (y2 - y0) + x0 ** 2 * (y1 - y2)) / denom
            if a < 0:
                c = -b / (2 * a)
        width = float(np.interp(ri, grid, f) - np.interp(li, grid, f))
        out.append([float(c), float(depth[i]), width, False])
    for a, b in zip(out, out[1:]):
        if b[0] - a[0] < max(a[2], b[2]):
            a[3] = b[3] = True
    return [Peak(*p) for p in out]
