"""Registered per-record signal-processing operators.

Each operator is a pure function of a single record plus its parameters
(and the fibre-wide sampling rate), with an output dimension fully
determined by the input dimension and parameters. Derived strata store the
operator chain, so every spec here must serialise cleanly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import welch as _scipy_welch

from .errors import OperatorContractError


@dataclass(frozen=True)
class OperatorSpec:
    """Name plus parameter map identifying one registered operator
    invocation. Hashable so operator chains can be content-addressed."""

    name: str
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(sorted(
            (str(k), float(v)) for k, v in dict(self.params).items())))

    def param(self, key: str) -> float:
        for k, v in self.params:
            if k == key:
                return v
        raise OperatorContractError(f"operator {self.name!r} has no param {key!r}")

    def out_dim(self, in_dim: int, f_s: float) -> int:
        return _registry_entry(self.name).out_dim(in_dim, self, f_s)

    def apply(self, record: np.ndarray, f_s: float) -> np.ndarray:
        entry = _registry_entry(self.name)
        expected = entry.out_dim(len(record), self, f_s)
        out = entry.fn(np.asarray(record, dtype=float), self, f_s)
        if len(out) != expected:
            raise OperatorContractError(
                f"operator {self.name!r} produced dim {len(out)}, declared {expected}")
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, doc: dict) -> "OperatorSpec":
        return cls(doc["name"], tuple(doc.get("params", {}).items()))


class _Entry:
    def __init__(self, fn, out_dim):
        self.fn = fn
        self.out_dim = out_dim


_REGISTRY: dict[str, _Entry] = {}


def register_operator(name: str, fn, out_dim) -> None:
    _REGISTRY[name] = _Entry(fn, out_dim)


def _registry_entry(name: str) -> _Entry:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise OperatorContractError(f"operator {name!r} is not registered") from None


def is_registered(name: str) -> bool:
    return name in _REGISTRY


# ---------------------------------------------------------------------------
# Mean / demean
# ---------------------------------------------------------------------------

def _mean_fn(record, spec, f_s):
    return np.array([record.mean()])


def _demean_fn(record, spec, f_s):
    return record - record.mean()


register_operator("mean", _mean_fn, lambda n, spec, fs: 1)
register_operator("demean", _demean_fn, lambda n, spec, fs: n)


def o_mean() -> OperatorSpec:
    return OperatorSpec("mean")


def o_demean() -> OperatorSpec:
    return OperatorSpec("demean")


# ---------------------------------------------------------------------------
# DFT with packed real storage
# ---------------------------------------------------------------------------
# A length-N real record maps to N reals holding the non-redundant half of
# its complex spectrum: slot 0 is the (real) DC bin, slots (2k-1, 2k) hold
# (Re X_k, Im X_k) for the interior bins, and for even N the last slot is
# the (real) Nyquist bin. The packing is lossless, so the full-spectrum
# power is recoverable exactly (see dft_power).

def _dft_fn(record, spec, f_s):
    n = len(record)
    spectrum = np.fft.rfft(record)
    out = np.empty(n)
    out[0] = spectrum[0].real
    if n % 2 == 0:
        interior = spectrum[1:-1]
        out[-1] = spectrum[-1].real
        out[1:-1:2] = interior.real
        out[2:-1:2] = interior.imag
    else:
        interior = spectrum[1:]
        out[1::2] = interior.real
        out[2::2] = interior.imag
    return out


register_operator("dft", _dft_fn, lambda n, spec, fs: n)


def o_dft() -> OperatorSpec:
    return OperatorSpec("dft")


def dft_bin_count(n: int) -> int:
    return n // 2 + 1


def dft_magnitudes(packed: np.ndarray) -> np.ndarray:
    """Per-bin spectrum magnitudes |X_k|, k = 0..N//2, from a packed DFT
    record."""
    packed = np.asarray(packed, dtype=float)
    n = len(packed)
    if n % 2 == 0:
        re = np.concatenate(([packed[0]], packed[1:-1:2], [packed[-1]]))
        im = np.concatenate(([0.0], packed[2:-1:2], [0.0]))
    else:
        re = np.concatenate(([packed[0]], packed[1::2]))
        im = np.concatenate(([0.0], packed[2::2]))
    return np.hypot(re, im)


def dft_power(packed: np.ndarray) -> float:
    """Sum of squared magnitudes over all N bins of the underlying complex
    DFT, reconstructed from the packed record via conjugate symmetry."""
    mags = dft_magnitudes(packed)
    n = len(packed)
    doubled = np.ones_like(mags) * 2.0
    doubled[0] = 1.0
    if n % 2 == 0:
        doubled[-1] = 1.0
    return float(np.sum(doubled * mags**2))


# ---------------------------------------------------------------------------
# Welch spectral density
# ---------------------------------------------------------------------------
# Fixed conventions, recorded in the spec params for provenance: Hann
# window, 50% overlap, per-segment mean removal, one-sided density scaling.

def _welch_out_dim(n, spec, fs):
    n_w = int(spec.param("n_w"))
    if n_w <= 0 or n_w % 2 != 0:
        raise OperatorContractError("welch window length must be positive and even")
    if n_w > n:
        raise OperatorContractError(
            f"welch window {n_w} exceeds record length {n}")
    return n_w // 2 + 1


def _welch_fn(record, spec, f_s):
    n_w = int(spec.param("n_w"))
    _, psd = _scipy_welch(
        record, fs=f_s, window="hann", nperseg=n_w, noverlap=n_w // 2,
        detrend="constant", return_onesided=True, scaling="density",
        average="mean")
    return psd


register_operator("welch", _welch_fn, _welch_out_dim)


def o_welch(n_w: int) -> OperatorSpec:
    return OperatorSpec("welch", (("n_w", n_w),))


def welch_frequencies(out_dim: int, f_s: float) -> np.ndarray:
    """Bin centres [Hz] of a one-sided spectral record of length out_dim."""
    n_w = 2 * (out_dim - 1)
    return np.arange(out_dim) * (f_s / n_w)


# ---------------------------------------------------------------------------
# Modal peak extraction
# ---------------------------------------------------------------------------

def _modal_peaks_fn(record, spec, f_s):
    n = int(spec.param("n"))
    dim = len(record)
    delta_f = f_s / (2 * (dim - 1))
    # noise-floor gate: a genuine modal peak towers over the median level,
    # noise wiggles do not
    gate = spec.param("floor_gate") * float(np.median(record))
    candidates = []
    for i in range(1, dim - 1):
        if record[i] > record[i - 1] and record[i] >= record[i + 1] \
                and record[i] >= gate:
            candidates.append((record[i], i))
    # tallest first; equal heights break to the lower frequency
    candidates.sort(key=lambda c: (-c[0], c[1]))
    accepted: list[int] = []
    for _, i in candidates:
        if all(abs(i - j) >= 2 for j in accepted):
            accepted.append(i)
        if len(accepted) == n:
            break
    freqs = []
    for i in accepted:
        y0, y1, y2 = record[i - 1], record[i], record[i + 1]
        if y0 > 0.0 and y1 > 0.0 and y2 > 0.0:
            # log-domain parabola: far less scalloping on windowed spectra
            y0, y1, y2 = np.log(y0), np.log(y1), np.log(y2)
        denom = y0 - 2.0 * y1 + y2
        offset = 0.5 * (y0 - y2) / denom if denom != 0.0 else 0.0
        offset = float(np.clip(offset, -0.5, 0.5))
        freqs.append((i + offset) * delta_f)
    freqs.sort()
    # fixed output dimension: pad with zeros when fewer peaks exist
    while len(freqs) < n:
        freqs.insert(0, 0.0)
    return np.array(freqs)


def _modal_peaks_out_dim(dim, spec, fs):
    n = int(spec.param("n"))
    if n < 1:
        raise OperatorContractError("peak count must be >= 1")
    if dim < 3:
        raise OperatorContractError("spectral record too short for peak picking")
    return n


register_operator("modal_peaks", _modal_peaks_fn, _modal_peaks_out_dim)


def o_modal_peaks(n: int, floor_gate: float = 5.0) -> OperatorSpec:
    return OperatorSpec("modal_peaks", (("n", n), ("floor_gate", floor_gate)))


# ---------------------------------------------------------------------------
# Spectral band selection
# ---------------------------------------------------------------------------

def _band_indices(dim, spec, fs):
    lo = spec.param("lo")
    hi = spec.param("hi")
    if not (0.0 <= lo < hi):
        raise OperatorContractError("band requires 0 <= lo < hi")
    freqs = welch_frequencies(dim, fs)
    idx = np.nonzero((freqs >= lo) & (freqs <= hi))[0]
    if len(idx) == 0:
        raise OperatorContractError("band selects no spectral bins")
    return idx


def _band_fn(record, spec, f_s):
    return record[_band_indices(len(record), spec, f_s)]


register_operator("band", _band_fn, lambda n, spec, fs: len(_band_indices(n, spec, fs)))


def o_band(lo: float, hi: float) -> OperatorSpec:
    return OperatorSpec("band", (("lo", lo), ("hi", hi)))
