"""Detector-plane data preprocessing: offset and time-zero correction,
f-k back-propagation, burial-depth estimation, target-signal extraction,
source shift and amplitude calibration.

The extraction stage follows peak-pattern rules tuned for backscatter
records that consist of a surface (or reference) wavelet followed by
the target's echo:

* the *strongest detector* carries the largest absolute amplitude;
* the surface reference is the strongest negative peak among the first
  ``n_exclude`` peaks counted from the first negative one; those peaks
  are then excluded;
* a target announces itself by the first peak that is stronger than
  the previous peak of the same sign;
* strong targets (echo louder than the surface reference, or anything
  buried deeper than the weak-target visibility limit) start at a
  negative peak, weak targets at a positive one; weak targets deeper
  than the limit are declared missed;
* every sample before the chosen first peak is zeroed, detector by
  detector, chaining peak times outward from the strongest detector.

All operations are pure; per-detector work parallelizes trivially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import find_peaks as _scipy_find_peaks

from .laplace import laplace_transform
from .model import TimeSeriesCube

__all__ = [
    "Peak",
    "PeakList",
    "DepthEstimate",
    "TargetClassification",
    "CrossSection",
    "offset_correct",
    "time_zero_correct",
    "propagate_fk",
    "find_peaks",
    "estimate_depth",
    "classify_and_extract",
    "estimate_cross_section",
    "shift_source",
    "calibrate",
    "estimate_calibration_factor",
]

WEAK_DEPTH_LIMIT = 0.05  # weak targets deeper than this are not detectable


@dataclass(frozen=True)
class Peak:
    index: int
    amplitude: float

    @property
    def sign(self) -> int:
        return 1 if self.amplitude > 0 else -1

    @property
    def magnitude(self) -> float:
        return abs(self.amplitude)


@dataclass(frozen=True)
class PeakList:
    """Time-ordered local extrema of one trace."""

    peaks: tuple[Peak, ...]

    def __post_init__(self) -> None:
        idx = [p.index for p in self.peaks]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("peak times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    def __getitem__(self, i):
        return self.peaks[i]

    def first_negative(self) -> int | None:
        for i, p in enumerate(self.peaks):
            if p.sign < 0:
                return i
        return None


def find_peaks(
    trace: np.ndarray,
    noise_floor_frac: float = 0.05,
    min_amplitude: float = 0.0,
) -> PeakList:
    """Local extrema above a noise floor, ordered in time.

    The floor is ``noise_floor_frac`` of the trace's own maximum
    amplitude, or ``min_amplitude`` if that is larger.
    """
    trace = np.asarray(trace, dtype=float)
    if not np.isfinite(trace).all():
        raise ValueError("trace contains non-finite values")
    floor = max(noise_floor_frac * np.abs(trace).max(), min_amplitude)
    if floor == 0.0:
        return PeakList(())
    pos, _ = _scipy_find_peaks(trace, height=floor)
    neg, _ = _scipy_find_peaks(-trace, height=floor)
    peaks = [Peak(int(i), float(trace[i])) for i in pos]
    peaks += [Peak(int(i), float(trace[i])) for i in neg]
    peaks.sort(key=lambda p: p.index)
    return PeakList(tuple(peaks))


def offset_correct(cube: TimeSeriesCube) -> TimeSeriesCube:
    """Remove the per-detector mean (off-set correction)."""
    mean = cube.values.mean(axis=2, keepdims=True)
    return cube.with_values(cube.values - mean)


def _shift_samples(values: np.ndarray, k: int) -> np.ndarray:
    """Shift along time by k samples (positive = earlier), zero-filling."""
    out = np.zeros_like(values)
    if k == 0:
        out[:] = values
    elif k > 0:
        out[..., :-k or None] = values[..., k:]
    else:
        out[..., -k:] = values[..., :k]
    return out


def time_zero_correct(cube: TimeSeriesCube, t_emit: float) -> TimeSeriesCube:
    """Shift the record so that emission time ``t_emit`` becomes t = 0."""
    k = int(round(t_emit / cube.dt))
    if abs(k) >= cube.nt:
        raise ValueError("time-zero shift exceeds the record length")
    return cube.with_values(_shift_samples(cube.values, k))


def shift_source(cube: TimeSeriesCube, delta_z: float) -> TimeSeriesCube:
    """Advance the record by ``delta_z`` time units (source moved closer
    by that distance in a unit-speed medium). Negative values delay."""
    k = int(round(delta_z / cube.dt))
    if abs(k) >= cube.nt:
        raise ValueError("source shift exceeds the record length")
    return cube.with_values(_shift_samples(cube.values, k))


def calibrate(cube: TimeSeriesCube, factor: float) -> TimeSeriesCube:
    """Scale amplitudes by the calibration factor."""
    if factor <= 0:
        raise ValueError("calibration factor must be positive")
    return cube.with_values(cube.values * factor)


def estimate_calibration_factor(
    measured: TimeSeriesCube, simulated: TimeSeriesCube
) -> float:
    """Ratio of simulated to measured peak amplitude at the simulated
    data's strongest detector; both records must be time-aligned."""
    amps = np.abs(simulated.values).max(axis=2)
    i, j = np.unravel_index(int(np.argmax(amps)), amps.shape)
    peak_meas = float(np.abs(measured.values[i, j]).max())
    if peak_meas == 0.0:
        raise ValueError("measured record is zero at the strongest detector")
    return float(np.abs(simulated.values[i, j]).max()) / peak_meas


def propagate_fk(
    cube: TimeSeriesCube,
    target_z: float,
    pad_xy: int = 0,
) -> TimeSeriesCube:
    """Back-propagate a detector-plane record to a nearer parallel plane.

    The record is transformed over (x, y, t); components on the
    propagating cone ``omega^2 > kx^2 + ky^2`` are multiplied by
    ``exp(i*(b-a)*sign(omega)*sqrt(omega^2-kx^2-ky^2))`` and evanescent
    components are zeroed. The signed root keeps the output real and
    turns an axial plane pulse into a pure time advance by ``b - a``.
    Only backward propagation (``target_z <= plane_z``) is supported;
    the half space between the planes is assumed homogeneous with unit
    wave speed.
    """
    b = cube.plane_z
    a = target_z
    if a > b + 1e-12:
        raise ValueError("forward propagation (target above the record plane) "
                         "is not supported")
    dist = b - a
    vals = cube.values
    guard = int(math.ceil(dist / cube.dt)) + 4 if dist > 0 else 0
    if guard:
        vals = np.concatenate(
            [np.zeros(vals.shape[:2] + (guard,)), vals,
             np.zeros(vals.shape[:2] + (guard,))], axis=2)
    if pad_xy:
        vals = np.pad(vals, ((pad_xy, pad_xy), (pad_xy, pad_xy), (0, 0)))

    nx, ny, nt = vals.shape
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, cube.dx)
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, cube.dy)
    om = 2.0 * np.pi * np.fft.fftfreq(nt, cube.dt)
    K2 = kx[:, None, None] ** 2 + ky[None, :, None] ** 2
    OM2 = om[None, None, :] ** 2
    propagating = OM2 > K2
    kz = np.sqrt(np.maximum(OM2 - K2, 0.0))
    phase = np.exp(1j * dist * np.sign(om)[None, None, :] * kz)

    spec = np.fft.fftn(vals, axes=(0, 1, 2))
    spec *= np.where(propagating, phase, 0.0)
    out = np.fft.ifftn(spec, axes=(0, 1, 2)).real

    if pad_xy:
        out = out[pad_xy:-pad_xy, pad_xy:-pad_xy, :]
    if guard:
        out = out[:, :, guard:-guard]
    return cube.with_values(np.ascontiguousarray(out), plane_z=a)


@dataclass(frozen=True)
class DepthEstimate:
    """Burial depth from the two-wavelet peak pattern.

    ``depth = depth_factor * n_sand * dt_delay`` where the delay runs
    from the surface reference peak to the strongest negative peak of
    the target's signal; ``missed`` flags records without a detectable
    target signal.
    """

    depth: float
    strongest_detector: tuple[int, int]
    missed: bool = False
    sand_peak: Peak | None = None
    target_onset: Peak | None = None
    target_peak: Peak | None = None
    exclude_end: int = 0  # peak-list index one past the excluded window

    @classmethod
    def as_missed(cls, detector=(0, 0)) -> "DepthEstimate":
        return cls(depth=float("nan"), strongest_detector=detector, missed=True)


def _strongest_detector(values: np.ndarray) -> tuple[int, int]:
    amps = np.abs(values).max(axis=2)
    i, j = np.unravel_index(int(np.argmax(amps)), amps.shape)
    return int(i), int(j)


def _locate_target_onset(peaks: PeakList, start: int, exclude_end: int):
    """First peak after the excluded window that is stronger than the
    previous peak of the same sign; None when no increase occurs."""
    last_mag = {1: None, -1: None}
    for p in peaks[start:exclude_end]:
        last_mag[p.sign] = p.magnitude
    for k in range(exclude_end, len(peaks)):
        p = peaks[k]
        prev = last_mag[p.sign]
        if prev is not None and p.magnitude > prev:
            return k
        last_mag[p.sign] = p.magnitude
    return None


def estimate_depth(
    cube: TimeSeriesCube,
    n_sand: float = 2.0,
    depth_factor: float = 1.0,
    n_exclude: int = 4,
    noise_floor_frac: float = 0.05,
) -> DepthEstimate:
    """Estimate the burial depth from the propagated record.

    The surface reference is the strongest negative peak among the
    first ``n_exclude`` peaks (counted from the first negative peak) of
    the strongest detector's trace; the target is the first subsequent
    amplitude increase. ``depth_factor`` rescales the verbatim
    ``n_sand * dt`` formula (0.5 per one-way leg for two-way synthetic
    echoes in a unit-speed background).
    """
    if n_sand <= 0:
        raise ValueError("n_sand must be positive")
    det = _strongest_detector(cube.values)
    trace = cube.values[det[0], det[1]]
    peaks = find_peaks(trace, noise_floor_frac)
    if len(peaks) < n_exclude + 1:
        return DepthEstimate.as_missed(det)
    i0 = peaks.first_negative()
    if i0 is None:
        return DepthEstimate.as_missed(det)
    window = peaks[i0:i0 + n_exclude]
    negs = [p for p in window if p.sign < 0]
    sand_peak = max(negs, key=lambda p: p.magnitude)
    exclude_end = i0 + n_exclude
    onset_k = _locate_target_onset(peaks, i0, exclude_end)
    if onset_k is None:
        return DepthEstimate.as_missed(det)
    target_negs = [p for p in peaks[onset_k:] if p.sign < 0]
    if not target_negs:
        return DepthEstimate.as_missed(det)
    target_peak = max(target_negs, key=lambda p: p.magnitude)
    delay = (target_peak.index - sand_peak.index) * cube.dt
    return DepthEstimate(
        depth=depth_factor * n_sand * delay,
        strongest_detector=det,
        sand_peak=sand_peak,
        target_onset=peaks[onset_k],
        target_peak=target_peak,
        exclude_end=exclude_end,
    )


@dataclass(frozen=True)
class TargetClassification:
    """Outcome of the extraction stage.

    ``first_peak_times[i, j]`` is the chosen onset time per detector
    (NaN where the detector was zeroed); a missed target performs no
    extraction at all.
    """

    kind: str  # strong | weak | missed
    strongest_detector: tuple[int, int]
    depth: float
    first_peak_times: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("strong", "weak", "missed"):
            raise ValueError(f"unknown classification {self.kind!r}")
        if self.kind != "missed" and not (self.depth >= 0):
            raise ValueError("classified targets need a non-negative depth")


def _ring_offsets(shape: tuple[int, int], center: tuple[int, int]):
    """Detector visit order: concentric Chebyshev rings outward from the
    center, row-major inside each ring. The first entry is the center."""
    ci, cj = center
    order = []
    max_ring = max(ci, shape[0] - 1 - ci, cj, shape[1] - 1 - cj)
    for r in range(0, max_ring + 1):
        for i in range(ci - r, ci + r + 1):
            for j in range(cj - r, cj + r + 1):
                if max(abs(i - ci), abs(j - cj)) != r:
                    continue
                if 0 <= i < shape[0] and 0 <= j < shape[1]:
                    order.append((i, j))
    return order


def classify_and_extract(
    cube: TimeSeriesCube,
    estimate: DepthEstimate,
    noise_floor_frac: float = 0.05,
    depth_limit: float = WEAK_DEPTH_LIMIT,
) -> tuple[TargetClassification, TimeSeriesCube]:
    """Classify the target and zero everything before its first peak.

    Strong targets (echo louder than the surface reference, or buried
    below ``depth_limit``) chain negative peaks; weak targets chain
    positive ones; weak targets below the limit are missed. Detectors
    without a qualifying peak are zeroed entirely.
    """
    if estimate.missed:
        cls = TargetClassification("missed", estimate.strongest_detector, float("nan"))
        return cls, cube.with_values(np.zeros_like(cube.values))

    det = estimate.strongest_detector
    trace = cube.values[det[0], det[1]]
    peaks = find_peaks(trace, noise_floor_frac)
    after = list(peaks[estimate.exclude_end:])
    negs_after = [p for p in after if p.sign < 0]
    strongest_neg = max(negs_after, key=lambda p: p.magnitude) if negs_after else None

    strong_by_amp = (
        strongest_neg is not None
        and estimate.sand_peak is not None
        and strongest_neg.magnitude > estimate.sand_peak.magnitude
    )
    deep = estimate.depth > depth_limit

    if not strong_by_amp and deep:
        cls = TargetClassification("missed", det, float("nan"))
        return cls, cube.with_values(np.zeros_like(cube.values))

    if strong_by_amp or deep:
        kind = "strong"
        first = strongest_neg
    else:
        kind = "weak"
        # first positive peak larger than the previous positive one
        first = None
        last_pos = None
        for p in peaks[peaks.first_negative() or 0:estimate.exclude_end]:
            if p.sign > 0:
                last_pos = p.magnitude
        for p in after:
            if p.sign > 0:
                if last_pos is not None and p.magnitude > last_pos:
                    first = p
                    break
                last_pos = p.magnitude
    if first is None:
        cls = TargetClassification("missed", det, float("nan"))
        return cls, cube.with_values(np.zeros_like(cube.values))

    want_sign = -1 if kind == "strong" else 1
    out = cube.values.copy()
    first_times = np.full(cube.values.shape[:2], np.nan)

    chosen_idx = np.full(cube.values.shape[:2], -1, dtype=int)

    def pick(i: int, j: int, t_ref: int) -> None:
        pl = find_peaks(cube.values[i, j], noise_floor_frac)
        cands = [p for p in pl if p.sign == want_sign]
        if not cands:
            out[i, j] = 0.0
            return
        best = min(cands, key=lambda p: (abs(p.index - t_ref), p.index))
        chosen_idx[i, j] = best.index
        first_times[i, j] = cube.t0 + best.index * cube.dt
        out[i, j, :best.index] = 0.0

    order = _ring_offsets(cube.values.shape[:2], det)
    chosen_idx[det] = first.index
    first_times[det] = cube.t0 + first.index * cube.dt
    out[det[0], det[1], :first.index] = 0.0
    for (i, j) in order[1:]:
        # reference: the already-processed neighbor one step inward
        ri = i - int(np.sign(i - det[0]))
        rj = j - int(np.sign(j - det[1]))
        t_ref = chosen_idx[ri, rj]
        if t_ref < 0:
            out[i, j] = 0.0
            continue
        pick(i, j, t_ref)

    cls = TargetClassification(kind, det, estimate.depth, first_times)
    return cls, cube.with_values(out)


@dataclass(frozen=True)
class CrossSection:
    """Detector-plane footprint of the target: a boolean mask with its
    lattice coordinates."""

    mask: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def empty(self) -> bool:
        return not bool(self.mask.any())

    def bounds(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) of the footprint."""
        if self.empty:
            raise ValueError("empty cross-section has no bounds")
        ii, jj = np.nonzero(self.mask)
        return (
            float(self.x[ii.min()]), float(self.x[ii.max()]),
            float(self.y[jj.min()]), float(self.y[jj.max()]),
        )

    def centroid(self) -> tuple[float, float]:
        if self.empty:
            raise ValueError("empty cross-section has no centroid")
        ii, jj = np.nonzero(self.mask)
        return float(self.x[ii].mean()), float(self.y[jj].mean())

    def resample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Nearest-detector lookup of the footprint on another lattice."""
        xi = np.abs(x[:, None] - self.x[None, :]).argmin(axis=1)
        yj = np.abs(y[:, None] - self.y[None, :]).argmin(axis=1)
        return self.mask[np.ix_(xi, yj)]


def estimate_cross_section(
    cube: TimeSeriesCube, s: float, beta: float = 0.5
) -> CrossSection:
    """Footprint where the transformed amplitude reaches ``beta`` of its
    maximum: ``{(x, y): |W(x, y; s)| >= beta * max|W|}``."""
    if not 0 < beta <= 1:
        raise ValueError("beta must be in (0, 1]")
    W = laplace_transform(cube.values, cube.dt, s, cube.t0)
    mag = np.abs(W)
    peak = mag.max()
    mask = np.zeros(mag.shape, dtype=bool) if peak == 0.0 else mag >= beta * peak
    return CrossSection(mask, cube.x.copy(), cube.y.copy())
