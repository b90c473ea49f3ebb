"""Objective evaluation: pitch MSE, gross/fine pitch error and mel cepstral distortion.

Conventions (also written into every report's metadata):

* pitch MSE is the mean squared *relative* error over frames voiced in both
  contours, times 100;
* GPE counts mutually voiced frames whose relative error exceeds the
  threshold (0.20 by default);
* FPE is the population standard deviation of the cent errors on the
  mutually voiced frames without a gross error;
* MCD uses orthonormal DCT-II cepstra of the log-mel frames, drops c0 and
  keeps 13 coefficients.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.fft import dct

from .dsp.pitch import PitchContour
from .errors import ContractError, UndefinedMetricError

GPE_THRESHOLD = 0.20
MCD_ORDER = 13
MCD_SCALE = 10.0 / np.log(10.0)


@dataclass
class PitchComparison:
    reference: PitchContour
    hypothesis: PitchContour
    threshold: float = GPE_THRESHOLD

    def __post_init__(self):
        if len(self.reference) != len(self.hypothesis):
            raise ContractError(f"contours differ in length: {len(self.reference)} vs {len(self.hypothesis)}")
        if self.reference.hop != self.hypothesis.hop:
            raise ContractError("contours use different hops")

    def mutual(self) -> tuple[np.ndarray, np.ndarray]:
        both = self.reference.voiced & self.hypothesis.voiced
        return self.reference.f0[both], self.hypothesis.f0[both]


def _mutual_or_raise(cmp: PitchComparison, metric: str):
    ref, hyp = cmp.mutual()
    if ref.size == 0:
        raise UndefinedMetricError(f"{metric}: no frame is voiced in both contours")
    return ref, hyp


def gpe(cmp: PitchComparison) -> float:
    ref, hyp = _mutual_or_raise(cmp, "GPE")
    gross = np.abs(hyp - ref) / ref > cmp.threshold
    return float(100.0 * gross.mean())


def cent_errors(ref: np.ndarray, hyp: np.ndarray) -> np.ndarray:
    return 1200.0 * np.log2(hyp / ref)


def fpe(cmp: PitchComparison) -> float:
    ref, hyp = _mutual_or_raise(cmp, "FPE")
    fine = np.abs(hyp - ref) / ref <= cmp.threshold
    if not fine.any():
        raise UndefinedMetricError("FPE: every mutually voiced frame is a gross error")
    return float(np.std(cent_errors(ref[fine], hyp[fine])))


def pitch_mse(cmp: PitchComparison) -> float:
    ref, hyp = _mutual_or_raise(cmp, "pitch MSE")
    rel = (hyp - ref) / ref
    return float(100.0 * np.mean(rel * rel))


def mel_cepstra(mel, order: int = MCD_ORDER) -> np.ndarray:
    values = np.asarray(getattr(mel, "values", mel), dtype=np.float64)
    if order > values.shape[1]:
        raise ContractError(f"order {order} exceeds {values.shape[1]} mel bins")
    return dct(values, type=2, norm="ortho", axis=1)[:, :order]


def frame_distances(ref: np.ndarray, hyp: np.ndarray) -> np.ndarray:
    """Pairwise per-frame MCD (c0 excluded), shape (len(ref), len(hyp))."""
    diff = ref[:, None, 1:] - hyp[None, :, 1:]
    return MCD_SCALE * np.sqrt(2.0 * np.sum(diff * diff, axis=-1))


def dtw_path(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-total-cost monotone alignment with unit steps."""
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = cost[i - 1]
        for j in range(1, m + 1):
            acc[i, j] = row[j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
    i, j = n, m
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        steps = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        _, i, j = min(steps, key=lambda s: s[0])
        path.append((i - 1, j - 1))
    return path[::-1]


def mcd(ref_cepstra: np.ndarray, hyp_cepstra: np.ndarray, align: str = "none") -> float:
    ref = np.asarray(ref_cepstra, dtype=np.float64)
    hyp = np.asarray(hyp_cepstra, dtype=np.float64)
    if ref.shape[1] < 2 or ref.shape[1] != hyp.shape[1]:
        raise ContractError("MCD needs matching cepstral orders >= 2")
    if align == "none":
        if ref.shape[0] != hyp.shape[0]:
            raise ContractError(f"frame mismatch {ref.shape[0]} vs {hyp.shape[0]}; use align='dtw'")
        diff = ref[:, 1:] - hyp[:, 1:]
        return float(np.mean(MCD_SCALE * np.sqrt(2.0 * np.sum(diff * diff, axis=1))))
    if align == "dtw":
        cost = frame_distances(ref, hyp)
        path = dtw_path(cost)
        return float(np.mean([cost[i, j] for i, j in path]))
    raise ContractError(f"unknown alignment {align!r}")


@dataclass
class MetricReport:
    pitch_mse_percent: float
    gpe_percent: float
    fpe_cents: float
    mcd: float
    frames: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=lambda: dict(REPORT_METADATA))

    def to_record(self) -> dict:
        return asdict(self)


REPORT_METADATA = {
    "pitch_mse": "mean squared relative error over mutually voiced frames x 100",
    "gpe_threshold": GPE_THRESHOLD,
    "fpe_std": "population",
    "mcd_order": MCD_ORDER,
    "mcd_c0": "excluded",
    "mcd_dct": "DCT-II orthonormal of natural-log mel",
}


def compare(ref_mel, hyp_mel, ref_pitch: PitchContour, hyp_pitch: PitchContour, align: str = "none",
            threshold: float = GPE_THRESHOLD) -> MetricReport:
    """Full report for one reference/hypothesis pair.

    With ``align="dtw"`` the cepstral DTW path also pairs the pitch frames.
    """
    rc, hc = mel_cepstra(ref_mel), mel_cepstra(hyp_mel)
    if align == "dtw":
        path = dtw_path(frame_distances(rc, hc))
        ri = np.array([i for i, _ in path])
        hi = np.array([j for _, j in path])
        ref_pitch = PitchContour(ref_pitch.f0[ri], ref_pitch.voiced[ri], ref_pitch.hop)
        hyp_pitch = PitchContour(hyp_pitch.f0[hi], hyp_pitch.voiced[hi], hyp_pitch.hop)
    cmp = PitchComparison(ref_pitch, hyp_pitch, threshold)
    ref, hyp = cmp.mutual()
    fine = int(np.sum(np.abs(hyp - ref) / ref <= threshold)) if ref.size else 0
    meta = dict(REPORT_METADATA, gpe_threshold=threshold, align=align)
    return MetricReport(
        pitch_mse_percent=pitch_mse(cmp), gpe_percent=gpe(cmp), fpe_cents=fpe(cmp), mcd=mcd(rc, hc, align),
        frames={"pitch": int(ref.size), "fpe": fine, "mcd": int(len(ri) if align == "dtw" else rc.shape[0])},
        metadata=meta,
    )


def aggregate(reports: list[MetricReport]) -> dict:
    """Frame-weighted corpus means of each metric."""
    out = {}
    for key, frames_key in (("pitch_mse_percent", "pitch"), ("gpe_percent", "pitch"), ("fpe_cents", "fpe"),
                            ("mcd", "mcd")):
        w = np.array([r.frames[frames_key] for r in reports], dtype=np.float64)
        v = np.array([getattr(r, key) for r in reports])
        out[key] = float(np.sum(w * v) / np.sum(w)) if w.sum() > 0 else float("nan")
    out["utterances"] = len(reports)
    return out
