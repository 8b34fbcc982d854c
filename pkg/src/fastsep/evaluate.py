"""Separation quality (SI-SDR) and per-iteration timing statistics."""

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

# SI-SDR is clamped to +/- SDR_CAP dB; a perfect match would be +inf.
SDR_CAP = 100.0


def si_sdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The reference is projected onto the estimate by the least-squares
    scalar a = <est, ref>/<ref, ref>; returns 10 log10(|a ref|^2 /
    |a ref - est|^2), clamped to [-SDR_CAP, SDR_CAP].
    """
    est = np.asarray(estimate, dtype=np.float64).ravel()
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise InvalidInputError(
            f"length mismatch: estimate {est.shape[0]}, reference {ref.shape[0]}"
        )
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise InvalidInputError("reference signal is zero")
    a = float(np.dot(est, ref)) / ref_energy
    target = a * ref
    target_energy = float(np.dot(target, target))
    err = est - target
    err_energy = float(np.dot(err, err))
    if err_energy <= target_energy * 10.0 ** (-SDR_CAP / 10.0):
        return SDR_CAP
    if target_energy <= err_energy * 10.0 ** (-SDR_CAP / 10.0):
        return -SDR_CAP
    return float(np.clip(10.0 * np.log10(target_energy / err_energy), -SDR_CAP, SDR_CAP))


def best_permutation(estimates_NL, references_NL):
    """Assignment of estimates to references maximizing mean SI-SDR.

    Exhaustive over source permutations (intended for N <= 5). Returns
    (permutation, per-source SI-SDR in reference order).
    """
    est = np.atleast_2d(np.asarray(estimates_NL))
    ref = np.atleast_2d(np.asarray(references_NL))
    if est.shape[0] != ref.shape[0]:
        raise InvalidInputError("estimate/reference source counts differ")
    n = est.shape[0]
    table = np.array([[si_sdr(est[j], ref[i]) for j in range(n)] for i in range(n)])
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(n)):
        score = float(np.mean([table[i, perm[i]] for i in range(n)]))
        if score > best:
            best, best_perm = score, perm
    return best_perm, np.array([table[i, best_perm[i]] for i in range(n)])


def timing_stats(time_trace):
    """(mean, median) seconds per iteration, first entry excluded as warm-up."""
    trace = np.asarray(time_trace, dtype=np.float64)
    if trace.size == 0:
        raise InvalidInputError("empty time trace")
    body = trace[1:] if trace.size > 1 else trace
    return float(body.mean()), float(np.median(body))


@dataclass
class EvalReport:
    """One evaluated source of one method run."""

    method: str
    source: int
    si_sdr_db: float
    input_si_sdr_db: float
    mean_iter_seconds: float = float("nan")
    median_iter_seconds: float = float("nan")

    @property
    def improvement_db(self) -> float:
        return self.si_sdr_db - self.input_si_sdr_db


REPORT_COLUMNS = (
    "method",
    "source",
    "si_sdr_db",
    "input_si_sdr_db",
    "improvement_db",
    "mean_iter_seconds",
    "median_iter_seconds",
)


def write_report_csv(path, reports):
    """Write EvalReport rows with the documented header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow(
                [
                    r.method,
                    r.source,
                    f"{r.si_sdr_db:.4f}",
                    f"{r.input_si_sdr_db:.4f}",
                    f"{r.improvement_db:.4f}",
                    f"{r.mean_iter_seconds:.6f}",
                    f"{r.median_iter_seconds:.6f}",
                ]
            )


def evaluate_separation(estimates_NLM, references_NLM, mixture_LM, method="", channel=0):
    """Reports for multichannel estimates against references.

    SI-SDR is measured on ``channel``; the estimate-to-reference assignment
    maximizes mean SI-SDR; input SI-SDR compares the mixture to each
    reference on the same channel.
    """
    est = np.asarray(estimates_NLM)
    ref = np.asarray(references_NLM)
    mix = np.asarray(mixture_LM)
    if est.shape != ref.shape:
        raise InvalidInputError(
            f"estimate shape {est.shape} does not match references {ref.shape}"
        )
    perm, scores = best_permutation(est[..., channel], ref[..., channel])
    reports = []
    for i in range(ref.shape[0]):
        reports.append(
            EvalReport(
                method=method,
                source=i,
                si_sdr_db=float(scores[i]),
                input_si_sdr_db=si_sdr(mix[:, channel], ref[i, :, channel]),
            )
        )
    return reports
