import os
from dataclasses import dataclass
from multiprocessing.pool import ThreadPool

from munch import Munch
import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve, toeplitz
from scipy.signal import fftconvolve
from tqdm import tqdm
import yaml

import models
from corpus import load_mixtures
from samplers import SNR_BUCKETS


SDR_CAP_DB = 100.0
DEFAULT_FILTER_LEN = 512
RESULT_COLUMNS = ["utterance_id", "input_snr_db", "sdr_db", "input_sdr_db"]


def get_model_from_run(run_path, step=-1, only_conf=False):
    config_path = os.path.join(run_path, "config.yaml")
    with open(config_path) as fp:  # we don't Quinfig it to avoid inherits
        conf = Munch.fromDict(yaml.safe_load(fp))
    if only_conf:
        return None, conf

    if step == -1:
        ckpt_path = os.path.join(run_path, "best.ckpt")
    else:
        ckpt_path = os.path.join(run_path, f"model_{step}.ckpt")
    network, _ = models.load_checkpoint(ckpt_path)
    return network, conf


@dataclass
class SdrResult:
    utterance_id: str
    input_snr_db: float
    sdr_db: float
    filter_len: int = DEFAULT_FILTER_LEN
    capped: bool = False
    trial: int = None
    input_sdr_db: float = None


@dataclass
class SdrReport:
    bucket_means: dict  # snr bucket -> mean SDR, None when the bucket is empty
    average: float
    n_trials: int
    std: float

    def to_frame(self):
        row = {f"{snr:g}dB": self.bucket_means[snr] for snr in SNR_BUCKETS}
        row.update({"Avg": self.average, "trials": self.n_trials, "std": self.std})
        return pd.DataFrame([row])


def _mono(x, what):
    samples = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    if samples.ndim == 2:
        if samples.shape[0] != 1:
            raise ValueError(f"{what} must be single-channel, got {samples.shape[0]} channels")
        samples = samples[0]
    return samples


def _lagged_correlation(x, y, n_lags):
    """sum_t x[t] y[t - l] for l = 0..n_lags-1."""
    full = fftconvolve(x, y[::-1])
    n = len(y)
    return full[n - 1 : n - 1 + n_lags]


def bss_sdr(estimate, reference, filter_len=DEFAULT_FILTER_LEN, utterance_id="", input_snr_db=float("nan")):
    """Single-source BSS Eval SDR.

    The target component is the least-squares projection of the estimate
    (zero-padded by filter_len - 1) onto the reference filtered by any FIR of
    filter_len taps; everything else counts as distortion.
    """
    est, ref = _mono(estimate, "estimate"), _mono(reference, "reference")
    if len(est) != len(ref):
        raise ValueError(f"estimate ({len(est)}) and reference ({len(ref)}) lengths differ")
    if filter_len < 1:
        raise ValueError(f"filter_len must be >= 1, got {filter_len}")
    if len(ref) < filter_len:
        raise ValueError(f"signal length {len(ref)} is shorter than filter_len {filter_len}")
    if not np.any(ref):
        raise ValueError("reference is all zeros")

    autocorr = _lagged_correlation(ref, ref, filter_len)
    cross = _lagged_correlation(est, ref, filter_len)
    gram = toeplitz(autocorr)
    gram[np.diag_indices(filter_len)] += 1e-10 * autocorr[0]
    taps = cho_solve(cho_factor(gram), cross)

    s_target = fftconvolve(ref, taps)
    est_padded = np.concatenate([est, np.zeros(filter_len - 1)])
    target_energy = np.sum(s_target**2)
    error_energy = np.sum((est_padded - s_target) ** 2)

    if target_energy == 0:
        # silent estimate: nothing of the reference survives
        return SdrResult(utterance_id, input_snr_db, -SDR_CAP_DB, filter_len, True)
    capped = error_energy <= target_energy * 10 ** (-SDR_CAP_DB / 10)
    sdr = SDR_CAP_DB if capped else 10 * np.log10(target_energy / error_energy)
    return SdrResult(utterance_id, input_snr_db, float(sdr), filter_len, bool(capped))


def snr_db(signal, noise):
    s = np.asarray(getattr(signal, "samples", signal), dtype=np.float64)
    n = np.asarray(getattr(noise, "samples", noise), dtype=np.float64)
    if s.shape != n.shape:
        raise ValueError(f"signal {s.shape} and noise {n.shape} differ in shape")
    noise_energy = np.sum(n**2)
    if noise_energy == 0:
        raise ValueError("noise has zero energy")
    return float(10 * np.log10(np.sum(s**2) / noise_energy))


def aggregate(results):
    """Per-SNR-bucket means, their average, and std of the per-trial averages."""
    if not results:
        raise ValueError("no results to aggregate")
    df = pd.DataFrame(
        {
            "input_snr_db": [r.input_snr_db for r in results],
            "sdr_db": [r.sdr_db for r in results],
            "trial": [0 if r.trial is None else r.trial for r in results],
        }
    )
    unknown = sorted(set(df.input_snr_db) - set(SNR_BUCKETS))
    if unknown:
        raise ValueError(f"results outside the SNR buckets {SNR_BUCKETS}: {unknown}")

    means = df.groupby("input_snr_db").sdr_db.mean()
    bucket_means = {snr: (float(means[snr]) if snr in means.index else None) for snr in SNR_BUCKETS}
    average = float(means.mean())

    per_trial = df.groupby(["trial", "input_snr_db"]).sdr_db.mean().groupby("trial").mean()
    std = float(per_trial.std(ddof=0))
    return SdrReport(bucket_means, average, int(len(per_trial)), std)


def _threads():
    return max(int(os.environ.get("MASKSTREAM_THREADS", os.cpu_count() or 1)), 1)


def score_mixture(network, mixture, params=None, filter_len=DEFAULT_FILTER_LEN):
    enhanced, _ = models.enhance_offline(network, mixture.noisy, params)
    result = bss_sdr(enhanced, mixture.clean, filter_len, mixture.spec.utterance_id, mixture.spec.snr_db)
    result.input_sdr_db = bss_sdr(mixture.noisy.channel(0), mixture.clean, filter_len).sdr_db
    return result


def score_mixtures(network, mixtures, params=None, filter_len=DEFAULT_FILTER_LEN, trial=None, progress=False):
    def score(mixture):
        return score_mixture(network, mixture, params, filter_len)

    with ThreadPool(min(_threads(), len(mixtures))) as pool:
        results = pool.imap(score, mixtures)
        if progress:
            results = tqdm(results, total=len(mixtures), desc="evaluate")
        results = list(results)
    for r in results:
        r.trial = trial
    return results


def results_frame(results):
    return pd.DataFrame(
        [[r.utterance_id, r.input_snr_db, r.sdr_db, r.input_sdr_db] for r in results], columns=RESULT_COLUMNS
    )


def evaluate_network(network, manifest, data_dir=None, params=None, filter_len=DEFAULT_FILTER_LEN, progress=True):
    """Per-utterance SDR of the enhanced output and of the noisy input, one row per manifest entry."""
    mixtures = load_mixtures(manifest, data_dir)
    results = score_mixtures(network, mixtures, params, filter_len, progress=progress)
    return results_frame(results), aggregate(results)


def write_report_csv(path, df, report=None):
    """Per-utterance rows to path; the bucket summary row to <stem>_summary.csv."""
    df.to_csv(path, index=False)
    if report is None:
        return None
    stem, ext = os.path.splitext(path)
    summary_path = f"{stem}_summary{ext or '.csv'}"
    report.to_frame().to_csv(summary_path, index=False)
    return summary_path
