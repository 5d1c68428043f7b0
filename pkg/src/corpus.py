import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from samplers import SNR_BUCKETS, mix_at_snr, synth_noise, synth_target
from stft import AudioBuffer, DEFAULT_SAMPLE_RATE
from wavio import read_wav, write_wav


GENERATOR_VERSION = "1"
SPLITS = ("train", "dev", "eval")
SPLIT_SEED_BASE = {"train": 0, "dev": 1_000_000, "eval": 2_000_000}
SPLIT_SEED_SPAN = 1_000_000
GLOBAL_SEED_STRIDE = 10_000
MAX_GLOBAL_SEED = SPLIT_SEED_SPAN // GLOBAL_SEED_STRIDE - 1
MAX_MANIFEST_COUNT = GLOBAL_SEED_STRIDE // 2
MANIFEST_COLUMNS = ["id", "duration_s", "target_seed", "noise_seed", "snr_db"]


@dataclass
class MixtureSpec:
    utterance_id: str
    duration_s: float
    target_seed: int
    noise_seed: int
    snr_db: float
    channels: int = 2

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"{self.utterance_id}: duration must be positive, got {self.duration_s}")
        if float(self.snr_db) not in SNR_BUCKETS:
            raise ValueError(f"{self.utterance_id}: snr_db must be one of {SNR_BUCKETS}, got {self.snr_db}")
        if self.channels != 2:
            raise ValueError(f"{self.utterance_id}: mixtures are two-channel, got {self.channels}")


@dataclass
class DatasetManifest:
    split: str
    entries: list = field(default_factory=list)
    generator_version: str = GENERATOR_VERSION
    global_seed: int = 0

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate utterance ids in {self.split} manifest: {', '.join(dupes)}")
        low = SPLIT_SEED_BASE[self.split]
        for e in self.entries:
            for seed in (e.target_seed, e.noise_seed):
                if not low <= seed < low + SPLIT_SEED_SPAN:
                    raise ValueError(
                        f"{e.utterance_id}: seed {seed} outside the {self.split} range "
                        f"[{low}, {low + SPLIT_SEED_SPAN})"
                    )

    def __len__(self):
        return len(self.entries)

    def to_frame(self):
        rows = [
            [e.utterance_id, e.duration_s, e.target_seed, e.noise_seed, e.snr_db] for e in self.entries
        ]
        return pd.DataFrame(rows, columns=MANIFEST_COLUMNS)


def make_manifest(split, count, duration_s=3.0, global_seed=0):
    """Seed-disjoint manifest cycling through the six SNR buckets."""
    if split not in SPLIT_SEED_BASE:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    # each global seed owns a disjoint block of two seeds per entry
    if count > MAX_MANIFEST_COUNT:
        raise ValueError(f"count must be <= {MAX_MANIFEST_COUNT}, got {count}")
    if not 0 <= global_seed <= MAX_GLOBAL_SEED:
        raise ValueError(f"global_seed must be in [0, {MAX_GLOBAL_SEED}], got {global_seed}")
    base = SPLIT_SEED_BASE[split] + global_seed * GLOBAL_SEED_STRIDE
    entries = [
        MixtureSpec(
            utterance_id=f"{split}_{i:05d}",
            duration_s=duration_s,
            target_seed=base + 2 * i,
            noise_seed=base + 2 * i + 1,
            snr_db=SNR_BUCKETS[i % len(SNR_BUCKETS)],
        )
        for i in range(count)
    ]
    return DatasetManifest(split, entries, GENERATOR_VERSION, global_seed)


def write_manifest(path, manifest):
    with open(path, "w", encoding="utf-8", newline="") as fp:
        fp.write(f"# split={manifest.split}\n")
        fp.write(f"# generator_version={manifest.generator_version}\n")
        fp.write(f"# global_seed={manifest.global_seed}\n")
        manifest.to_frame().to_csv(fp, index=False)


def read_manifest(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such manifest: {path}")
    header = {}
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
    if "split" not in header:
        raise ValueError(f"{path}: manifest has no '# split=' header")

    df = pd.read_csv(path, comment="#", dtype={"id": str})
    missing = [c for c in MANIFEST_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: manifest is missing columns {missing}")
    entries = [
        MixtureSpec(row.id, float(row.duration_s), int(row.target_seed), int(row.noise_seed), float(row.snr_db))
        for row in df.itertuples(index=False)
    ]
    return DatasetManifest(
        header["split"],
        entries,
        header.get("generator_version", GENERATOR_VERSION),
        int(header.get("global_seed", 0)),
    )


@dataclass
class Mixture:
    spec: MixtureSpec
    noisy: AudioBuffer
    clean: AudioBuffer


def generate_mixture(spec, split, sample_rate=DEFAULT_SAMPLE_RATE):
    target = synth_target(spec.duration_s, spec.target_seed, sample_rate)
    noise = synth_noise(spec.duration_s, spec.noise_seed, split, sample_rate)
    noisy, clean = mix_at_snr(target, noise, spec.snr_db)
    return Mixture(spec, noisy, clean)


def mixture_paths(output_dir, utterance_id):
    return (
        os.path.join(output_dir, f"{utterance_id}_noisy.wav"),
        os.path.join(output_dir, f"{utterance_id}_clean.wav"),
    )


def build_corpus(manifest, output_dir, sample_format="float32"):
    """Write `<id>_noisy.wav` (2ch) and `<id>_clean.wav` (1ch) for every entry."""
    os.makedirs(output_dir, exist_ok=True)
    write_manifest(os.path.join(output_dir, f"{manifest.split}_manifest.csv"), manifest)
    paths = []
    for spec in tqdm(manifest.entries, desc=f"gen {manifest.split}"):
        mixture = generate_mixture(spec, manifest.split)
        noisy_path, clean_path = mixture_paths(output_dir, spec.utterance_id)
        write_wav(noisy_path, mixture.noisy, sample_format)
        write_wav(clean_path, mixture.clean, sample_format)
        paths.extend([noisy_path, clean_path])
    return paths


def load_mixtures(manifest, data_dir=None, progress=False):
    """Mixtures for a manifest, read from data_dir when given, otherwise generated."""
    mixtures = []
    entries = tqdm(manifest.entries, desc=f"load {manifest.split}") if progress else manifest.entries
    for spec in entries:
        if data_dir is None:
            mixtures.append(generate_mixture(spec, manifest.split))
            continue
        noisy_path, clean_path = mixture_paths(data_dir, spec.utterance_id)
        noisy, clean = read_wav(noisy_path), read_wav(clean_path)
        if len(noisy) != len(clean):
            raise ValueError(f"{spec.utterance_id}: noisy and clean WAVs differ in length")
        mixtures.append(Mixture(spec, noisy, clean.channel(0)))
    return mixtures


def chunk_fixed(clips, chunk_s=3.0):
    """Consecutive non-overlapping chunks; the trailing fractional chunk is dropped.

    Each clip is an AudioBuffer or a tuple of equally long AudioBuffers (e.g.
    noisy and clean), which are cut at the same positions.
    """
    if chunk_s <= 0:
        raise ValueError(f"chunk_s must be positive, got {chunk_s}")
    chunks = []
    for clip in clips:
        parts = clip if isinstance(clip, tuple) else (clip,)
        length = len(parts[0])
        if any(len(p) != length for p in parts):
            raise ValueError("clips cut together must have equal lengths")
        chunk_len = int(round(chunk_s * parts[0].sample_rate))
        for start in range(0, length - chunk_len + 1, chunk_len):
            cut = tuple(
                AudioBuffer(np.array(p.samples[:, start : start + chunk_len]), p.sample_rate) for p in parts
            )
            chunks.append(cut if isinstance(clip, tuple) else cut[0])
    return chunks
