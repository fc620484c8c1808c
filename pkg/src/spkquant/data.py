"""Synthetic speaker features and the FEAT file format.

Randomness comes from numpy's PCG64 bit generator keyed by a
``SeedSequence``, which is stable across platforms and numpy releases.
"""
import os
import re
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Tuple

import numpy as np

FEAT_MAGIC = b"FEAT"
CALIBRATION_SEED_OFFSET = 1
_UTT_PATH = re.compile(r"^spk(\d+)$")
_UTT_FILE = re.compile(r"^utt(\d+)\.feat$")


@dataclass(frozen=True)
class SpeakerDatasetSpec:
    n_speakers: int = 20
    utts_per_speaker: int = 10
    frames: int = 100
    feat_dim: int = 16
    spread: float = 1.0
    noise: float = 0.3
    smoothing: int = 5
    seed: int = 42

    def __post_init__(self):
        counts = (self.n_speakers, self.utts_per_speaker, self.frames, self.feat_dim, self.smoothing)
        if min(counts) < 1:
            raise ValueError(f"dataset counts must be >= 1: {self}")
        if not self.spread > 0:
            raise ValueError(f"spread must be positive, got {self.spread}")
        if self.noise < 0:
            raise ValueError(f"noise must be non-negative, got {self.noise}")

    def for_split(self, split):
        """Calibration and evaluation data come from different seeds, hence different speakers."""
        if split == "evaluation":
            return self
        if split == "calibration":
            return replace(self, seed=self.seed + CALIBRATION_SEED_OFFSET)
        raise ValueError(f"unknown split {split!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class FeatureSet:
    utterances: Dict[str, Tuple[str, np.ndarray]] = field(default_factory=dict)
    split: str = "evaluation"

    def __len__(self):
        return len(self.utterances)

    def features(self):
        for _, x in self.utterances.values():
            yield x

    def __getitem__(self, utt_id):
        try:
            return self.utterances[utt_id][1]
        except KeyError:
            raise KeyError(f"unknown utterance id {utt_id!r}") from None

    def speaker(self, utt_id):
        return self.utterances[utt_id][0]

    def subset(self, n):
        """First ``n`` utterances, in stored order."""
        keep = list(self.utterances.items())[:n]
        return FeatureSet(dict(keep), self.split)

    def equals(self, other):
        if list(self.utterances) != list(other.utterances):
            return False
        for k, (spk, x) in self.utterances.items():
            spk2, y = other.utterances[k]
            if spk != spk2 or x.dtype != y.dtype or x.shape != y.shape or x.tobytes() != y.tobytes():
                return False
        return True


def _smooth(x, w):
    """Moving average over time with edge replication; keeps length."""
    if w == 1:
        return x
    left = (w - 1) // 2
    padded = np.pad(x, ((0, 0), (left, w - 1 - left)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, w, axis=1)
    return windows.mean(axis=2)


def generate(spec, split="evaluation"):
    spec = spec.for_split(split)
    fs = FeatureSet(split=split)
    for k in range(spec.n_speakers):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, k])))
        mean = spec.spread * rng.standard_normal(spec.feat_dim)
        spk = f"spk{k:03d}"
        for j in range(spec.utts_per_speaker):
            noise = spec.noise * rng.standard_normal((spec.feat_dim, spec.frames))
            x = _smooth(mean[:, None] + noise, spec.smoothing)
            fs.utterances[f"{spk}/utt{j:03d}"] = (spk, x.astype(np.float32))
    return fs


@dataclass(frozen=True)
class Trial:
    target: bool
    enroll: str
    test: str


def build_trials(fs, n_target, n_nontarget, seed=0):
    """Sample distinct same-speaker and different-speaker utterance pairs."""
    if n_target < 1 or n_nontarget < 1:
        raise ValueError("need at least one target and one nontarget trial")
    ids = list(fs.utterances)
    spk = [fs.speaker(u) for u in ids]
    same, diff = [], []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            (same if spk[i] == spk[j] else diff).append((i, j))
    if len(same) < n_target:
        raise ValueError(f"only {len(same)} target pairs available, {n_target} requested")
    if len(diff) < n_nontarget:
        raise ValueError(f"only {len(diff)} nontarget pairs available, {n_nontarget} requested")
    rng = np.random.Generator(np.random.PCG64(seed))
    trials = []
    for pool, n, target in ((same, n_target, True), (diff, n_nontarget, False)):
        for idx in rng.choice(len(pool), size=n, replace=False):
            i, j = pool[int(idx)]
            trials.append(Trial(target, ids[i], ids[j]))
    return trials


def write_trials(trials, path):
    with open(path, "w", encoding="utf-8") as f:
        for t in trials:
            f.write(f"{int(t.target)} {t.enroll} {t.test}\n")


def read_trials(path):
    trials = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: expected '<0|1> <enroll_id> <test_id>'")
            trials.append(Trial(parts[0] == "1", parts[1], parts[2]))
    return trials


def write_feature_file(path, x):
    x = np.asarray(x, dtype="<f4")
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC + struct.pack("<II", *x.shape) + x.tobytes())


def read_feature_file(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FEAT_MAGIC:
        raise ValueError(f"{path}: bad magic, not a FEAT file")
    if len(data) < 12:
        raise ValueError(f"{path}: truncated header")
    f_dim, t = struct.unpack_from("<II", data, 4)
    want = 12 + 4 * f_dim * t
    if len(data) != want:
        raise ValueError(f"{path}: truncated payload ({len(data)} bytes, expected {want})")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(f_dim, t).astype(np.float32)


def save_features(fs, root):
    for utt, (spk, x) in fs.utterances.items():
        utt_spk, name = utt.split("/")
        if utt_spk != spk:
            raise ValueError(f"utterance {utt} is not under its speaker {spk}")
        os.makedirs(os.path.join(root, spk), exist_ok=True)
        write_feature_file(os.path.join(root, spk, name + ".feat"), x)


def load_features(root, split="evaluation"):
    """Read a ``spk<k>/utt<j>.feat`` tree; ids are ``spk<k>/utt<j>`` in numeric order."""
    if not os.path.isdir(root):
        raise ValueError(f"{root}: not a directory")
    entries = []
    for spk in os.listdir(root):
        m = _UTT_PATH.match(spk)
        if not m or not os.path.isdir(os.path.join(root, spk)):
            continue
        for name in os.listdir(os.path.join(root, spk)):
            n = _UTT_FILE.match(name)
            if n:
                entries.append((int(m.group(1)), int(n.group(1)), spk, name))
    if not entries:
        raise ValueError(f"{root}: no feature files found")
    fs = FeatureSet(split=split)
    f_dim = None
    for _, _, spk, name in sorted(entries):
        path = os.path.join(root, spk, name)
        x = read_feature_file(path)
        if f_dim is None:
            f_dim = x.shape[0]
        elif x.shape[0] != f_dim:
            raise ValueError(f"{path}: feature dimension {x.shape[0]} differs from {f_dim}")
        fs.utterances[f"{spk}/{name[:-5]}"] = (spk, x)
    return fs
