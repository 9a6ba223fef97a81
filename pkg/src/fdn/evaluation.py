"""Embedding extraction, trial scoring, EER, and the speed-robustness sweep.

EER convention: sweep thresholds over all distinct scores (plus a sentinel
above the maximum), with "score >= threshold" counted as accept. FAR is the
fraction of nontargets accepted, FRR the fraction of targets rejected; the
EER is read off where FAR = FRR, linearly interpolating between the two
adjacent sweep points that bracket the crossing. Because the sweep depends
on the scores only through their ranks, any strictly increasing transform of
the scores leaves the EER unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CorpusManifest, Waveform, crop_or_pad, pre_emphasis, read_wav, speed_perturb
from .autodiff import Tensor
from .model import FdnNetwork


@dataclass
class Trial:
    label: int  # 1 target, 0 nontarget
    enroll: str
    test: str


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray  # 1 target, 0 nontarget

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1 or self.scores.size == 0:
            raise ValueError("scores and labels must be equal-length non-empty 1-D arrays")
        if not ((self.labels == 0) | (self.labels == 1)).all():
            raise ValueError("labels must be 0 or 1")


def extract_embedding(model: FdnNetwork, wave: Waveform,
                      pre_emphasis_coeff: float = 0.97) -> np.ndarray:
    """L2-normalized utterance embedding, eval mode.

    The utterance is cyclically padded up to the model's minimum inference
    length, or center-cropped down to the largest usable multiple of the
    stride product, then pre-emphasized and pushed through the network.
    """
    cfg = model.config
    n = len(wave)
    if n < cfg.min_eval_samples:
        target = cfg.min_eval_samples
    else:
        target = (n // cfg.stride_product) * cfg.stride_product
    clip = crop_or_pad(wave, target, policy="center")
    clip = pre_emphasis(clip, pre_emphasis_coeff)
    embedding, _ = model.forward(Tensor(clip.samples[None, :]), training=False)
    vec = embedding.data
    norm = np.linalg.norm(vec)
    assert norm > 0.0, "embedding collapsed to the zero vector"
    return vec / norm


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine score of a zero vector is undefined")
    return float(a @ b / (na * nb))


def compute_eer(scores: ScoreSet):
    """Equal error rate and its threshold; see the module docstring for the
    sweep and interpolation convention."""
    labels = scores.labels
    vals = scores.scores
    targets = np.sort(vals[labels == 1])
    nontargets = np.sort(vals[labels == 0])
    if targets.size == 0 or nontargets.size == 0:
        raise ValueError("EER needs at least one target and one nontarget score")

    thresholds = np.unique(vals)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)  # sentinel: FAR 0, FRR 1
    # fraction of nontargets >= thr, fraction of targets < thr
    far = 1.0 - np.searchsorted(nontargets, thresholds, side="left") / nontargets.size
    frr = np.searchsorted(targets, thresholds, side="left") / targets.size

    diff = far - frr  # starts at +1 (thr = min score), ends at -1 (sentinel)
    for i in range(len(thresholds)):
        if diff[i] == 0.0:
            return float(far[i]), float(thresholds[i])
        if diff[i] < 0.0:
            # crossing lies between i-1 and i
            t = diff[i - 1] / (diff[i - 1] - diff[i])
            eer = far[i - 1] + t * (far[i] - far[i - 1])
            thr = thresholds[i - 1] + t * (thresholds[i] - thresholds[i - 1])
            return float(eer), float(thr)
    raise AssertionError("FAR/FRR curves failed to cross")  # unreachable


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------


def read_trials(path) -> list:
    """Parse ``label enroll test`` lines, label in {1, 0}."""
    trials = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("0", "1"):
            raise ValueError(f"{path}:{lineno}: expected '1|0 enroll test'")
        trials.append(Trial(int(parts[0]), parts[1], parts[2]))
    if not trials:
        raise ValueError(f"{path}: no trials")
    return trials


def write_trials(path, trials):
    Path(path).write_text(
        "".join(f"{t.label} {t.enroll} {t.test}\n" for t in trials), encoding="utf-8")


def all_pairs_trials(manifest: CorpusManifest) -> list:
    """Every unordered utterance pair, labeled by speaker identity."""
    entries = manifest.entries
    trials = []
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            same = int(entries[i].speaker_id == entries[j].speaker_id)
            trials.append(Trial(same, entries[i].utterance_id, entries[j].utterance_id))
    return trials


# ---------------------------------------------------------------------------
# protocol evaluation
# ---------------------------------------------------------------------------


def _embedding_cache(model, manifest, utt_ids, transform=None):
    by_id = manifest.by_id()
    missing = sorted(set(utt_ids) - set(by_id))
    if missing:
        raise ValueError(f"trials reference utterances missing from the manifest: {missing}")
    cache = {}
    for utt in sorted(set(utt_ids)):
        wave = read_wav(by_id[utt].path)
        if transform is not None:
            wave = transform(wave)
        cache[utt] = extract_embedding(model, wave)
    return cache


def evaluate_protocol(model: FdnNetwork, manifest: CorpusManifest, trials) -> dict:
    """Score every trial by cosine of cached embeddings and report the EER.

    Each utterance is embedded once no matter how many trials cite it.
    """
    enroll_cache = _embedding_cache(model, manifest, [t.enroll for t in trials])
    test_needed = set(t.test for t in trials) - set(enroll_cache)
    test_cache = _embedding_cache(model, manifest, test_needed) if test_needed else {}
    cache = {**enroll_cache, **test_cache}

    scores = np.array([cosine_score(cache[t.enroll], cache[t.test]) for t in trials])
    labels = np.array([t.label for t in trials])
    score_set = ScoreSet(scores, labels)
    eer, threshold = compute_eer(score_set)
    return {
        "eer": eer,
        "threshold": threshold,
        "n_trials": len(trials),
        "n_target": int(labels.sum()),
        "n_nontarget": int((1 - labels).sum()),
        "target_score_mean": float(scores[labels == 1].mean()),
        "nontarget_score_mean": float(scores[labels == 0].mean()),
        "score_min": float(scores.min()),
        "score_max": float(scores.max()),
        "scores": score_set,
    }


def perturbation_sweep(model: FdnNetwork, manifest: CorpusManifest, trials, factors) -> list:
    """Re-run the protocol with the test side of every trial speed-perturbed.

    Enrollment embeddings stay clean. Returns [(factor, eer, threshold), ...]
    in the given factor order; factor 1.0 reproduces the clean protocol
    exactly since the perturbation is then the identity.
    """
    enroll_cache = _embedding_cache(model, manifest, [t.enroll for t in trials])
    labels = np.array([t.label for t in trials])
    rows = []
    for factor in factors:
        test_cache = _embedding_cache(model, manifest, [t.test for t in trials],
                                      transform=lambda w: speed_perturb(w, factor))
        scores = np.array([cosine_score(enroll_cache[t.enroll], test_cache[t.test])
                           for t in trials])
        eer, threshold = compute_eer(ScoreSet(scores, labels))
        rows.append((float(factor), eer, threshold))
    return rows
