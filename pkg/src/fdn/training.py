"""AMSGrad optimization and the cropped-waveform training loop.

Mini-batches run as a loop over utterances with gradient accumulation; the
batch loss is the mean, so accumulated gradients are divided by the batch
size before the optimizer step. All randomness (shuffling, crop offsets)
comes from one numpy PCG64 generator seeded by the config, which makes runs
bit-reproducible on a platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .audio import CorpusManifest, crop_or_pad, pre_emphasis, read_wav
from .autodiff import Tape, Tensor
from .checkpoint import save_checkpoint
from .model import FdnNetwork


class AmsGrad:
    """AMSGrad with L2 weight decay added to the gradient.

    Update, per parameter, at step t:

        g    <- grad + weight_decay * theta
        m    <- beta1 * m + (1 - beta1) * g
        v    <- beta2 * v + (1 - beta2) * g^2
        vhat <- max(vhat, v)                       (elementwise, never decreases)
        theta <- theta - lr * (m / (1 - beta1^t)) / (sqrt(vhat / (1 - beta2^t)) + eps)
    """

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.vhat = [np.zeros_like(p.data) for p in self.params]

    def step(self, grad_scale: float = 1.0):
        """Apply one update; ``grad_scale`` multiplies every gradient first
        (used to turn accumulated sums into batch means)."""
        grads = []
        for p in self.params:
            if p.grad is None:
                raise RuntimeError("optimizer step with unpopulated gradient")
            g = p.grad * grad_scale
            if not np.isfinite(g).all():
                raise FloatingPointError("non-finite gradient; step aborted")
            grads.append(g)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v, vhat in zip(self.params, grads, self.m, self.v, self.vhat):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            np.maximum(vhat, v, out=vhat)
            p.data -= self.lr * (m / bc1) / (np.sqrt(vhat / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    seed: int = 0
    crop_policy: str = "random"
    lr: float = 0.001
    weight_decay: float = 1e-4
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only
    pre_emphasis_coeff: float = 0.97

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    accuracy: float


def speaker_index(manifest: CorpusManifest) -> dict:
    """Stable speaker-id -> class-index mapping (sorted order)."""
    return {spk: i for i, spk in enumerate(manifest.speakers)}


def load_corpus(manifest: CorpusManifest):
    """Read every utterance into memory; desk-scale corpora are small."""
    return [(e.utterance_id, e.speaker_id, read_wav(e.path)) for e in manifest.entries]


def train(model: FdnNetwork, manifest: CorpusManifest, config: TrainConfig,
          out_dir=None, log=None):
    """Train the model on a corpus; returns the per-epoch stats list.

    Writes ``train_log.tsv`` (``epoch<TAB>mean_loss<TAB>accuracy`` lines) and
    checkpoints under ``out_dir`` when given. ``log`` is an optional callable
    receiving each stats line as a string.
    """
    labels = speaker_index(manifest)
    if len(labels) != model.config.num_speakers:
        raise ValueError(
            f"corpus has {len(labels)} speakers but the model expects {model.config.num_speakers}"
        )
    data = load_corpus(manifest)
    rng = np.random.default_rng(config.seed)
    optimizer = AmsGrad(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    crop = model.config.crop_samples

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_lines = []
    history = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        losses = []
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            optimizer.zero_grad()
            for k in batch:
                utt_id, spk, wave = data[k]
                clip = crop_or_pad(wave, crop, policy=config.crop_policy, rng=rng)
                clip = pre_emphasis(clip, config.pre_emphasis_coeff)
                x = Tensor(clip.samples[None, :])
                with Tape() as tape:
                    _, logits = model.forward(x, training=True)
                    loss = ad.softmax_cross_entropy(logits, labels[spk])
                    tape.backward(loss)
                losses.append(loss.item())
                if int(np.argmax(logits.data)) == labels[spk]:
                    correct += 1
            optimizer.step(grad_scale=1.0 / len(batch))
        stats = EpochStats(epoch, float(np.mean(losses)), correct / len(data))
        history.append(stats)
        line = f"{stats.epoch}\t{stats.mean_loss:.6g}\t{stats.accuracy:.6g}"
        log_lines.append(line)
        if log is not None:
            log(line)
        if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch:04d}.ckpt", model)

    if out_dir is not None:
        (out_dir / "train_log.tsv").write_text(
            "".join(line + "\n" for line in log_lines), encoding="utf-8")
        save_checkpoint(out_dir / "checkpoint_final.ckpt", model)
    return history
