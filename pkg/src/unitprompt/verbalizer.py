"""Learned verbalizer: fully connected map from next-unit logits to task
class logits, read at the last real position of the sequence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ModelError
from .prompts import TaskSpec
from .ulm import ForwardOutput, ULMConfig


@dataclass
class Verbalizer:
    weight: Tensor  # (n_classes, vocab_size)
    bias: Tensor  # (n_classes,)
    task_id: str

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]


def init_verbalizer(task: TaskSpec, cfg: ULMConfig, seed: int,
                    dtype=np.float32) -> Verbalizer:
    rng = np.random.default_rng(seed)
    weight = Tensor(rng.normal(0.0, 0.02, size=(task.n_classes, cfg.vocab_size)).astype(dtype),
                    name=f"verbalizer.{task.task_id}.weight")
    bias = Tensor(np.zeros(task.n_classes, dtype=dtype),
                  name=f"verbalizer.{task.task_id}.bias")
    return Verbalizer(weight, bias, task.task_id)


def classify(out: ForwardOutput, vb: Verbalizer) -> Tensor:
    """Class logits = weight @ next_unit_logits[last real position] + bias.

    Works on batched (B, T+1, V) and unbatched (T+1, V) forward outputs.
    """
    logits = out.next_unit_logits
    if logits.shape[-1] != vb.weight.shape[1]:
        raise ModelError(
            f"dimension mismatch: logits V={logits.shape[-1]}, verbalizer V={vb.weight.shape[1]}"
        )
    if logits.shape[-2] < 1:
        raise ModelError("forward output has no real positions")
    if logits.data.ndim == 3:
        last = logits[:, -1, :]
        return ad.add(ad.matmul(last, ad.swapaxes(vb.weight, 0, 1)), vb.bias)
    last = logits[-1:, :]  # keep 2-d so matmul gradients stay well-shaped
    return ad.add(ad.matmul(last, ad.swapaxes(vb.weight, 0, 1)), vb.bias)[0]


def predict_class(class_logits) -> tuple[int, np.ndarray]:
    """Softmax probabilities and the argmax class (lowest index on ties)."""
    x = class_logits.data if isinstance(class_logits, Tensor) else np.asarray(class_logits, dtype=np.float64)
    if x.ndim != 1:
        raise ModelError(f"predict_class expects one logits vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ModelError("class logits must be finite")
    e = np.exp(x - x.max())
    probs = e / e.sum()
    return int(np.argmax(x)), probs
