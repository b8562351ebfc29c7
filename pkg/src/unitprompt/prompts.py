"""Trainable prompt pool: disease, language, and class embedding prompts.

Entries are keyed by symbol and shared across tasks that share a symbol.
Composition builds the prefix for one task in the fixed order
disease | language | class_1 | ... | class_C, covering every class of
the task (labels are unknown at inference, so no class is singled out).
Each entry exists in input form (rows prepended to the sequence) and/or
deep form (per-layer key/value rows), depending on the pool mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import PromptError
from .ulm import ULMConfig

MODES = ("input", "deep", "both")


@dataclass(frozen=True)
class TaskSpec:
    disease_id: str
    language_id: str
    class_set: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "class_set", tuple(self.class_set))
        if len(set(self.class_set)) < 2:
            raise PromptError(f"class_set needs >= 2 distinct entries, got {self.class_set}")

    @property
    def task_id(self) -> str:
        return f"{self.disease_id}:{self.language_id}"

    @property
    def n_classes(self) -> int:
        return len(self.class_set)

    def class_index(self, label: str) -> int:
        try:
            return self.class_set.index(label)
        except ValueError:
            raise PromptError(f"label {label!r} not in class_set {self.class_set}") from None


@dataclass
class PromptEntry:
    input_rows: Tensor | None
    deep_k: list[Tensor] = field(default_factory=list)
    deep_v: list[Tensor] = field(default_factory=list)


@dataclass
class PromptPool:
    mode: str
    l_disease: int
    l_language: int
    l_class: int
    n_layers: int
    d_model: int
    disease: dict[str, PromptEntry] = field(default_factory=dict)
    language: dict[str, PromptEntry] = field(default_factory=dict)
    cls: dict[str, PromptEntry] = field(default_factory=dict)

    def prefix_len(self, task: TaskSpec) -> int:
        return self.l_disease + self.l_language + task.n_classes * self.l_class


@dataclass
class PromptApplication:
    """Composed prefix for one task, ready to hand to the forward pass."""

    mode: str
    input_prefix: Tensor | None
    deep_k: list[Tensor] | None
    deep_v: list[Tensor] | None
    prefix_len: int

    def __post_init__(self):
        has_input = self.input_prefix is not None
        has_deep = bool(self.deep_k)
        if self.mode == "input" and has_deep:
            raise PromptError("input-mode application must not carry deep prefixes")
        if self.mode == "deep" and has_input:
            raise PromptError("deep-mode application must not carry an input prefix")


def _entry(rng, length, n_layers, d_model, mode, name, dtype) -> PromptEntry:
    def draw(tag):
        data = rng.normal(0.0, 0.02, size=(length, d_model)).astype(dtype)
        return Tensor(data, name=f"{name}.{tag}")

    input_rows = draw("input") if mode in ("input", "both") else None
    deep_k, deep_v = [], []
    if mode in ("deep", "both"):
        for layer in range(n_layers):
            deep_k.append(draw(f"deep{layer}.k"))
            deep_v.append(draw(f"deep{layer}.v"))
    return PromptEntry(input_rows, deep_k, deep_v)


def init_pool(tasks, lengths, cfg: ULMConfig, seed: int, mode: str = "both",
              dtype=np.float32) -> PromptPool:
    """Build the pool for a task list; entries drawn iid N(0, 0.02^2).

    One entry per distinct disease, language, and class symbol across all
    tasks. Deterministic given the seed (entries are drawn in sorted key
    order).
    """
    if mode not in MODES:
        raise PromptError(f"unknown prompt mode {mode!r}, expected one of {MODES}")
    if not tasks:
        raise PromptError("at least one task is required")
    l_d, l_l, l_c = lengths
    if min(l_d, l_l, l_c) < 0:
        raise PromptError(f"prompt lengths must be >= 0, got {lengths}")
    for task in tasks:
        if len(set(task.class_set)) != len(task.class_set):
            raise PromptError(f"duplicate class symbols within one task: {task.class_set}")

    rng = np.random.default_rng(seed)
    pool = PromptPool(mode, l_d, l_l, l_c, cfg.n_layers, cfg.d_model)
    if l_d:
        for did in sorted({t.disease_id for t in tasks}):
            pool.disease[did] = _entry(rng, l_d, cfg.n_layers, cfg.d_model, mode,
                                       f"pool.disease.{did}", dtype)
    if l_l:
        for lid in sorted({t.language_id for t in tasks}):
            pool.language[lid] = _entry(rng, l_l, cfg.n_layers, cfg.d_model, mode,
                                        f"pool.language.{lid}", dtype)
    if l_c:
        for cid in sorted({c for t in tasks for c in t.class_set}):
            pool.cls[cid] = _entry(rng, l_c, cfg.n_layers, cfg.d_model, mode,
                                   f"pool.class.{cid}", dtype)
    return pool


def _lookup(table: dict, key: str, kind: str) -> PromptEntry:
    if key not in table:
        raise PromptError(f"unknown {kind} id {key!r} (known: {sorted(table)})")
    return table[key]


def compose(task: TaskSpec, pool: PromptPool, mode: str | None = None) -> PromptApplication:
    """Concatenate the task's prompt entries into one prefix.

    Pure function of (task, pool, mode); the concatenation is recorded in
    the autodiff graph so training reaches the pool entries.
    """
    mode = mode or pool.mode
    if mode not in MODES:
        raise PromptError(f"unknown prompt mode {mode!r}, expected one of {MODES}")
    if mode != pool.mode and pool.mode != "both":
        raise PromptError(f"pool was initialized for mode {pool.mode!r}, cannot compose {mode!r}")

    entries: list[PromptEntry] = []
    if pool.l_disease:
        entries.append(_lookup(pool.disease, task.disease_id, "disease"))
    if pool.l_language:
        entries.append(_lookup(pool.language, task.language_id, "language"))
    if pool.l_class:
        for cid in task.class_set:
            entries.append(_lookup(pool.cls, cid, "class"))

    input_prefix = None
    deep_k: list[Tensor] | None = None
    deep_v: list[Tensor] | None = None
    if entries:
        if mode in ("input", "both"):
            input_prefix = ad.concat([e.input_rows for e in entries], axis=0)
        if mode in ("deep", "both"):
            deep_k = [ad.concat([e.deep_k[layer] for e in entries], axis=0)
                      for layer in range(pool.n_layers)]
            deep_v = [ad.concat([e.deep_v[layer] for e in entries], axis=0)
                      for layer in range(pool.n_layers)]
    return PromptApplication(mode, input_prefix, deep_k, deep_v, pool.prefix_len(task))


def trainable_parameters(pool: PromptPool, verbalizers) -> list[tuple[str, Tensor]]:
    """Deterministically ordered trainable tensors: disease entries by id,
    then language, then class, then each verbalizer's weight and bias.
    Backbone tensors never appear here."""
    out: list[tuple[str, Tensor]] = []

    def add_entry(entry: PromptEntry):
        if entry.input_rows is not None:
            out.append((entry.input_rows.name, entry.input_rows))
        for layer in range(len(entry.deep_k)):
            out.append((entry.deep_k[layer].name, entry.deep_k[layer]))
            out.append((entry.deep_v[layer].name, entry.deep_v[layer]))

    for table in (pool.disease, pool.language, pool.cls):
        for key in sorted(table):
            add_entry(table[key])
    for vb in sorted(verbalizers, key=lambda v: v.task_id):
        out.append((f"verbalizer.{vb.task_id}.weight", vb.weight))
        out.append((f"verbalizer.{vb.task_id}.bias", vb.bias))
    return out
