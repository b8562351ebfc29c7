"""Training loop for prompt and verbalizer parameters over a frozen
backbone: cross-entropy task loss, Adam, reduce-on-plateau learning
rate, early stopping, and a self-describing checkpoint container.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datasets import TaskData, check_vocabulary
from .errors import CheckpointError, TrainerError
from .prompts import PromptEntry, PromptPool, TaskSpec, compose, trainable_parameters
from .ulm import ForwardOutput, LayerParams, ULMConfig, ULMParameters, forward_batch
from .verbalizer import Verbalizer, classify

IMPROVE_EPS = 1e-6  # minimum val-loss decrease that counts as improvement

CHECKPOINT_FORMAT = "unitprompt-checkpoint"
CHECKPOINT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-2
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    early_stop_patience: int = 15
    max_epochs: int = 300
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    min_lr: float = 1e-6
    aux_lm_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise TrainerError("lr must be positive")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise TrainerError("patiences must be >= 1")
        if self.max_epochs < 1:
            raise TrainerError("max_epochs must be >= 1")


@dataclass
class TrainState:
    lr: float
    epoch: int = 0
    step: int = 0
    best_val_loss: float = float("inf")
    epochs_since_improvement: int = 0
    plateau_count: int = 0
    stop: bool = False
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def task_loss(class_logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over the batch: -(1/N) sum_i log p(y_i)."""
    labels = np.asarray(labels)
    n_classes = class_logits.shape[-1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise TrainerError(
            f"label out of range: labels in [{labels.min()}, {labels.max()}], C={n_classes}"
        )
    picked = ad.take_along_last(ad.log_softmax(class_logits, axis=-1), labels)
    return ad.mul(picked.mean(), -1.0)


def lm_loss(out: ForwardOutput, tokens: np.ndarray) -> Tensor:
    """Next-unit cross-entropy: position t (BOS first) predicts unit t."""
    tokens = np.asarray(tokens)
    b, t = tokens.shape
    logits = out.next_unit_logits[:, :-1, :]
    vocab = logits.shape[-1]
    flat = logits.reshape((b * t, vocab))
    picked = ad.take_along_last(ad.log_softmax(flat, axis=-1), tokens.reshape(-1))
    return ad.mul(picked.mean(), -1.0)


def adam_step(state: TrainState, named_params, cfg: TrainConfig,
              allow_frozen: bool = False) -> None:
    """One bias-corrected Adam update over the parameter list, applied in
    list order. NaN gradients abort with a diagnostic naming the tensor."""
    state.step += 1
    t = state.step
    for name, tensor in named_params:
        if tensor.frozen and not allow_frozen:
            raise TrainerError(f"attempted update of frozen tensor {name}")
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.all(np.isfinite(grad)):
            raise TrainerError(f"NaN gradient in {name} at step {t}; epoch aborted")
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        tensor.data -= (state.lr * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)).astype(tensor.data.dtype)


def plateau_step(state: TrainState, val_loss: float, cfg: TrainConfig) -> bool:
    """Per-epoch scheduler update; returns whether val_loss improved.

    Improvement means val_loss < best - 1e-6. After plateau_patience
    consecutive non-improving epochs the lr is multiplied by
    plateau_factor (floored at min_lr) and the plateau counter resets;
    after early_stop_patience consecutive non-improving epochs, or at
    max_epochs, the stop flag is raised.
    """
    improved = val_loss < state.best_val_loss - IMPROVE_EPS
    if improved:
        state.best_val_loss = val_loss
        state.epochs_since_improvement = 0
        state.plateau_count = 0
    else:
        state.epochs_since_improvement += 1
        state.plateau_count += 1
        if state.epochs_since_improvement >= cfg.early_stop_patience:
            state.stop = True  # stopping suppresses a coincident lr cut
        elif state.plateau_count >= cfg.plateau_patience:
            state.lr = max(state.lr * cfg.plateau_factor, cfg.min_lr)
            state.plateau_count = 0
    if state.epoch >= cfg.max_epochs:
        state.stop = True
    return improved


def _batches(ds, batch_size: int, rng: np.random.Generator):
    """Seeded shuffled batches; segments are grouped by length so each
    batch stacks into one rectangular array (lengths vary under dedup)."""
    by_len: dict[int, list[int]] = {}
    for i, (seg, _) in enumerate(ds.segments):
        by_len.setdefault(len(seg), []).append(i)
    batches = []
    for length in sorted(by_len):
        idx = np.array(by_len[length])
        idx = idx[rng.permutation(len(idx))]
        for lo in range(0, len(idx), batch_size):
            batches.append(idx[lo:lo + batch_size])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _stack(ds, idx):
    tokens = np.stack([ds.segments[i][0].units for i in idx])
    labels = np.array([ds.segments[i][1] for i in idx])
    return tokens, labels


def _mean_split_loss(ds, params, pool, vb, cfg: TrainConfig, eval_batch: int = 32) -> float:
    """Segment-mean cross-entropy of one split in eval mode. Segments are
    grouped by length so ragged (dedup-enabled) datasets batch cleanly."""
    by_len: dict[int, list[int]] = {}
    for i, (seg, _) in enumerate(ds.segments):
        by_len.setdefault(len(seg), []).append(i)
    total, count = 0.0, 0
    with ad.no_grad():
        app = compose(ds.task, pool)
        for length in sorted(by_len):
            group = by_len[length]
            for lo in range(0, len(group), eval_batch):
                idx = group[lo:lo + eval_batch]
                tokens, labels = _stack(ds, idx)
                out = forward_batch(tokens, params, prompt=app, train_mode=False)
                loss = task_loss(classify(out, vb), labels)
                total += float(loss.data) * len(labels)
                count += len(labels)
    return total / count


def _step_seed(seed: int, epoch: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, step]).generate_state(1)[0])


def fit(task_data: list[TaskData], params: ULMParameters, pool: PromptPool,
        verbalizers: dict[str, Verbalizer], cfg: TrainConfig,
        log_fn=None) -> tuple[TrainState, list[dict]]:
    """Train prompts and verbalizers; the backbone stays frozen.

    Batches are interleaved round-robin across tasks with a seeded
    shuffle. Each epoch ends with the validation loss (mean over tasks)
    driving the plateau scheduler. The best-validation parameters are
    restored into pool/verbalizers before returning.
    """
    for td in task_data:
        for split in ("train", "val"):
            if split not in td.splits or len(td.splits[split]) == 0:
                raise TrainerError(f"task {td.task.task_id}: empty {split} split")
        check_vocabulary(td, params.config.vocab_size)
        if td.task.task_id not in verbalizers:
            raise TrainerError(f"no verbalizer for task {td.task.task_id}")

    trainable = trainable_parameters(pool, list(verbalizers.values()))
    backbone = params.named_tensors()
    state = TrainState(lr=cfg.lr)
    for name, tensor in trainable:
        state.m[name] = np.zeros_like(tensor.data)
        state.v[name] = np.zeros_like(tensor.data)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best_snapshot = {name: tensor.data.copy() for name, tensor in trainable}

    while not state.stop:
        state.epoch += 1
        per_task = [_batches(td.splits["train"], cfg.batch_size, rng) for td in task_data]
        interleaved = []
        for round_i in range(max(len(b) for b in per_task)):
            for ti, batches in enumerate(per_task):
                if round_i < len(batches):
                    interleaved.append((ti, batches[round_i]))

        epoch_loss, n_batches = 0.0, 0
        for ti, idx in interleaved:
            td = task_data[ti]
            ds = td.splits["train"]
            tokens, labels = _stack(ds, idx)
            app = compose(td.task, pool)
            out = forward_batch(tokens, params, prompt=app, train_mode=True,
                                seed=_step_seed(cfg.seed, state.epoch, state.step))
            loss = task_loss(classify(out, verbalizers[td.task.task_id]), labels)
            if cfg.aux_lm_weight > 0:
                loss = ad.add(loss, ad.mul(lm_loss(out, tokens), cfg.aux_lm_weight))
            for _, tensor in trainable:
                tensor.zero_grad()
            for _, tensor in backbone:
                tensor.zero_grad()
            loss.backward()
            adam_step(state, trainable, cfg)
            epoch_loss += float(loss.data)
            n_batches += 1

        val_loss = float(np.mean([
            _mean_split_loss(td.splits["val"], params, pool,
                             verbalizers[td.task.task_id], cfg)
            for td in task_data
        ]))
        train_loss = epoch_loss / n_batches
        improved = plateau_step(state, val_loss, cfg)
        if improved:
            best_snapshot = {name: tensor.data.copy() for name, tensor in trainable}
        row = {"epoch": state.epoch, "train_loss": train_loss,
               "val_loss": val_loss, "lr": state.lr}
        history.append(row)
        if log_fn is not None:
            log_fn(row)

    for name, tensor in trainable:
        tensor.data = best_snapshot[name].copy()
    return state, history


def pretrain_backbone(task_data: list[TaskData], params: ULMParameters,
                      cfg: TrainConfig, epochs: int, log_fn=None) -> list[dict]:
    """Optional next-unit pre-training of the backbone itself (no prompts,
    no verbalizer). Not required by the prompt-tuning path."""
    backbone = params.named_tensors()
    state = TrainState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    for epoch in range(1, epochs + 1):
        epoch_loss, n_batches = 0.0, 0
        for td in task_data:
            ds = td.splits["train"]
            for idx in _batches(ds, cfg.batch_size, rng):
                tokens, _ = _stack(ds, idx)
                out = forward_batch(tokens, params, train_mode=True,
                                    seed=_step_seed(cfg.seed + 1, epoch, state.step))
                loss = lm_loss(out, tokens)
                for _, tensor in backbone:
                    tensor.zero_grad()
                loss.backward()
                adam_step(state, backbone, cfg, allow_frozen=True)
                epoch_loss += float(loss.data)
                n_batches += 1
        row = {"epoch": epoch, "lm_loss": epoch_loss / n_batches}
        history.append(row)
        if log_fn is not None:
            log_fn(row)
    return history


# -- checkpoint container --------------------------------------------------


def _pool_tensor_names(pool: PromptPool) -> list[tuple[str, Tensor]]:
    named = []
    for kind, table in (("disease", pool.disease), ("language", pool.language),
                        ("class", pool.cls)):
        for key in sorted(table):
            entry = table[key]
            base = f"pool.{kind}.{key}"
            if entry.input_rows is not None:
                named.append((f"{base}.input", entry.input_rows))
            for layer in range(len(entry.deep_k)):
                named.append((f"{base}.deep{layer}.k", entry.deep_k[layer]))
                named.append((f"{base}.deep{layer}.v", entry.deep_v[layer]))
    return named


def save_checkpoint(path, params: ULMParameters, pool: PromptPool,
                    verbalizers: dict[str, Verbalizer], state: TrainState,
                    tasks: list[TaskSpec]) -> None:
    """Single-file container: one JSON header line, then raw little-endian
    tensor payloads at the offsets the header declares."""
    named = list(params.named_tensors()) + _pool_tensor_names(pool)
    for tid in sorted(verbalizers):
        vb = verbalizers[tid]
        named.append((f"verbalizer.{tid}.weight", vb.weight))
        named.append((f"verbalizer.{tid}.bias", vb.bias))
    moments = []
    for mname, table in (("m", state.m), ("v", state.v)):
        for key in sorted(table):
            moments.append((f"adam.{mname}.{key}", table[key]))

    specs, blobs, offset = [], [], 0
    for name, obj in named + moments:
        arr = obj.data if isinstance(obj, Tensor) else obj
        dtype_name = str(arr.dtype)
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype_name} for {name}")
        blob = np.ascontiguousarray(arr).astype(_DTYPES[dtype_name]).tobytes()
        specs.append({"name": name, "dtype": dtype_name, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)

    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "ulm_config": asdict(params.config),
        "pool": {
            "mode": pool.mode, "l_disease": pool.l_disease, "l_language": pool.l_language,
            "l_class": pool.l_class, "n_layers": pool.n_layers, "d_model": pool.d_model,
            "disease_ids": sorted(pool.disease), "language_ids": sorted(pool.language),
            "class_ids": sorted(pool.cls),
        },
        "tasks": [{"disease": t.disease_id, "language": t.language_id,
                   "classes": list(t.class_set)} for t in tasks],
        "state": {"lr": state.lr, "epoch": state.epoch, "step": state.step,
                  "best_val_loss": state.best_val_loss,
                  "epochs_since_improvement": state.epochs_since_improvement,
                  "plateau_count": state.plateau_count, "stop": state.stop},
        "tensors": specs,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def _read_tensor(spec, payload, name_for_error):
    end = spec["offset"] + spec["nbytes"]
    if end > len(payload):
        raise CheckpointError(
            f"truncated payload: tensor {name_for_error} needs bytes up to {end}, "
            f"payload has {len(payload)}"
        )
    arr = np.frombuffer(payload[spec["offset"]:end], dtype=_DTYPES[spec["dtype"]])
    return arr.astype(spec["dtype"]).reshape(spec["shape"])


def load_checkpoint(path):
    """Inverse of save_checkpoint.

    Returns (params, pool, verbalizers, state, tasks); every tensor is
    validated against the shape its config implies.
    """
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"bad format tag {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"version mismatch: file={header.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    by_name = {spec["name"]: spec for spec in header["tensors"]}

    def fetch(name, shape=None, frozen=False):
        if name not in by_name:
            raise CheckpointError(f"missing tensor {name}")
        arr = _read_tensor(by_name[name], payload, name)
        if shape is not None and tuple(arr.shape) != tuple(shape):
            raise CheckpointError(
                f"shape mismatch for {name}: file {arr.shape}, expected {tuple(shape)}"
            )
        return Tensor(arr.copy(), name=name, frozen=frozen)

    cfg = ULMConfig(**header["ulm_config"])
    d, f, vsz = cfg.d_model, cfg.d_ffn, cfg.vocab_size
    layers = []
    for i in range(cfg.n_layers):
        p = f"ulm.layer{i}."
        shapes = {"ln1_g": (d,), "ln1_b": (d,), "wq": (d, d), "bq": (d,),
                  "wk": (d, d), "bk": (d,), "wv": (d, d), "bv": (d,),
                  "wo": (d, d), "bo": (d,), "ln2_g": (d,), "ln2_b": (d,),
                  "w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,)}
        layers.append(LayerParams(**{
            fname: fetch(p + fname, shape, frozen=True) for fname, shape in shapes.items()
        }))
    params = ULMParameters(
        cfg,
        fetch("ulm.tok_emb", (vsz, d), frozen=True),
        fetch("ulm.pos_emb", (cfg.max_positions, d), frozen=True),
        layers,
        fetch("ulm.lnf_g", (d,), frozen=True),
        fetch("ulm.lnf_b", (d,), frozen=True),
        fetch("ulm.w_lm", (d, vsz), frozen=True),
        fetch("ulm.b_lm", (vsz,), frozen=True),
    )

    pmeta = header["pool"]
    pool = PromptPool(pmeta["mode"], pmeta["l_disease"], pmeta["l_language"],
                      pmeta["l_class"], pmeta["n_layers"], pmeta["d_model"])

    def load_entry(kind, key, length):
        base = f"pool.{kind}.{key}"
        input_rows = None
        if pmeta["mode"] in ("input", "both"):
            input_rows = fetch(f"{base}.input", (length, pmeta["d_model"]))
        deep_k, deep_v = [], []
        if pmeta["mode"] in ("deep", "both"):
            for layer in range(pmeta["n_layers"]):
                deep_k.append(fetch(f"{base}.deep{layer}.k", (length, pmeta["d_model"])))
                deep_v.append(fetch(f"{base}.deep{layer}.v", (length, pmeta["d_model"])))
        return PromptEntry(input_rows, deep_k, deep_v)

    for key in pmeta["disease_ids"]:
        pool.disease[key] = load_entry("disease", key, pmeta["l_disease"])
    for key in pmeta["language_ids"]:
        pool.language[key] = load_entry("language", key, pmeta["l_language"])
    for key in pmeta["class_ids"]:
        pool.cls[key] = load_entry("class", key, pmeta["l_class"])

    tasks = [TaskSpec(t["disease"], t["language"], tuple(t["classes"]))
             for t in header["tasks"]]
    verbalizers = {}
    for task in tasks:
        tid = task.task_id
        verbalizers[tid] = Verbalizer(
            fetch(f"verbalizer.{tid}.weight", (task.n_classes, vsz)),
            fetch(f"verbalizer.{tid}.bias", (task.n_classes,)),
            tid,
        )

    smeta = header["state"]
    state = TrainState(lr=smeta["lr"], epoch=smeta["epoch"], step=smeta["step"],
                       best_val_loss=smeta["best_val_loss"],
                       epochs_since_improvement=smeta["epochs_since_improvement"],
                       plateau_count=smeta["plateau_count"], stop=smeta["stop"])
    for spec in header["tensors"]:
        name = spec["name"]
        if name.startswith("adam.m."):
            state.m[name[len("adam.m."):]] = np.asarray(_read_tensor(spec, payload, name))
        elif name.startswith("adam.v."):
            state.v[name[len("adam.v."):]] = np.asarray(_read_tensor(spec, payload, name))
    return params, pool, verbalizers, state, tasks
