"""Manifests, fixed-length segmentation, patient-level splits, and the
synthetic benchmark corpus.

Recordings carry one patient-level label; training consumes 5-second
segments that inherit it. Splitting is always by patient so no patient
contributes segments to more than one split. The synthetic generator
replaces the (private) clinical corpora: each class gets its own
first-order Markov chain over units, a shared background chain injects
label-free segments with probability `noise`, and everything is
deterministic given the seed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ManifestError, TrainerError, UnitFileError
from .prompts import TaskSpec
from .quantizer import Codebook, UnitSequence, dedup_units, kmeans_assign

MANIFEST_FIELDS = ("patient_id", "path", "label", "disease", "language", "split")
SPLITS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    patient_id: str
    path: Path
    label: str
    disease: str
    language: str
    split: str


@dataclass
class SegmentedDataset:
    """Segments of one task in one split, indexed by patient."""

    task: TaskSpec
    k: int
    segment_units: int
    segments: list = field(default_factory=list)  # (UnitSequence, label_index)
    patient_index: dict = field(default_factory=dict)  # patient_id -> [segment pos]

    def add(self, units: UnitSequence, label_index: int) -> None:
        self.patient_index.setdefault(units.patient_id, []).append(len(self.segments))
        self.segments.append((units, label_index))

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def n_patients(self) -> int:
        return len(self.patient_index)


@dataclass
class TaskData:
    task: TaskSpec
    splits: dict  # split name -> SegmentedDataset
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 40  # per class
    segments_per_patient: int = 10
    k: int = 32
    segment_units: int = 250
    noise: float = 0.2  # per-segment probability of the background chain
    seed: int = 0
    n_classes: int = 2
    chain_alpha: float = 0.5  # Dirichlet concentration of transition rows
    split_ratios: tuple = (0.5, 0.25, 0.25)
    disease_id: str = "synth"
    language_id: str = "xx"

    def __post_init__(self):
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"noise must be in [0, 1], got {self.noise}")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")

    @property
    def class_symbols(self) -> tuple[str, ...]:
        if self.n_classes == 2:
            return ("neg", "pos")
        return tuple(f"c{i}" for i in range(self.n_classes))


# -- manifest ------------------------------------------------------------


def load_manifest(path) -> list[ManifestEntry]:
    """Parse a JSONL manifest with exactly the fields
    patient_id, path, label, disease, language, split.

    Paths are resolved relative to the manifest's directory and must
    exist. Duplicate (patient_id, path) pairs are rejected.
    """
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid record: {exc}") from exc
            if not isinstance(record, dict):
                raise ManifestError(f"line {lineno}: record must be an object")
            for name in MANIFEST_FIELDS:
                if name not in record:
                    raise ManifestError(f"line {lineno}: missing field {name!r}")
            for name in record:
                if name not in MANIFEST_FIELDS:
                    raise ManifestError(f"line {lineno}: unknown field {name!r}")
            if record["split"] not in SPLITS:
                raise ManifestError(
                    f"line {lineno}: unknown split token {record['split']!r}, expected one of {SPLITS}"
                )
            resolved = (base / record["path"]).resolve()
            if not resolved.exists():
                raise ManifestError(f"line {lineno}: referenced file not found: {record['path']}")
            key = (record["patient_id"], str(resolved))
            if key in seen:
                raise ManifestError(f"line {lineno}: duplicate (patient_id, path) {key}")
            seen.add(key)
            entries.append(ManifestEntry(
                patient_id=record["patient_id"], path=resolved, label=record["label"],
                disease=record["disease"], language=record["language"], split=record["split"],
            ))
    return entries


def tasks_from_entries(entries) -> list[TaskSpec]:
    """One task per (disease, language) pair; class order follows first
    appearance in the manifest (the canonical class order)."""
    ordered: dict[tuple, list[str]] = {}
    for e in entries:
        classes = ordered.setdefault((e.disease, e.language), [])
        if e.label not in classes:
            classes.append(e.label)
    return [TaskSpec(d, lang, tuple(classes)) for (d, lang), classes in ordered.items()]


# -- segmentation and splits ----------------------------------------------


def segment_patient(units: UnitSequence, segment_units: int) -> list[UnitSequence]:
    """Cut one full recording into consecutive fixed-length segments.

    The trailing remainder shorter than segment_units is dropped; a
    recording shorter than one segment yields an empty list (warned).
    """
    if segment_units < 1:
        raise ValueError("segment_units must be >= 1")
    n = len(units) // segment_units
    if n == 0:
        warnings.warn(
            f"recording {units.patient_id!r} has {len(units)} units, "
            f"shorter than one segment ({segment_units}); dropped"
        )
        return []
    return [
        UnitSequence(units.units[i * segment_units:(i + 1) * segment_units],
                     patient_id=units.patient_id, segment_index=i)
        for i in range(n)
    ]


def split_patient_ids(patient_ids, ratios, seed: int) -> dict[str, str]:
    """Shuffle patients and partition them by the given ratios."""
    ids = list(dict.fromkeys(patient_ids))
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if len(ids) < len(ratios):
        raise ValueError(f"fewer patients ({len(ids)}) than splits ({len(ratios)})")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    counts = [int(len(ids) * r) for r in ratios]
    for i in range(len(ids) - sum(counts)):  # distribute the remainder
        counts[i % len(counts)] += 1
    assignment = {}
    pos = 0
    for split, count in zip(SPLITS, counts):
        for pid in order[pos:pos + count]:
            assignment[pid] = split
        pos += count
    return assignment


def split_by_patient(entries, ratios, seed: int) -> dict[str, str]:
    """Patient-level split assignment for manifest entries: all segments
    of one patient land in the same split (no leakage)."""
    return split_patient_ids([e.patient_id for e in entries], ratios, seed)


# -- unit files ------------------------------------------------------------


def write_units_file(path, k: int, segment_units: int, segments) -> None:
    """One segment per line, space-separated ints, after a header
    `#k=<K> seg=<len>`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#k={k} seg={segment_units}\n")
        for seg in segments:
            units = seg.units if isinstance(seg, UnitSequence) else np.asarray(seg)
            fh.write(" ".join(str(int(u)) for u in units) + "\n")


def read_units_file(path, patient_id: str = "") -> tuple[int, int, list[UnitSequence]]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 2 or not parts[0].startswith("#k=") or not parts[1].startswith("seg="):
            raise UnitFileError(f"{path}: bad header {header!r}, expected '#k=<K> seg=<len>'")
        try:
            k = int(parts[0][3:])
            segment_units = int(parts[1][4:])
        except ValueError as exc:
            raise UnitFileError(f"{path}: bad header numbers: {exc}") from exc
        segments = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                units = np.array([int(u) for u in line.split()], dtype=np.int32)
            except ValueError as exc:
                raise UnitFileError(f"{path}: line {lineno}: non-integer unit: {exc}") from exc
            if units.size and units.max() >= k:
                raise UnitFileError(
                    f"{path}: line {lineno}: unit {int(units.max())} out of range for k={k}"
                )
            segments.append(UnitSequence(units, patient_id=patient_id,
                                         segment_index=len(segments)))
    return k, segment_units, segments


# -- assembling datasets -----------------------------------------------


def load_task_data(entries, segment_units: int = 250, codebook: Codebook | None = None,
                   dedup: bool = False, tasks: list[TaskSpec] | None = None) -> list[TaskData]:
    """Build per-task, per-split segment datasets from manifest entries.

    `.units` files are taken as pre-segmented lines; ULMF feature files
    are quantized with the codebook and then segmented. When `tasks` is
    given (e.g. from a checkpoint) the class sets and their order come
    from there; deriving them from a filtered manifest subset would
    reorder or drop classes.
    """
    from .featio import read_features  # local import keeps module load light

    if tasks is None:
        tasks = tasks_from_entries(entries)
    by_task = {t.task_id: TaskData(t, {}) for t in tasks}
    k_seen: set[int] = set()
    for e in entries:
        task_id = f"{e.disease}:{e.language}"
        if task_id not in by_task:
            raise ManifestError(
                f"entry for patient {e.patient_id!r} names unknown task {task_id!r} "
                f"(known: {sorted(by_task)})"
            )
        task = by_task[task_id].task
        label_index = task.class_index(e.label)
        if str(e.path).endswith(".units"):
            k, _, segments = read_units_file(e.path, patient_id=e.patient_id)
            k_seen.add(k)
        else:
            if codebook is None:
                raise ManifestError(
                    f"{e.path} is a feature file but no codebook was provided"
                )
            full = kmeans_assign(read_features(e.path), codebook, patient_id=e.patient_id)
            segments = segment_patient(full, segment_units)
            k_seen.add(codebook.k)
        if dedup:
            segments = [dedup_units(s) for s in segments]
        splits = by_task[task.task_id].splits
        if e.split not in splits:
            splits[e.split] = SegmentedDataset(task, max(k_seen), segment_units)
        for seg in segments:
            splits[e.split].add(seg, label_index)
    if len(k_seen) > 1:
        raise ManifestError(f"inconsistent unit vocabularies across files: {sorted(k_seen)}")
    return list(by_task.values())


# -- synthetic corpus ------------------------------------------------------


def synth_generate(cfg: SynthConfig, out_dir=None) -> TaskData:
    """Generate the synthetic benchmark; optionally persist it.

    Each class has a fixed random Markov transition matrix (rows are
    Dirichlet(chain_alpha) draws); a shared background matrix supplies
    label-free noise segments with probability cfg.noise. Patient splits
    are stratified per class. With out_dir set, unit files plus a
    manifest land on disk, byte-identical across runs with one seed.
    """
    rng = np.random.default_rng(cfg.seed)
    alpha = np.full(cfg.k, cfg.chain_alpha)
    chains = [rng.dirichlet(alpha, size=cfg.k) for _ in range(cfg.n_classes)]
    background = rng.dirichlet(alpha, size=cfg.k)
    start = np.full(cfg.k, 1.0 / cfg.k)

    task = TaskSpec(cfg.disease_id, cfg.language_id, cfg.class_symbols)
    data = TaskData(task, {
        split: SegmentedDataset(task, cfg.k, cfg.segment_units) for split in SPLITS
    })

    patients = []  # (patient_id, class_index, [segments])
    n_background = 0
    for ci, symbol in enumerate(cfg.class_symbols):
        for pi in range(cfg.n_patients):
            pid = f"{symbol}{pi:03d}"
            segments = []
            for si in range(cfg.segments_per_patient):
                use_background = rng.random() < cfg.noise
                n_background += use_background
                chain = background if use_background else chains[ci]
                uniforms = rng.random(cfg.segment_units)
                units = kernels.markov_walk(chain, start, uniforms)
                segments.append(UnitSequence(units, patient_id=pid, segment_index=si))
            patients.append((pid, ci, segments))
    data.meta = {
        "background_segments": int(n_background),
        "total_segments": cfg.n_classes * cfg.n_patients * cfg.segments_per_patient,
    }

    assignment = {}
    for ci in range(cfg.n_classes):  # stratified so split class balance holds
        ids = [pid for pid, c, _ in patients if c == ci]
        assignment.update(split_patient_ids(ids, cfg.split_ratios, cfg.seed + 7919 * (ci + 1)))

    for pid, ci, segments in patients:
        ds = data.splits[assignment[pid]]
        for seg in segments:
            ds.add(seg, ci)

    if out_dir is not None:
        out_dir = Path(out_dir)
        units_dir = out_dir / "units"
        units_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as mh:
            for pid, ci, segments in patients:
                rel = f"units/{pid}.units"
                write_units_file(units_dir / f"{pid}.units", cfg.k, cfg.segment_units, segments)
                mh.write(json.dumps({
                    "patient_id": pid, "path": rel, "label": cfg.class_symbols[ci],
                    "disease": cfg.disease_id, "language": cfg.language_id,
                    "split": assignment[pid],
                }) + "\n")
    return data


def check_vocabulary(data: TaskData, vocab_size: int) -> None:
    """The model vocabulary must be the unit vocabulary plus BOS."""
    for split, ds in data.splits.items():
        if ds.k + 1 != vocab_size:
            raise TrainerError(
                f"vocabulary mismatch: dataset k={ds.k} needs vocab_size={ds.k + 1}, "
                f"model has {vocab_size}"
            )
