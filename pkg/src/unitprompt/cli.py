"""Command-line pipeline.

Subcommands map one-to-one onto pipeline stages so runs are resumable
and each stage is testable in isolation:

    features   wav -> ULMF feature files
    quantize   ULMF files -> ULMC codebook
    encode     ULMF files + codebook -> segmented .units files
    synth      synthetic benchmark corpus on disk
    train      manifests -> checkpoint + per-epoch log
    eval       manifest + checkpoint -> metrics files
    gradcheck  finite-difference gradient verification

Every run writes the fully resolved configuration next to its outputs.
Exit codes: 0 success, 1 runtime error, 2 usage/config error.
Heavy imports happen inside commands so --threads can cap BLAS workers
before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, UnitPromptError

ENV_SEED = "UNITPROMPT_SEED"


# -- run configuration ----------------------------------------------------


@dataclass
class FeatureSection:
    window_ms: int = 25
    hop_ms: int = 20
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10


@dataclass
class QuantizerSection:
    k: int = 100
    max_iters: int = 300
    tol: float = 1e-6
    dedup: bool = False


@dataclass
class UlmSection:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ffn: int = 256
    dropout_p: float = 0.1
    max_positions: int = 512


@dataclass
class PromptSection:
    l_disease: int = 8
    l_language: int = 4
    l_class: int = 4
    mode: str = "both"


@dataclass
class TrainSection:
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
    pretrain_epochs: int = 0


@dataclass
class VotingSection:
    rho: float = 0.5
    positive_class: int = 1


@dataclass
class SynthSection:
    n_patients: int = 40
    segments_per_patient: int = 10
    k: int = 32
    segment_units: int = 250
    noise: float = 0.2
    n_classes: int = 2
    chain_alpha: float = 0.5
    split_ratios: tuple = (0.5, 0.25, 0.25)
    disease_id: str = "synth"
    language_id: str = "xx"


@dataclass
class RunConfig:
    seed: int = 0
    segment_units: int = 250
    features: FeatureSection = field(default_factory=FeatureSection)
    quantizer: QuantizerSection = field(default_factory=QuantizerSection)
    ulm: UlmSection = field(default_factory=UlmSection)
    prompts: PromptSection = field(default_factory=PromptSection)
    train: TrainSection = field(default_factory=TrainSection)
    voting: VotingSection = field(default_factory=VotingSection)
    synth: SynthSection = field(default_factory=SynthSection)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synth"]["split_ratios"] = list(d["synth"]["split_ratios"])
        return d


_SECTIONS = {f.name: f for f in fields(RunConfig) if f.name not in ("seed", "segment_units")}


def config_from_dict(data: dict, path: str = "") -> RunConfig:
    """Build a RunConfig, rejecting unknown keys anywhere in the tree."""
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be an object, got {type(data).__name__}")
    cfg = RunConfig()
    for key, value in data.items():
        where = f"{path}{key}"
        if key == "seed":
            cfg.seed = int(value)
        elif key == "segment_units":
            cfg.segment_units = int(value)
        elif key in _SECTIONS:
            section = getattr(cfg, key)
            if not isinstance(value, dict):
                raise ConfigError(f"config section {where!r} must be an object")
            known = {f.name for f in fields(section)}
            for sub, sub_value in value.items():
                if sub not in known:
                    raise ConfigError(f"unknown config key {where + '.' + sub!r}")
                if sub == "split_ratios":
                    sub_value = tuple(sub_value)
                setattr(section, sub, sub_value)
        else:
            raise ConfigError(f"unknown config key {where!r}")
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return config_from_dict(json.load(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def write_config_echo(cfg: RunConfig, out_dir: Path, name: str = "config.json") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / name, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if os.environ.get(ENV_SEED):
        try:
            cfg.seed = int(os.environ[ENV_SEED])
        except ValueError as exc:
            raise ConfigError(f"{ENV_SEED} must be an integer: {os.environ[ENV_SEED]!r}") from exc
    overrides = {
        "k": ("quantizer", "k"),
        "dedup": ("quantizer", "dedup"),
        "max_epochs": ("train", "max_epochs"),
        "batch_size": ("train", "batch_size"),
        "lr": ("train", "lr"),
        "pretrain_epochs": ("train", "pretrain_epochs"),
        "aux_lm_weight": ("train", "aux_lm_weight"),
        "rho": ("voting", "rho"),
        "noise": ("synth", "noise"),
        "n_patients": ("synth", "n_patients"),
        "segments_per_patient": ("synth", "segments_per_patient"),
        "synth_k": ("synth", "k"),
        "prompt_mode": ("prompts", "mode"),
    }
    for attr, (section, name) in overrides.items():
        value = getattr(args, attr, None)
        if value is not None and value is not False:
            setattr(getattr(cfg, section), name, value)
    return cfg


# -- command implementations ------------------------------------------------


def cmd_features(args, cfg: RunConfig) -> int:
    from . import featio

    out_dir = Path(args.out)
    fcfg = featio.FeatureConfig(**asdict(cfg.features))
    write_config_echo(cfg, out_dir)
    for wav in args.wavs:
        audio = featio.load_wav(wav)
        feats = featio.logmel(audio, fcfg)
        target = out_dir / (Path(wav).stem + ".ulmf")
        featio.write_features(feats, target)
        print(f"{wav} -> {target} ({feats.n_frames} x {feats.dim} @ {feats.frame_rate} Hz)")
    return 0


def cmd_quantize(args, cfg: RunConfig) -> int:
    from . import featio, quantizer

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_config_echo(cfg, out.parent, name=out.name + ".config.json")
    mats = [featio.read_features(p) for p in args.features]
    cb = quantizer.kmeans_fit(mats, cfg.quantizer.k, cfg.quantizer.max_iters,
                              cfg.quantizer.tol, cfg.seed)
    quantizer.write_codebook(cb, out)
    print(f"codebook: k={cb.k} D={cb.feature_dim} inertia={cb.inertia:.6g} "
          f"iters={len(cb.inertia_history)} -> {out}")
    return 0


def cmd_encode(args, cfg: RunConfig) -> int:
    from . import datasets, featio, quantizer

    out_dir = Path(args.out)
    write_config_echo(cfg, out_dir)
    cb = quantizer.read_codebook(args.codebook)
    for feat_path in args.features:
        mat = featio.read_features(feat_path)
        full = quantizer.kmeans_assign(mat, cb, patient_id=Path(feat_path).stem)
        segments = datasets.segment_patient(full, cfg.segment_units)
        if cfg.quantizer.dedup:
            segments = [quantizer.dedup_units(s) for s in segments]
        target = out_dir / (Path(feat_path).stem + ".units")
        datasets.write_units_file(target, cb.k, cfg.segment_units, segments)
        print(f"{feat_path} -> {target} ({len(segments)} segments)")
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    from . import datasets

    out_dir = Path(args.out)
    write_config_echo(cfg, out_dir)
    scfg = datasets.SynthConfig(seed=cfg.seed, **asdict(cfg.synth))
    data = datasets.synth_generate(scfg, out_dir)
    sizes = {split: len(ds) for split, ds in data.splits.items()}
    print(f"synthetic corpus at {out_dir}: k={scfg.k} noise={scfg.noise} segments={sizes}")
    return 0


def _load_all_task_data(manifest_paths, cfg: RunConfig, codebook_path=None):
    from . import datasets, quantizer

    cb = quantizer.read_codebook(codebook_path) if codebook_path else None
    all_data = []
    for mpath in manifest_paths:
        entries = datasets.load_manifest(mpath)
        all_data.extend(datasets.load_task_data(
            entries, cfg.segment_units, codebook=cb, dedup=cfg.quantizer.dedup
        ))
    return all_data


def cmd_train(args, cfg: RunConfig) -> int:
    from . import prompts, trainer, ulm, verbalizer

    out_dir = Path(args.out)
    write_config_echo(cfg, out_dir)
    task_data = _load_all_task_data(args.manifests, cfg, codebook_path=args.codebook)
    ks = {td.splits[s].k for td in task_data for s in td.splits}
    if len(ks) != 1:
        raise UnitPromptError(f"manifests disagree on unit vocabulary: {sorted(ks)}")
    vocab_size = ks.pop() + 1

    ucfg = ulm.ULMConfig(vocab_size=vocab_size, **asdict(cfg.ulm))
    params = ulm.init_backbone(ucfg, seed=cfg.seed)
    tasks = [td.task for td in task_data]
    pool = prompts.init_pool(
        tasks, (cfg.prompts.l_disease, cfg.prompts.l_language, cfg.prompts.l_class),
        ucfg, seed=cfg.seed + 1, mode=cfg.prompts.mode,
    )
    verbalizers = {
        t.task_id: verbalizer.init_verbalizer(t, ucfg, seed=cfg.seed + 2 + i)
        for i, t in enumerate(tasks)
    }
    tsec = asdict(cfg.train)
    pretrain_epochs = tsec.pop("pretrain_epochs")
    tcfg = trainer.TrainConfig(seed=cfg.seed, **tsec)

    if pretrain_epochs > 0:
        print(f"pretraining backbone for {pretrain_epochs} epochs")
        trainer.pretrain_backbone(task_data, params, tcfg, pretrain_epochs)

    log_path = out_dir / "epochs.csv"
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("epoch,train_loss,val_loss,lr\n")

        def log_fn(row):
            log.write(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r},{row['lr']!r}\n")
            log.flush()
            print(f"epoch {row['epoch']:>3}  train {row['train_loss']:.4f}  "
                  f"val {row['val_loss']:.4f}  lr {row['lr']:.2e}")

        state, _ = trainer.fit(task_data, params, pool, verbalizers, tcfg, log_fn=log_fn)

    ckpt = out_dir / "checkpoint.upc"
    trainer.save_checkpoint(ckpt, params, pool, verbalizers, state, tasks)
    print(f"stopped after epoch {state.epoch} (best val {state.best_val_loss:.4f}) -> {ckpt}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from . import datasets, inference, trainer

    out_dir = Path(args.out)
    write_config_echo(cfg, out_dir)
    params, pool, verbalizers, _, tasks = trainer.load_checkpoint(args.checkpoint)
    entries = datasets.load_manifest(args.manifest)
    entries = [e for e in entries if e.split == args.split]
    if not entries:
        raise UnitPromptError(f"no entries with split {args.split!r} in {args.manifest}")
    # class sets and their order come from the checkpoint, not from the
    # (filtered) manifest subset
    task_data = datasets.load_task_data(entries, cfg.segment_units,
                                        dedup=cfg.quantizer.dedup, tasks=tasks)
    vcfg = inference.VotingConfig(cfg.voting.rho, cfg.voting.positive_class)
    for td in task_data:
        if args.split not in td.splits:
            continue  # checkpoint task with no entries in this split
        ds = td.splits[args.split]
        seg_report, pat_report = inference.evaluate(ds, params, pool, verbalizers, vcfg)
        base = out_dir / f"metrics_{td.task.task_id.replace(':', '_')}"
        inference.write_reports(base, [seg_report, pat_report])
        print(f"task {td.task.task_id} ({args.split}):")
        print(seg_report.as_text())
        print(pat_report.as_text())
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from . import ulm

    report = ulm.grad_check(epsilon=args.epsilon, tolerance=args.tolerance, seed=cfg.seed)
    print(report.summary())
    if args.out:
        out_dir = Path(args.out)
        write_config_echo(cfg, out_dir)
        with open(out_dir / "gradcheck.json", "w", encoding="utf-8") as fh:
            json.dump({"max_rel_err": report.max_rel_err, "pass": report.passed,
                       "n_checked": report.n_checked, "worst": report.worst_name},
                      fh, indent=2)
            fh.write("\n")
    return 0 if report.passed else 1


# -- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unitprompt",
        description="Discrete-unit speech classification with prompt tuning and voting.",
    )
    parser.add_argument("--config", help="JSON run configuration file")
    parser.add_argument("--seed", type=int, help=f"seed (env {ENV_SEED} overrides)")
    parser.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="compute log-mel ULMF files from wavs")
    p.add_argument("wavs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("quantize", help="fit a k-means codebook over ULMF files")
    p.add_argument("features", nargs="+")
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True, help="output ULMC codebook path")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("encode", help="encode ULMF files into segmented .units files")
    p.add_argument("features", nargs="+")
    p.add_argument("--codebook", required=True)
    p.add_argument("--dedup", action="store_true", default=None,
                   help="collapse adjacent duplicate units per segment")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("synth", help="generate the synthetic benchmark corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-patients", dest="n_patients", type=int)
    p.add_argument("--segments-per-patient", dest="segments_per_patient", type=int)
    p.add_argument("--synth-k", dest="synth_k", type=int)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train prompts + verbalizers on manifests")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--codebook", help="ULMC codebook (needed for ULMF manifests)")
    p.add_argument("--out", required=True)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--prompt-mode", dest="prompt_mode", choices=["input", "deep", "both"])
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--aux-lm-weight", dest="aux_lm_weight", type=float)
    p.add_argument("--dedup", action="store_true", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--rho", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--dedup", action="store_true", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UnitPromptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
