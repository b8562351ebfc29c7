"""Acceptance criteria, one test per criterion.

Heavy criteria (4, 5) train the desk-scale model on the synthetic corpus
with the published optimizer settings (lr 5e-2, plateau x0.1 after 5
flat epochs, early stop after 15, max 300 epochs); expect roughly ten
minutes each on one CPU core. Each criterion prints a PASS/FAIL line,
visible even without pytest -s.
"""

import itertools
import json
import subprocess
import time
import wave
from pathlib import Path

import numpy as np
import pytest

from unitprompt import cli, datasets, featio, inference, prompts, quantizer, trainer, ulm, verbalizer
from unitprompt.inference import VotingConfig

REPO_ROOT = Path(__file__).resolve().parent.parent


def report(number, name, ok, detail=""):
    line = f"ACCEPTANCE {number:>2} [{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


def desk_setup(noise, seed=0):
    """Criterion-4 configuration: 2 classes, k=32, 40 patients/class x 10
    segments x 250 units, desk backbone, default prompt lengths."""
    scfg = datasets.SynthConfig(n_patients=40, segments_per_patient=10, k=32,
                                segment_units=250, noise=noise, seed=seed)
    data = datasets.synth_generate(scfg)
    ucfg = ulm.ULMConfig(vocab_size=33)
    params = ulm.init_backbone(ucfg, seed=seed)
    pool = prompts.init_pool([data.task], (8, 4, 4), ucfg, seed=seed + 1)
    vbs = {data.task.task_id: verbalizer.init_verbalizer(data.task, ucfg, seed=seed + 2)}
    return data, params, pool, vbs


def test_criterion_1_gradient_correctness():
    start = time.time()
    cfg = ulm.ULMConfig(n_layers=2, n_heads=4, d_model=16, d_ffn=32, dropout_p=0.0,
                        vocab_size=13, max_positions=64)
    rep = ulm.grad_check(cfg, epsilon=1e-5, tolerance=1e-4, seed=0)
    elapsed = time.time() - start
    report(1, "gradient correctness vs central differences",
           rep.passed and rep.max_rel_err <= 1e-4 and elapsed < 60,
           f"max_rel_err={rep.max_rel_err:.2e}, {elapsed:.1f}s")


def test_criterion_2_freeze_invariant():
    start = time.time()
    scfg = datasets.SynthConfig(n_patients=6, segments_per_patient=4, k=8,
                                segment_units=50, noise=0.1, seed=3)
    data = datasets.synth_generate(scfg)
    ucfg = ulm.ULMConfig(n_layers=2, n_heads=4, d_model=32, d_ffn=64,
                         vocab_size=9, max_positions=128)
    params = ulm.init_backbone(ucfg, seed=3)
    pool = prompts.init_pool([data.task], (4, 2, 2), ucfg, seed=4)
    vbs = {data.task.task_id: verbalizer.init_verbalizer(data.task, ucfg, seed=5)}

    backbone_before = {n: t.data.copy() for n, t in params.named_tensors()}
    trainable = prompts.trainable_parameters(pool, list(vbs.values()))
    trainable_before = {n: t.data.copy() for n, t in trainable}

    # 12 train segments at batch 8 -> 2 steps/epoch; 25 epochs >= 50 steps
    tcfg = trainer.TrainConfig(max_epochs=25, batch_size=8, seed=3,
                               early_stop_patience=100)
    state, _ = trainer.fit([data], params, pool, vbs, tcfg)

    frozen_ok = all(np.array_equal(t.data, backbone_before[n])
                    for n, t in params.named_tensors())
    moved_ok = all(not np.array_equal(t.data, trainable_before[n])
                   for n, t in trainable)
    elapsed = time.time() - start
    report(2, "freeze invariant after 50 training steps",
           state.step >= 50 and frozen_ok and moved_ok and elapsed < 60,
           f"steps={state.step}, {elapsed:.1f}s")


def test_criterion_3_empty_prompt_equivalence():
    params = ulm.init_backbone(ulm.ULMConfig(vocab_size=33), seed=0)
    task = prompts.TaskSpec("synth", "xx", ("neg", "pos"))
    rng = np.random.default_rng(0)
    tokens = rng.integers(0, 32, size=(4, 250))
    plain = ulm.forward_batch(tokens, params).next_unit_logits.data
    ok = True
    for mode in ("input", "deep", "both"):
        pool = prompts.init_pool([task], (0, 0, 0), ulm.ULMConfig(vocab_size=33),
                                 seed=1, mode=mode)
        app = prompts.compose(task, pool, mode)
        out = ulm.forward_batch(tokens, params, prompt=app).next_unit_logits.data
        ok = ok and np.array_equal(out, plain)
    report(3, "empty-prompt equivalence in all modes (exact)", ok)


@pytest.fixture(scope="module")
def criterion4_run():
    start = time.time()
    data, params, pool, vbs = desk_setup(noise=0.2)
    state, _ = trainer.fit([data], params, pool, vbs, trainer.TrainConfig(seed=0))
    elapsed = time.time() - start
    seg, pat = inference.evaluate(data.splits["test"], params, pool, vbs,
                                  VotingConfig(rho=0.5))
    return {"elapsed": elapsed, "epochs": state.epoch, "segment": seg, "patient": pat}


def test_criterion_4_synthetic_learnability(criterion4_run):
    run = criterion4_run
    ok = run["patient"].accuracy >= 0.90 and run["elapsed"] <= 15 * 60
    report(4, "synthetic learnability, patient accuracy >= 0.90",
           ok, f"patient={run['patient'].accuracy:.3f}, "
               f"segment={run['segment'].accuracy:.3f}, "
               f"epochs={run['epochs']}, {run['elapsed'] / 60:.1f}min")


def test_criterion_5_voting_uplift():
    data, params, pool, vbs = desk_setup(noise=0.35)
    state, _ = trainer.fit([data], params, pool, vbs, trainer.TrainConfig(seed=0))
    seg, pat = inference.evaluate(data.splits["test"], params, pool, vbs,
                                  VotingConfig(rho=0.5))
    uplift = pat.accuracy - seg.accuracy
    report(5, "voting uplift at noise 0.35 (patient - segment >= 0.05)",
           uplift >= 0.05,
           f"segment={seg.accuracy:.3f}, patient={pat.accuracy:.3f}, uplift={uplift:.3f}")


def test_criterion_6_table_fixtures():
    fixtures = [
        # (tp, fp, tn, fn) chosen to realize the published (P, R) pairs
        ((324, 108, 100, 76), 0.75, 0.81, 0.78),
        ((70, 30, 50, 30), 0.70, 0.70, 0.70),
        ((36, 39, 10, 4), 0.48, 0.90, 0.63),
    ]
    ok = True
    for (tp, fp, tn, fn), p, r, f1 in fixtures:
        pred = [1] * tp + [1] * fp + [0] * tn + [0] * fn
        true = [1] * tp + [0] * fp + [0] * tn + [1] * fn
        rep = inference.metrics(pred, true, positive_class=1)
        ok = ok and abs(rep.precision - p) < 1e-9 and abs(rep.recall - r) < 1e-9
        ok = ok and abs(rep.f1 - f1) <= 0.005
    report(6, "confusion-matrix F1 fixtures (0.78 / 0.70 / 0.63)", ok)


def test_criterion_7_voting_oracle():
    ok = True
    for n in range(1, 13):
        for bits in itertools.product((0, 1), repeat=n):
            votes = [inference.SegmentPrediction("p", i, b, np.array([1.0 - b, float(b)]))
                     for i, b in enumerate(bits)]
            positives = sum(bits)
            for rho in (0.0, 0.25, 0.5, 0.75, 1.0):
                got = inference.vote(votes, VotingConfig(rho=rho))
                ok = ok and got == (1 if positives > rho * n else 0)
                if rho == 1.0:
                    ok = ok and got == 0
    report(7, "voting equals brute-force counting for all n <= 12", ok)


def test_criterion_8_kmeans_recovery():
    rng = np.random.default_rng(0)
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    points = np.concatenate([
        c + rng.normal(0, 0.05, size=(100, 2)) for c in centers
    ])
    truth = np.repeat(np.arange(3), 100)
    cb = quantizer.kmeans_fit(featio.FeatureMatrix(points, 50.0), k=3, seed=0)
    units = quantizer.kmeans_assign(featio.FeatureMatrix(points, 50.0), cb)
    mapping = {}
    for blob in range(3):
        values, counts = np.unique(units.units[truth == blob], return_counts=True)
        mapping[blob] = values[counts.argmax()]
    agreement = np.mean([mapping[t] == u for t, u in zip(truth, units.units)])
    monotone = np.all(np.diff(cb.inertia_history) <= 0.0)
    report(8, "k-means blob recovery and inertia monotonicity",
           agreement >= 0.99 and bool(monotone) and len(set(mapping.values())) == 3,
           f"agreement={agreement:.4f}, iters={len(cb.inertia_history)}")


def test_criterion_9_end_to_end_determinism(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "seed": 21,
        "segment_units": 50,
        "synth": {"n_patients": 6, "segments_per_patient": 4, "k": 12,
                  "segment_units": 50, "noise": 0.2},
        "ulm": {"n_layers": 2, "n_heads": 2, "d_model": 16, "d_ffn": 32,
                "max_positions": 128},
        "prompts": {"l_disease": 2, "l_language": 1, "l_class": 1},
        "train": {"max_epochs": 5, "batch_size": 8},
    }))
    outputs = []
    for tag in ("one", "two"):
        corpus = tmp_path / tag / "corpus"
        rundir = tmp_path / tag / "run"
        evaldir = tmp_path / tag / "eval"
        assert cli.main(["--config", str(cfg_path), "synth", "--out", str(corpus)]) == 0
        assert cli.main(["--config", str(cfg_path), "train",
                         str(corpus / "manifest.jsonl"), "--out", str(rundir)]) == 0
        assert cli.main(["--config", str(cfg_path), "eval",
                         "--manifest", str(corpus / "manifest.jsonl"),
                         "--checkpoint", str(rundir / "checkpoint.upc"),
                         "--split", "test", "--out", str(evaldir)]) == 0
        outputs.append({
            "checkpoint": (rundir / "checkpoint.upc").read_bytes(),
            "metrics_csv": (evaldir / "metrics_synth_xx.csv").read_bytes(),
            "metrics_txt": (evaldir / "metrics_synth_xx.txt").read_bytes(),
        })
    report(9, "synth -> train -> eval byte-identical across reruns",
           outputs[0] == outputs[1])


def test_criterion_10_bridge_round_trip(tmp_path):
    bridge_cli = REPO_ROOT / "frontend" / "dist" / "cli.js"
    if not bridge_cli.exists():
        print("ACCEPTANCE 10 [SKIP] feature bridge not built "
              "(criteria 1-9 run without the secondary component)", flush=True)
        pytest.skip("feature bridge not built")
    wav = tmp_path / "probe.wav"
    rng = np.random.default_rng(0)
    pcm = (rng.normal(0, 0.05, 80000).clip(-1, 1) * 32767).astype("<i2")
    with wave.open(str(wav), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(pcm.tobytes())
    out_dir = tmp_path / "bridge_out"
    proc = subprocess.run(
        ["node", str(bridge_cli), "export", "--model", "tiny-conv-v1", "--layer", "7",
         "--out", str(out_dir), str(wav)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    feats = featio.read_features(out_dir / "probe.ulmf")
    ok = (abs(feats.n_frames - 249) <= 1 and feats.dim >= 1
          and feats.frame_rate == 50.0 and "tiny-conv-v1" in feats.source_tag
          and "layer7" in feats.source_tag)
    report(10, "bridge ULMF read by primary reader",
           ok, f"T={feats.n_frames}, D={feats.dim}, rate={feats.frame_rate}, "
               f"tag={feats.source_tag!r}")
