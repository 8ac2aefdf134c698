"""Acceptance criteria 1-9, one test each.

Every test appends a PASS/FAIL line to the acceptance summary printed at the
end of the pytest run (see conftest.py).
"""

import time
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from scipy.special import log_expit

from redre import autodiff as ad
from redre.cli import main
from redre.config import load_config
from redre.data import GAP_FEATURE, load_transactions, prepare_dataset
from redre.encoder import EncoderConfig, init_params, score_sequences
from redre.gradcheck import run_suite
from redre.metrics import ScoredSet, auc_rank, auc_trapezoid, roc_curve
from redre.rotary import build_rotation_matrix, frequency_schedule, rope_angles, rotate_pairs
from redre.synthetic import entity_fraud_rate, generate_synthetic
from redre.training import TrainConfig, bce_loss, compare_models, weighted_bce, weighted_bce_grad


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_rotation_suite():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = dict(orth=0.0, block=0.0, additive=0.0, norm=0.0)
    cases = 1000
    for dim in (2, 4, 8, 64):
        P = dim // 2
        eye = np.eye(dim)
        for _ in range(cases):
            a = rng.uniform(-50, 50, P)
            b = rng.uniform(-50, 50, P)
            v = rng.standard_normal(dim)
            R = build_rotation_matrix(a)
            worst["orth"] = max(worst["orth"], np.abs(R.T @ R - eye).max())
            worst["block"] = max(worst["block"], np.abs(R @ v - rotate_pairs(v, a)).max())
            composed = rotate_pairs(rotate_pairs(v, a), b)
            worst["additive"] = max(worst["additive"], np.abs(composed - rotate_pairs(v, a + b)).max())
            rel = abs(np.linalg.norm(rotate_pairs(v, a)) - np.linalg.norm(v)) / np.linalg.norm(v)
            worst["norm"] = max(worst["norm"], rel)
    elapsed = time.perf_counter() - start
    ok = (worst["orth"] <= 1e-12 and worst["block"] <= 1e-12 and worst["additive"] <= 1e-10
          and worst["norm"] <= 1e-12 and elapsed < 10)
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    record(1, "rotation correctness", ok, f"{detail}, {4 * cases} cases/property, {elapsed:.1f}s")


def test_criterion_2_rope_relative_property():
    rng = np.random.default_rng(2)
    worst = 0.0
    for dim in (2, 4, 8, 64):
        sched = frequency_schedule(dim)
        for _ in range(1000):
            q, k = rng.standard_normal(dim), rng.standard_normal(dim)
            m, n = rng.integers(0, 513, 2)
            lhs = rotate_pairs(q, rope_angles(m, sched)) @ rotate_pairs(k, rope_angles(n, sched))
            rhs = rotate_pairs(q, rope_angles(m - n, sched)) @ k
            worst = max(worst, abs(lhs - rhs))
    record(2, "RoPE relative property", worst <= 1e-9, f"max |diff|={worst:.1e} over 4000 cases")


def _noisy_params(config, seed):
    rng = np.random.default_rng(seed + 7)
    params = init_params(config, seed)
    for name, value in params.items():
        if value.ndim == 1:
            params[name] = value + 0.3 * rng.standard_normal(value.shape)
    return params


def test_criterion_3_redre_time_translation():
    rng = np.random.default_rng(3)
    config = EncoderConfig(input_dim=9, position_mode="redre")
    params = _noisy_params(config, 3)
    lengths = rng.integers(1, config.max_seq_len + 1, 120)
    feats = [rng.standard_normal((n, 9)) for n in lengths]
    times = [rng.uniform(0, 1.5e7) + np.cumsum(np.r_[0, rng.lognormal(8, 2, n - 1)]) for n in lengths]
    base = score_sequences(config, params, feats, times)
    shifted = score_sequences(config, params, feats, [t + 86400 for t in times])
    worst = float(np.abs(base - shifted).max())
    record(3, "ReDRE time translation", worst <= 1e-7, f"max |dlogit|={worst:.1e} over {len(lengths)} sequences")


def test_criterion_4_gradient_check():
    section = load_config().gradcheck
    assert (section.model_dim, section.heads, section.layers, section.seq_len) == (8, 2, 1, 4)
    start = time.perf_counter()
    reports = run_suite(section)
    elapsed = time.perf_counter() - start
    worst = {m: r.max_error for m, r in reports.items()}
    ok = len(worst) == 4 and all(e < 1e-4 for e in worst.values()) and elapsed < 120
    detail = ", ".join(f"{m}={e:.1e}" for m, e in worst.items())
    record(4, "encoder gradient check", ok, f"{detail}, {elapsed:.1f}s")


def test_criterion_5_auc_equivalence():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 200))
        labels = rng.integers(0, 2, n)
        labels[rng.choice(n, 2, replace=False)] = [0, 1]
        scores = rng.integers(0, int(rng.integers(1, 12)) + 1, n).astype(float)
        s = ScoredSet(scores, labels)
        worst = max(worst, abs(auc_trapezoid(roc_curve(s)) - auc_rank(s)))
    example = ScoredSet([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    ex_trap, ex_rank = auc_trapezoid(roc_curve(example)), auc_rank(example)
    perfect = ScoredSet([0.1, 0.2, 0.7, 0.9], [0, 0, 1, 1])
    anti = ScoredSet([0.9, 0.7, 0.2, 0.1], [0, 0, 1, 1])
    ok = (worst <= 1e-9 and abs(ex_trap - 0.75) < 1e-15 and abs(ex_rank - 0.75) < 1e-15
          and auc_trapezoid(roc_curve(perfect)) == 1.0 and auc_rank(perfect) == 1.0
          and auc_trapezoid(roc_curve(anti)) == 0.0 and auc_rank(anti) == 0.0)
    record(5, "AUC path equivalence", ok, f"max |diff|={worst:.1e}, example={ex_rank}")


def test_criterion_6_loss_contract():
    rng = np.random.default_rng(6)
    z = rng.uniform(-30, 30, 2000)
    y = rng.integers(0, 2, 2000).astype(float)
    standard = y * np.logaddexp(0.0, -z) + (1 - y) * np.logaddexp(0.0, z)
    collapse = np.array_equal(weighted_bce(z, y, 1.0), standard)
    reference = -(y * log_expit(z) + (1 - y) * log_expit(-z))
    collapse &= np.allclose(weighted_bce(z, y, 1.0), reference, rtol=1e-12, atol=0)
    scaling = all(np.array_equal(weighted_bce(z, 1, w), w * weighted_bce(z, 1, 1.0))
                  for w in (0.5, 3.0, 27.571428571428573, 1000.0))
    # complex-step derivative of the naive closed form: exact to rounding
    h = 1e-30
    grad_err = 0.0
    for w in (1.0, 27.571428571428573):
        zc = z + 1j * h
        f = w * y * np.log(1 + np.exp(-zc)) + (1 - y) * np.log(1 + np.exp(zc))
        grad_err = max(grad_err, np.abs(weighted_bce_grad(z, y, w) - f.imag / h).max())
    g = ad.Graph()
    logits = g.param(z[:50].copy(), "z")
    tape = g.backward(bce_loss(logits, y[:50], 4.0))["z"]
    grad_err = max(grad_err, np.abs(tape * 50 - weighted_bce_grad(z[:50], y[:50], 4.0)).max())
    ok = collapse and scaling and grad_err <= 1e-10
    record(6, "weighted BCE contract", ok,
           f"collapse={collapse}, scaling={scaling}, max grad err={grad_err:.1e}")


@pytest.mark.slow
def test_criterion_7_synthetic_comparison():
    seeds = range(5)
    cfg = load_config()
    aucs = {m.value: [] for m in cfg.modes}
    start = time.perf_counter()
    for seed in seeds:
        records = load_transactions(generate_synthetic(n_entities=5000, fraud_rate=0.035,
                                                       burst_strength=8.0, seed=seed))
        ds = prepare_dataset(records, cfg.data.grouping_columns, cfg.data.max_seq_len,
                             cfg.data.valid_fraction, seed)
        train_cfg = TrainConfig(**{**cfg.train.to_dict(), "seed": seed})
        result = compare_models(ds, cfg.encoder_config(ds.feature_dim), train_cfg, cfg.modes)
        for mode, auc in result.aucs().items():
            aucs[mode].append(auc)
        print(f"seed {seed}: " + ", ".join(f"{m}={a[-1]:.4f}" for m, a in aucs.items()), flush=True)
    elapsed = time.perf_counter() - start
    median = {m: float(np.median(a)) for m, a in aucs.items()}
    every_mode = all(min(a) > 0.55 for a in aucs.values())
    margin = median["redre"] - median["sinusoidal"]
    ok = every_mode and margin >= 0.02 and elapsed < 600
    detail = ", ".join(f"median {m}={v:.4f}" for m, v in median.items())
    record(7, "synthetic comparison", ok,
           f"{detail}, min auc={min(min(a) for a in aucs.values()):.4f}, "
           f"redre-baseline={margin:+.4f}, {elapsed:.0f}s")


def _tree_bytes(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if not p.name.endswith(".timing.json")}


def test_criterion_8_determinism(tmp_path):
    (tmp_path / "run.ini").write_text("[model]\nmodel_dim = 16\nheads = 2\nlayers = 1\nff_dim = 32\n"
                                      "[train]\nepochs = 3\n")
    assert main(["synth", "--out", str(tmp_path / "d.ds"), "--entities", "400",
                 "--fraud-rate", "0.1", "--seed", "8"]) == 0
    outputs = []
    for run in ("a", "b"):
        assert main(["compare", "--data", str(tmp_path / "d.ds"), "--config", str(tmp_path / "run.ini"),
                     "--report-dir", str(tmp_path / run)]) == 0
        outputs.append(_tree_bytes(tmp_path / run))
    a, b = outputs
    names = sorted(a)
    identical = names == sorted(b) and all(a[n] == b[n] for n in names)
    has_all = all(f"{m}.{ext}" in a for m in ("sinusoidal", "rope", "redre") for ext in ("ckpt", "report.json"))
    record(8, "bitwise determinism of compare", identical and has_all, f"{len(names)} files compared")


def test_criterion_9_data_pipeline():
    records = load_transactions(generate_synthetic(n_entities=5000, fraud_rate=0.035, seed=0))
    rate = entity_fraud_rate(records)
    ds = prepare_dataset(records, seed=0)
    train_ids = {s.entity_id for s in ds.train}
    valid_ids = {s.entity_id for s in ds.valid}
    disjoint = not (train_ids & valid_ids) and len(train_ids) + len(valid_ids) == 5000
    monotone = all(np.all(np.diff(s.timestamps) >= 0) for s in ds.train + ds.valid)
    X = np.vstack([s.features for s in ds.train])
    names = ds.feature_names
    numeric = list(ds.meta["schema"]["numeric"]) + [GAP_FEATURE]
    worst_mean, worst_std = 0.0, 0.0
    for col in numeric:
        v = X[:, names.index(col)]
        if f"{col}__missing" in names:
            v = v[X[:, names.index(f"{col}__missing")] == 0]
        worst_mean = max(worst_mean, abs(v.mean()))
        worst_std = max(worst_std, abs(v.std() - 1.0))
    moments = worst_mean < 1e-9 and worst_std <= 1e-6
    rate_ok = abs(rate - 0.035) <= 0.2 * 0.035
    ok = disjoint and monotone and moments and rate_ok
    record(9, "data pipeline", ok,
           f"disjoint={disjoint}, monotone={monotone}, {len(numeric)} numeric cols max|mu|={worst_mean:.1e} "
           f"max|sd-1|={worst_std:.1e}, fraud rate={rate:.4f}")
