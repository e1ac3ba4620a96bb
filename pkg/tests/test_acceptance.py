"""End-to-end acceptance checks, one test per criterion.

Each test prints ``criterion N: PASS|FAIL ...`` and records the same line for
the terminal summary, so the verdicts are visible even when output is captured.
"""
import filecmp
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, brute_knn, numeric_gradient, relative_error
from impfilter import model as nn
from impfilter.bounds import check_bounds, radius_check
from impfilter.cli import main as cli_main
from impfilter.cli import smooth_field
from impfilter.datasets import normalize, synth_gaussians
from impfilter.filtering import FilterConfig, decide_transmit, init_node, knn_estimate
from impfilter.model import OptimizerConfig
from impfilter.simulator import SimConfig, fit_scaling_law, run


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# -- 1. gradient correctness ---------------------------------------------------

def _random_net(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(2, 5))
    sizes = [int(v) for v in rng.integers(1, 6, size=depth)]
    sizes[-1] = max(sizes[-1], 2)
    act = ("relu", "tanh", "sigmoid")[seed % 3]
    kind = ("cross_entropy", "mean_squared_error")[(seed // 3) % 2]
    state = nn.init_model(nn.ModelConfig(tuple(sizes), act, loss_kind=kind, seed=seed))
    for b in state.biases:
        b[:] = rng.normal(0.0, 0.3, b.shape)
    X = rng.normal(size=(4, sizes[0]))
    y = rng.integers(0, sizes[-1], size=4)
    return state, X, y


def test_criterion_1_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        state, X, y = _random_net(seed)
        analytic = nn.gradient(state, X, y).flatten()
        worst = max(worst, float(relative_error(analytic, numeric_gradient(state, X, y)).max()))
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-4 and elapsed < 60,
           f"max relative error {worst:.2e} over 50 networks (< 1e-4), {elapsed:.1f}s")


# -- 2. kNN oracle -------------------------------------------------------------

def test_criterion_2_knn_matches_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    mismatches = 0
    for i in range(10_000):
        P = int(rng.integers(2, 40))
        n = int(rng.integers(1, 5))
        L = int(rng.integers(1, P))
        if i % 2:
            # integer grid: many exact distance ties
            X = rng.integers(0, 3, size=(P, n)).astype(float)
            q = rng.integers(0, 3, size=n).astype(float)
        else:
            X = rng.random((P, n))
            q = rng.random(n)
        s = rng.random(P) * 5
        want, _ = brute_knn(X, s, q, L)
        if knn_estimate(q, (X, s), L) != want:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    report(2, mismatches == 0 and elapsed < 60,
           f"{mismatches} mismatches in 10^4 instances (exact equality), {elapsed:.1f}s")


# -- 3. rate compliance at beta = 0 ----------------------------------------------

def test_criterion_3_rate_compliance_beta_zero():
    t0 = time.perf_counter()
    realised = {}
    for R in (0.1, 0.3, 0.5):
        cfg = FilterConfig(buffer_size=16, neighbors=3, beta_min=0.0, beta_max=0.0, target_rate=R)
        rng = np.random.default_rng(3)
        node = init_node(0, rng.random((16, 2)), cfg, np.random.default_rng(30))
        node.buffer_s = rng.random(16) * 4  # scores must not matter at beta = 0
        sent = sum(decide_transmit(x, node, cfg) for x in rng.random((100_000, 2)))
        realised[R] = sent / 100_000
    elapsed = time.perf_counter() - t0
    ok = all(abs(f - R) <= 0.01 for R, f in realised.items()) and elapsed < 60
    detail = ", ".join(f"R={R}: {f:.4f}" for R, f in realised.items())
    report(3, ok, f"{detail} (within +-0.01), {elapsed:.1f}s")


# -- 4. error decreases over transmission rounds -------------------------------

def _protocol_dataset():
    # ten dimensions keep the boundary data-limited for all ten rounds
    return normalize(synth_gaussians([[-0.35] * 10, [0.35] * 10], 1.0, [0.5, 0.5], 8000, 0))


def _protocol_config(seed):
    return SimConfig(nodes=4, samples_per_interval=100, rounds=10, rate=0.3, scheme="importance",
                     filter=FilterConfig(buffer_size=32, neighbors=4, beta_max=1.0,
                                         anneal_intervals=10, target_rate=0.3),
                     hidden_layers=(8,), optimizer=OptimizerConfig("adam", 0.005),
                     epochs=2, batch_size=10, seed=seed)


def test_criterion_4_error_falls_over_rounds():
    ds = _protocol_dataset()
    good = 0
    lines = []
    for seed in range(5):
        err = [m.test_error for m in run(_protocol_config(seed), ds).metrics]
        ok = err[9] < err[0] and min(err[7:]) <= min(err[:7])
        good += ok
        lines.append(f"seed {seed}: {err[0]:.3f}->{err[9]:.3f} min@{int(np.argmin(err)) + 1}")
    report(4, good >= 4, f"{good}/5 seeds fall and bottom out in rounds 8-10 ({'; '.join(lines)})")


# -- 5 and 10. scheme ordering and scaling-law sign ------------------------------

SWEEP_RATES = (0.05, 0.1, 0.2)
SWEEP_SCHEMES = ("importance", "uniform", "genie")


@pytest.fixture(scope="module")
def imbalanced_sweep():
    ds = normalize(synth_gaussians([[-1.5, -1.5], [1.5, 1.5]], 1.0, [0.9, 0.1], 8000, 0))
    t0 = time.perf_counter()
    means = {}
    for R in SWEEP_RATES:
        for scheme in SWEEP_SCHEMES:
            errs = []
            for seed in range(20):
                cfg = SimConfig(nodes=4, samples_per_interval=100, rounds=10, rate=R, scheme=scheme,
                                filter=FilterConfig(buffer_size=32, neighbors=4, beta_max=1.0,
                                                    anneal_intervals=10, target_rate=R),
                                hidden_layers=(8,), optimizer=OptimizerConfig("adam", 0.01),
                                epochs=2, batch_size=10, selection="quota", seed=seed)
                errs.append(run(cfg, ds).metrics[-1].test_error)
            means[scheme, R] = float(np.mean(errs))
    return means, time.perf_counter() - t0


def test_criterion_5_importance_beats_uniform_near_genie(imbalanced_sweep):
    means, elapsed = imbalanced_sweep
    ok = elapsed < 600
    parts = []
    for R in SWEEP_RATES:
        imp, uni, gen = (means[s, R] for s in SWEEP_SCHEMES)
        ok &= imp < uni and abs(imp - gen) <= 0.05
        parts.append(f"R={R}: imp {imp:.4f} uni {uni:.4f} genie {gen:.4f}")
    report(5, ok, f"{'; '.join(parts)}, {elapsed:.0f}s")


def test_criterion_10_scaling_exponent_negative(imbalanced_sweep):
    means, _ = imbalanced_sweep
    exps = {s: fit_scaling_law(SWEEP_RATES, [means[s, R] for R in SWEEP_RATES])[1]
            for s in SWEEP_SCHEMES}
    report(10, all(e < 0 for e in exps.values()),
           "fitted exponents " + ", ".join(f"{s} {e:.3f}" for s, e in exps.items()))


# -- 6. bound coverage ---------------------------------------------------------

def test_criterion_6_bound_coverage_smooth_field():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    bx = rng.random((256, 2))
    X = rng.random((1000, 2))
    rep = check_bounds(X, None, bx, smooth_field(bx), lambda Z, _y: smooth_field(Z), 8, delta=0.05)
    elapsed = time.perf_counter() - t0
    report(6, rep.coverage_fraction >= 0.95 and rep.log_condition_met and elapsed < 60,
           f"coverage {rep.coverage_fraction:.3f} (>= 0.95), eta_b {rep.eta_b:.3f}, "
           f"eta_v {rep.eta_v:.3f}, {elapsed:.1f}s")


# -- 7. radius bound -----------------------------------------------------------

def test_criterion_7_radius_bound_monte_carlo():
    rng = np.random.default_rng(7)
    bx = rng.random((256, 2))
    within = [radius_check(q, bx, 8, 256, 2)[2] for q in rng.random((1000, 2))]
    frac = float(np.mean(within))
    report(7, frac >= 0.90, f"within for {frac:.3f} of 10^3 queries (>= 0.90)")


# -- 8. energy ledger ---------------------------------------------------------

def test_criterion_8_energy_per_interval():
    ds = normalize(synth_gaussians([[-1.0, -1.0], [1.0, 1.0]], 1.0, [0.5, 0.5], 8000, 0))
    fcfg = FilterConfig(target_rate=0.1)
    imp = run(SimConfig(rate=0.1, scheme="importance", selection="quota", filter=fcfg), ds)
    full = run(SimConfig(rate=0.1, scheme="transmit_all", selection="quota", filter=fcfg), ds)
    e_imp = imp.energy_per_interval()
    e_all = full.energy_per_interval()
    ok = bool(np.all(np.abs(e_imp - 620.0) <= 0.02 * 620.0) and np.all(e_all == 5100.0))
    ratio = float(e_all.mean() / e_imp.mean())
    report(8, ok and abs(ratio - 5100 / 620) < 0.2,
           f"importance {e_imp.mean():.1f}/interval (620 +-2%), transmit-all {e_all.mean():.1f} "
           f"(5100 exact), longevity gain {ratio:.2f}x")


# -- 9. determinism -------------------------------------------------------------

CONFIG_9 = """\
experiment:
  schemes: [importance, uniform, genie]
  rates: [0.3]
  seeds: 2
sim:
  rounds: 4
  samples_per_interval: 50
"""


def test_criterion_9_byte_identical_reruns(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(CONFIG_9)
    codes = [cli_main(["run", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    names = sorted(os.listdir(tmp_path / "a"))
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    ok = codes == [0, 0] and len(names) > 1 and not mismatch and not errors
    report(9, ok, f"{len(match)}/{len(names)} output files byte-identical across reruns")
