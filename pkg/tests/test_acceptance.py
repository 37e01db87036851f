"""Acceptance suite: one PASS/FAIL line per criterion with pinned tolerances.

The learning criteria (7, 8, 10) train desk-scale models and take several
minutes each on one core.
"""

import copy
import hashlib
import json
import math
import time

import numpy as np
import pytest

from riccati_opnet import analysis, cli, datagen, linalg, riccati
from riccati_opnet.opnet import DeepOnetModel, ProgressiveModel, TrainConfig, train

from conftest import ACCEPTANCE_LINES, finite_difference_errors, scalar_system

# pinned tolerances and budgets
ARE_RESIDUAL_RTOL = 1e-10
ARE_BATCH_SECONDS = 30.0
SCALAR_ARE_TOL = 1e-10
SCALAR_DRE_TOL = 1e-6
DRE_ARE_TOL = 1e-6
RK4_RATIO = (12.0, 20.0)
COST_IDENTITY_RTOL = 1e-5
COST_IDENTITY_STEPS = 400
GRAD_RTOL = 1e-4
ARE_MSE = 2e-2
ARE_STABLE = 0.97
ARE_SECONDS = 15 * 60
PROGRESSIVE_REDUCTION = 0.90
PROGRESSIVE_GAP = 0.03
DRE_EP_REL = 1e-1
DRE_EX_REL = 1e-2
DRE_SECONDS = 20 * 60
SPEEDUP = 10.0
THEOREM_EPS = (1e-4, 1e-3, 1e-2)

ARE_TRAIN = TrainConfig(epochs=500, lr=1e-3, batch_size=128, schedule="cosine", lr_min=1e-5)
ARE_BRANCH = [36, 512, 256, 128, 256]
ARE_TRUNK = [2, 128, 256, 256]


def report(k, title, passed, detail):
    line = f"criterion {k:>2} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert passed, line


def stable_fraction(model, records):
    x = np.array([r.encoding for r in records])
    preds = model.predict(x)
    verdicts = [analysis.classify_stability(analysis.closed_loop_matrix(r.system, p)).stable
                for r, p in zip(records, preds)]
    return float(np.mean(verdicts))


# ---------------------------------------------------------------------------
# shared artifacts
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def are3_data():
    return datagen.build_dataset(datagen.GeneratorConfig(kind="are", n=3, count=5000), seed=1)


@pytest.fixture(scope="module")
def are3_model(are3_data):
    model = DeepOnetModel(3, ARE_BRANCH, ARE_TRUNK, activation="tanh", seed=0)
    t0 = time.perf_counter()
    result = train(model, are3_data, ARE_TRAIN)
    return model, result, time.perf_counter() - t0


@pytest.fixture(scope="module")
def dre3(tmp_path_factory):
    t0 = time.perf_counter()
    ds = datagen.build_dataset(datagen.GeneratorConfig(kind="dre", n=3, count=300), seed=1)
    model = DeepOnetModel(3, [135, 256, 256, 128], [2, 128, 128, 128], activation="gelu",
                          time_dependent=True, seed=0)
    result = train(model, ds, TrainConfig(epochs=60, lr=1e-3, batch_size=32, loss="dre"))
    return ds, model, result, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# solver criteria
# ---------------------------------------------------------------------------

def test_c01_are_solver_property_batch():
    cfg = datagen.GeneratorConfig(kind="are", n=3).resolved()
    systems = []
    for i in range(1000):
        rng = np.random.default_rng([11, i])
        part = cfg.partitions[i % len(cfg.partitions)]
        cls = cfg.classes[i % len(cfg.classes)]
        systems.append(datagen.sample_brunovsky(3, part, cls, rng)[1])
    failures = 0
    t0 = time.perf_counter()
    for sys in systems:
        p = riccati.solve_are(sys)
        res = riccati.are_residual(sys.A, sys.B, sys.Q, sys.R, p)
        ok = (res <= ARE_RESIDUAL_RTOL * max(1.0, linalg.frob_norm(sys.Q)) and linalg.is_spd(p)
              and analysis.classify_stability(analysis.closed_loop_matrix(sys, p)).stable)
        failures += not ok
    elapsed = time.perf_counter() - t0
    report(1, "ARE residual/SPD/stability on 1000 instances",
           failures == 0 and elapsed < ARE_BATCH_SECONDS,
           f"{failures} failures, {elapsed:.1f} s < {ARE_BATCH_SECONDS:.0f} s")


def test_c02_scalar_oracles():
    p_are = riccati.solve_are(scalar_system(-1.0, 1.0, 1.0, 1.0))[0, 0]
    e_are = abs(p_are - (math.sqrt(2.0) - 1.0))
    dre_sys = scalar_system(a=0.0, b=1.0, q=0.0, r=1.0, n_steps=200)
    e_dre = abs(riccati.solve_dre(dre_sys).values[0, 0, 0] - 0.5)
    report(2, "scalar ARE and DRE oracles", e_are <= SCALAR_ARE_TOL and e_dre <= SCALAR_DRE_TOL,
           f"ARE error {e_are:.2e}, DRE error {e_dre:.2e}")


def test_c03_dre_converges_to_are():
    ds = datagen.build_dataset(datagen.GeneratorConfig(kind="are", n=3, count=50), seed=3)
    worst = 0.0
    for rec in ds.records:
        sys = rec.system.with_(horizon=20.0)
        p0 = riccati.solve_dre(sys, 2000).values[0]
        worst = max(worst, linalg.frob_norm(p0 - rec.target))
    report(3, "DRE(0) vs ARE at T=20, N=2000 on 50 instances", worst <= DRE_ARE_TOL,
           f"max ||P_DRE(0) - P_ARE||_F = {worst:.2e}")


def test_c04_rk4_order():
    sys = scalar_system(a=0.0, b=1.0, q=0.0, r=1.0)
    errs = [abs(riccati.solve_dre(sys, n).values[0, 0, 0] - 0.5) for n in (20, 40, 80)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(RK4_RATIO[0] <= r <= RK4_RATIO[1] for r in ratios)
    report(4, "RK4 step-halving ratio", ok, f"ratios {ratios[0]:.2f}, {ratios[1]:.2f}")


def test_c05_cost_identity():
    ds = datagen.build_dataset(datagen.GeneratorConfig(kind="are", n=3, count=100,
                                                       n_steps=COST_IDENTITY_STEPS), seed=5)
    worst = 0.0
    for rec in ds.records:
        sys = rec.system
        traj = riccati.solve_dre(sys)
        rng = np.random.default_rng([5, rec.index])
        x0 = rng.standard_normal(3)
        run = riccati.simulate_closed_loop(sys, riccati.feedback_gain(sys, traj), x0)
        j_star = float(x0 @ traj.values[0] @ x0)
        worst = max(worst, abs(run.cost - j_star) / j_star)
    report(5, f"J(u*) = x0'P(0)x0 on 100 instances (N={COST_IDENTITY_STEPS})",
           worst <= COST_IDENTITY_RTOL, f"max relative gap {worst:.2e}")


def test_c06_gradient_exactness():
    rng = np.random.default_rng(6)
    model = DeepOnetModel(3, [36, 16, 8], [2, 8], activation="tanh", seed=6)
    model.fit_normalization(rng.standard_normal((50, 36)), rng.standard_normal((50, 3, 3)))
    worst = 0.0
    for _ in range(5):
        x = rng.standard_normal((8, 36))
        y = rng.standard_normal((8, 3, 3))
        worst = max(worst, finite_difference_errors(model, x, y, step=1e-5))
    report(6, "backprop vs central differences, every parameter, 5 batches",
           worst <= GRAD_RTOL, f"worst relative error {worst:.2e}")


# ---------------------------------------------------------------------------
# learning criteria
# ---------------------------------------------------------------------------

def test_c07_are_learning(are3_data, are3_model):
    model, result, seconds = are3_model
    mse = result.final_test_loss
    rate = stable_fraction(model, are3_data.test)
    report(7, "3-d ARE DeepONet, 5000 samples / 500 epochs",
           mse <= ARE_MSE and rate >= ARE_STABLE and seconds <= ARE_SECONDS,
           f"test MSE {mse:.2e}, stabilized {100 * rate:.2f}%, {seconds:.0f} s")


@pytest.fixture(scope="module")
def are4_data():
    return datagen.build_dataset(datagen.GeneratorConfig(kind="are", n=4, count=2500), seed=2)


def test_c08_progressive_efficiency(are3_model, are4_data):
    core = are3_model[0]
    cfg = TrainConfig(epochs=200, lr=1e-3, batch_size=128, schedule="cosine", lr_min=1e-5)
    baseline = DeepOnetModel(4, [64] + ARE_BRANCH[1:], ARE_TRUNK, activation="tanh", seed=0)
    train(baseline, are4_data, cfg)
    progressive = ProgressiveModel(core, n=4, input_width=64, views=4, seed=0)
    train(progressive, are4_data, cfg)
    reduction = 1.0 - progressive.count_params() / baseline.count_params()
    base_rate = stable_fraction(baseline, are4_data.test)
    prog_rate = stable_fraction(progressive, are4_data.test)
    report(8, "progressive 4-d model vs from-scratch baseline",
           reduction >= PROGRESSIVE_REDUCTION and prog_rate >= base_rate - PROGRESSIVE_GAP,
           f"parameter reduction {100 * reduction:.2f}%, stabilized {100 * prog_rate:.2f}% "
           f"vs baseline {100 * base_rate:.2f}%")


def test_c09_theorem_bounds():
    tcfg = copy.deepcopy(cli.config.SCHEMA["theorem"])
    tcfg.update(instances=100, epsilons=list(THEOREM_EPS), perturbations=["identity", "random"])
    rows = cli.theorem_sweep(tcfg, seed=9)
    n_inst = len({r["instance"] for r in rows})
    traj_ok = sum(bool(r["satisfied_traj"]) for r in rows)
    cost_ok = sum(bool(r["satisfied_cost"]) for r in rows)
    below = [r for r in rows if r["epsilon"] < r["eps_star"]]
    stable_ok = sum(bool(r["learned_stable"] and r["measured_decay_ok"]) for r in below)
    passed = (n_inst == 100 and traj_ok == len(rows) and cost_ok == len(rows)
              and stable_ok == len(below))
    report(9, "trajectory/cost bounds and stability below eps* (100 instances x 3 eps)", passed,
           f"trajectory {traj_ok}/{len(rows)}, cost {cost_ok}/{len(rows)}, "
           f"stable {stable_ok}/{len(below)} below eps*")


def test_c10_dre_learning(dre3):
    ds, model, _, seconds = dre3
    _, _, metrics, _ = cli.evaluate(model, ds, cli.config.resolve({"seed": 1}))
    report(10, "3-d DRE DeepONet, 300 trajectories / 60 epochs",
           metrics.e_P_rel <= DRE_EP_REL and metrics.e_x_rel <= DRE_EX_REL
           and seconds <= DRE_SECONDS,
           f"e_P_rel {metrics.e_P_rel:.2e}, e_x_rel {metrics.e_x_rel:.2e}, {seconds:.0f} s")


def test_c11_inference_speedup(are3_data, are3_model, dre3):
    from threadpoolctl import threadpool_limits

    are_model = are3_model[0]
    ds, dre_model, _, _ = dre3
    are_recs = are3_data.test[:20]
    dre_recs = ds.test[:20]
    times = ds.times()
    with threadpool_limits(limits=1):
        are_rows = analysis.bench_inference(
            lambda r: riccati.solve_are(r.system),
            lambda r: are_model.predict(r.encoding[None]), are_recs, repetitions=100)
        dre_rows = analysis.bench_inference(
            lambda r: riccati.solve_dre(r.system, 100),
            lambda r: dre_model.predict(r.encoding[None], times), dre_recs, repetitions=100)
    s_are, s_dre = are_rows[1].speedup, dre_rows[1].speedup
    report(11, "surrogate vs classical solver at n=3", s_are >= SPEEDUP and s_dre >= SPEEDUP,
           f"ARE x{s_are:.1f} ({are_rows[0].time_ms:.3f} vs {are_rows[1].time_ms:.3f} ms), "
           f"DRE x{s_dre:.1f} ({dre_rows[0].time_ms:.3f} vs {dre_rows[1].time_ms:.3f} ms)")


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_c12_determinism(tmp_path):
    doc = {"generator": {"kind": "are", "n": 3, "count": 200},
           "model": {"branch_widths": ARE_BRANCH, "trunk_widths": ARE_TRUNK},
           "train": {"epochs": 3, "batch_size": 64}}
    cfg = tmp_path / "det.json"
    cfg.write_text(json.dumps(doc))
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["--threads", "1", "gen-data", "--config", str(cfg),
                         "--out", str(out / "data")]) == 0
        assert cli.main(["--threads", "1", "train", "--config", str(cfg), "--data",
                         str(out / "data"), "--out", str(out / "model")]) == 0
        digests.append((_sha(out / "data" / "dataset.jsonl"), _sha(out / "model" / "model.json"),
                        _sha(out / "model" / "losses.csv")))
    report(12, "gen-data and train are bit-identical across runs with --threads 1",
           digests[0] == digests[1], f"dataset {digests[0][0][:12]}, model {digests[0][1][:12]}")
