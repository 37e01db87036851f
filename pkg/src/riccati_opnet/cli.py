"""Command-line entry point: ``riccati-opnet <subcommand>``."""

import argparse
import copy
import json
import logging
import os
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis, config, datagen, riccati, store
from .errors import (ArchitectureMismatch, ChecksumMismatch, ConfigError, CorruptRecord,
                     NotAdmissible, RiccatiOpnetError, SchemaVersionMismatch)
from .opnet import DeepOnetModel, ProgressiveModel, TrainConfig, evaluate_loss, train
from .opnet.train import arrays_from_records

log = logging.getLogger("riccati_opnet")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4

DATASET_FILE = "dataset.jsonl"
MODEL_FILE = "model.json"
RESOLVED_FILE = "resolved_config.json"


class AcceptanceFailure(Exception):
    pass


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out(out, cfg):
    os.makedirs(out, exist_ok=True)
    config.dump(cfg, os.path.join(out, RESOLVED_FILE))


def _dataset_path(path):
    return os.path.join(path, DATASET_FILE) if os.path.isdir(path) else path


def _model_path(path):
    return os.path.join(path, MODEL_FILE) if os.path.isdir(path) else path


def _generator_config(section, **overrides):
    g = {k: v for k, v in section.items() if v is not None}
    g.update(overrides)
    return datagen.GeneratorConfig(**g)


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args, cfg):
    seed = cfg["seed"] if args.seed is None else args.seed
    if args.count is not None:
        cfg["generator"]["count"] = args.count
    cfg["seed"] = seed
    _prepare_out(args.out, cfg)
    workers = 1 if args.threads == 1 else max(1, min(args.threads, args.workers or 1))
    t0 = time.perf_counter()
    ds = datagen.build_dataset(_generator_config(cfg["generator"]), seed, workers=workers)
    store.write_dataset(ds, os.path.join(args.out, DATASET_FILE))
    m = ds.metadata
    report = {"count": m["count"], "n_train": m["n_train"], "attempts": m["attempts"],
              "acceptance_rate": m["acceptance_rate"], "class_counts": m["class_counts"],
              "seconds": time.perf_counter() - t0}
    _write_json(os.path.join(args.out, "generation_report.json"), report)
    print(f"wrote {m['count']} records ({m['n_train']} train) to "
          f"{os.path.join(args.out, DATASET_FILE)}; acceptance rate {m['acceptance_rate']:.3f}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def build_model(cfg, dataset, seed, core=None):
    mcfg = cfg["model"]
    desc = dataset.descriptor
    n = dataset.metadata["n"]
    width = desc.length
    if mcfg["type"] == config.PROGRESSIVE:
        if core is None:
            raise ConfigError("progressive models need --core")
        return ProgressiveModel(core, n=n, input_width=width, views=mcfg["views"],
                                embed_hidden=mcfg["embed_hidden"], lift_hidden=mcfg["lift_hidden"],
                                activation=mcfg["activation"], encoding=desc.to_dict(), seed=seed)
    if mcfg["branch_widths"] is None or mcfg["trunk_widths"] is None:
        raise ConfigError("model.branch_widths and model.trunk_widths are required")
    if mcfg["branch_widths"][0] != width:
        raise ConfigError(f"branch input width {mcfg['branch_widths'][0]} differs from the "
                          f"dataset encoding width {width}")
    horizon = dataset.metadata["generator"]["horizon"]
    return DeepOnetModel(n, mcfg["branch_widths"], mcfg["trunk_widths"],
                         activation=mcfg["activation"], time_dependent=dataset.kind == datagen.DRE,
                         horizon=horizon, encoding=desc.to_dict(), seed=seed)


def train_config(cfg, seed, kind):
    return TrainConfig(seed=seed, loss=kind, **cfg["train"])


def cmd_train(args, cfg):
    if args.trials is not None:
        cfg["trials"] = args.trials
    if args.epochs is not None:
        cfg["train"]["epochs"] = args.epochs
    _prepare_out(args.out, cfg)
    ds = store.read_dataset(_dataset_path(args.data))
    core = store.load_model(_model_path(args.core))[0] if args.core else None
    rows = []
    for trial in range(cfg["trials"]):
        seed = cfg["seed"] + trial
        model = build_model(cfg, ds, seed, core)
        tcfg = train_config(cfg, seed, ds.kind)
        result = train(model, ds, tcfg)
        suffix = "" if trial == 0 else f"_trial{trial}"
        analysis.write_csv(
            os.path.join(args.out, f"losses{suffix}.csv"),
            [{"epoch": e, "train_loss": a, "test_loss": b}
             for e, (a, b) in enumerate(zip(result.train_losses, result.test_losses))])
        store.save_model(model, os.path.join(args.out, f"model{suffix}.json"),
                         train_config=tcfg.__dict__.copy(),
                         extra={"final_train_loss": result.final_train_loss,
                                "final_test_loss": result.final_test_loss})
        rows.append({"trial": trial, "seed": seed, "params": model.count_params(),
                     "final_train_loss": result.final_train_loss,
                     "final_test_loss": result.final_test_loss, "seconds": result.seconds})
        print(f"trial {trial}: test loss {result.final_test_loss:.4e}, "
              f"{model.count_params()} trainable params, {result.seconds:.1f} s")
        for msg in result.diagnostics:
            print(f"trial {trial}: diagnostic: {msg}")
    analysis.write_csv(os.path.join(args.out, "trials.csv"), rows)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _x0_for(cfg, rec):
    if cfg["eval"]["x0"] == "ones":
        return np.ones(rec.system.n) / np.sqrt(rec.system.n)
    rng = np.random.default_rng([cfg["seed"], rec.index])
    v = rng.standard_normal(rec.system.n)
    return v / np.linalg.norm(v)


def _as_trajectory(sys, values):
    times = sys.grid()
    values = np.asarray(values)
    if values.ndim == 2:
        values = np.broadcast_to(values, (len(times),) + values.shape)
    return riccati.RiccatiTrajectory(times=times, values=np.array(values))


def evaluate(model, dataset, cfg):
    """Per-sample verdicts, the trial-table row, metrics and scatter rows."""
    records = dataset.test
    x, y = arrays_from_records(records)
    times = dataset.times() if model.time_dependent else None
    test_loss = evaluate_loss(model, x, y, times)
    pred = model.predict(x, times)
    samples, verdicts, truth_runs, pred_runs = [], [], [], []
    true_spectra, pred_spectra = [], []
    for rec, p_hat in zip(records, pred):
        sys = rec.system
        p_true = rec.target if rec.target.ndim == 2 else rec.target[0]
        p0 = p_hat if p_hat.ndim == 2 else p_hat[0]
        v_true = analysis.classify_stability(analysis.closed_loop_matrix(sys, p_true))
        v_pred = analysis.classify_stability(analysis.closed_loop_matrix(sys, p0))
        true_traj = _as_trajectory(sys, rec.target)
        pred_traj = _as_trajectory(sys, p_hat)
        x0 = _x0_for(cfg, rec)
        run_t = riccati.simulate_closed_loop(sys, riccati.feedback_gain(sys, true_traj), x0)
        run_p = riccati.simulate_closed_loop(sys, riccati.feedback_gain(sys, pred_traj), x0)
        if sys.time_invariant:
            verdict = v_pred
        else:
            verdict = analysis.StabilityVerdict(
                analysis.STABLE if run_p.stable else analysis.UNSTABLE, v_pred.spectrum)
        verdicts.append(verdict)
        true_spectra.append(v_true.spectrum)
        pred_spectra.append(v_pred.spectrum)
        truth_runs.append(analysis.RunRecord(true_traj.times, true_traj.values,
                                             run_t.states, run_t.cost))
        pred_runs.append(analysis.RunRecord(pred_traj.times, pred_traj.values,
                                            run_p.states, run_p.cost))
        samples.append({"index": rec.index, "label": rec.label,
                        "true_verdict": analysis.STABLE if (v_true.stable if sys.time_invariant
                                                            else run_t.stable) else analysis.UNSTABLE,
                        "pred_verdict": verdict.verdict,
                        "disagreement": verdict.disagreement,
                        "max_real_pred": float(np.max(v_pred.spectrum.real))})
    table = analysis.stability_table(verdicts, test_loss)
    metrics = analysis.error_metrics(truth_runs, pred_runs)
    scatter = (analysis.scatter_rows(true_spectra, "true")
               + analysis.scatter_rows(pred_spectra, "predicted"))
    return samples, table, metrics, scatter


def cmd_eval(args, cfg):
    _prepare_out(args.out, cfg)
    model, _ = store.load_model(_model_path(args.model))
    ds = store.read_dataset(_dataset_path(args.data))
    if ds.descriptor.length != model.input_width:
        raise ArchitectureMismatch(f"model input width {model.input_width} does not match "
                                   f"dataset encoding width {ds.descriptor.length}")
    samples, table, metrics, scatter = evaluate(model, ds, cfg)
    analysis.write_csv(os.path.join(args.out, "samples.csv"), samples)
    analysis.write_csv(os.path.join(args.out, "stability.csv"), [table], analysis.TRIAL_COLUMNS)
    analysis.write_csv(os.path.join(args.out, "metrics.csv"), [metrics.as_dict()])
    analysis.write_csv(os.path.join(args.out, "eigenvalues.csv"), scatter,
                       analysis.SCATTER_COLUMNS)
    total = table["stable_samples"] + table["unstable_samples"]
    rate = table["stable_samples"] / total if total else float("nan")
    print(f"test loss {table['test_loss']:.4e}; stabilized {table['stable_samples']}/{total} "
          f"({100 * rate:.2f}%); e_P_rel {metrics.e_P_rel:.3e}, e_x_rel {metrics.e_x_rel:.3e}")
    ev = cfg["eval"]
    failures = []
    if ev["max_test_loss"] is not None and not table["test_loss"] <= ev["max_test_loss"]:
        failures.append(f"test loss {table['test_loss']:.4e} > {ev['max_test_loss']}")
    if ev["min_stable_rate"] is not None and not rate >= ev["min_stable_rate"]:
        failures.append(f"stable rate {rate:.4f} < {ev['min_stable_rate']}")
    if failures:
        raise AcceptanceFailure("; ".join(failures))


# ---------------------------------------------------------------------------
# verify-theorem
# ---------------------------------------------------------------------------

def theorem_instances(tcfg, seed):
    """Admissible time-invariant systems with ``P_T = P_ARE`` so ``P*`` is constant."""
    gen = datagen.GeneratorConfig(kind=datagen.ARE, n=tcfg["n"], count=tcfg["instances"],
                                  horizon=tcfg["horizon"], n_steps=tcfg["n_steps"])
    ds = datagen.build_dataset(gen, seed)
    out = []
    for rec in ds.records:
        sys = rec.system.with_(p_terminal=rec.target)
        out.append((rec, sys, _as_trajectory(sys, rec.target)))
    return out


def _bound_row(index, kind, eps_target, report):
    row = {"instance": index, "perturbation": kind, "eps_target": eps_target}
    row.update(report.as_row())
    return row


def theorem_sweep(tcfg, seed, model=None):
    rows = []
    for rec, sys, p_star in theorem_instances(tcfg, seed):
        rng = np.random.default_rng([seed, rec.index, 0])
        v = rng.standard_normal(sys.n)
        x0 = v / np.linalg.norm(v)
        try:
            constants = analysis.theorem_constants(sys, p_star, x0, probes=tcfg["probes"], rng=rng)
        except NotAdmissible as exc:
            log.warning("instance %d skipped: %s", rec.index, exc)
            continue
        trials = [(kind, eps, analysis.synthetic_perturbation(
                    p_star, eps, kind, rng=np.random.default_rng([seed, rec.index, k])))
                  for eps in tcfg["epsilons"]
                  for k, kind in enumerate(tcfg["perturbations"])]
        if model is not None:
            p_hat = model.predict(rec.encoding[None])[0]
            trials.append(("model", None, _as_trajectory(sys, p_hat)))
        for kind, eps, p_tilde in trials:
            report = copy.deepcopy(constants)
            try:
                report = analysis.validate_bounds(sys, p_star, p_tilde, x0, constants=report)
            except riccati.BlowUp as exc:
                report.notes.append(str(exc))
                report.satisfied_traj = report.satisfied_cost = False
                report.learned_stable = False
            rows.append(_bound_row(rec.index, kind, eps, report))
    return rows


def summarize_sweep(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["perturbation"], r["eps_target"]), []).append(r)
    out = []
    for (kind, eps), rs in groups.items():
        below = [r for r in rs if r["epsilon"] < r["eps_star"]]
        above = [r for r in rs if r["epsilon"] >= r["eps_star"]]
        out.append({
            "perturbation": kind,
            "eps_target": eps,
            "trials": len(rs),
            "traj_bound_rate": float(np.mean([bool(r["satisfied_traj"]) for r in rs])),
            "cost_bound_rate": float(np.mean([bool(r["satisfied_cost"]) for r in rs])),
            "below_eps_star": len(below),
            "stable_rate_below": (float(np.mean([bool(r["satisfied_stability"]) for r in below]))
                                  if below else float("nan")),
            "stable_rate_above": (float(np.mean([bool(r["learned_stable"]) for r in above]))
                                  if above else float("nan")),
            "median_eps_star": float(np.median([r["eps_star"] for r in rs])),
        })
    return out


def cmd_verify_theorem(args, cfg):
    _prepare_out(args.out, cfg)
    model = store.load_model(_model_path(args.model))[0] if args.model else None
    if args.instances is not None:
        cfg["theorem"]["instances"] = args.instances
    rows = theorem_sweep(cfg["theorem"], cfg["seed"], model)
    summary = summarize_sweep(rows)
    analysis.write_csv(os.path.join(args.out, "bounds.csv"), rows)
    analysis.write_csv(os.path.join(args.out, "bounds_summary.csv"), summary)
    unstable = [r["epsilon"] for r in rows if r["learned_stable"] is False]
    onset = min(unstable) if unstable else None
    _write_json(os.path.join(args.out, "stability_onset.json"),
                {"first_unstable_epsilon": onset,
                 "median_eps_star": float(np.median([r["eps_star"] for r in rows])) if rows else None})
    for s in summary:
        print(f"{s['perturbation']:>8} eps={s['eps_target']}: traj {100 * s['traj_bound_rate']:.1f}% "
              f"cost {100 * s['cost_bound_rate']:.1f}% below eps* {s['below_eps_star']}/{s['trials']}")
    bad = [r for r in rows if r["perturbation"] != "model" and not (
        r["satisfied_traj"] and r["satisfied_cost"]
        and (r["satisfied_stability"] is None or r["satisfied_stability"]))]
    if bad:
        raise AcceptanceFailure(f"{len(bad)} synthetic trials violate a bound")


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args, cfg):
    _prepare_out(args.out, cfg)
    model, _ = store.load_model(_model_path(args.model))
    b = cfg["bench"]
    gen = _generator_config(cfg["generator"], count=b["instances"], n_steps=b["n_steps"],
                            split=1.0)
    ds = datagen.build_dataset(gen, cfg["seed"])
    if ds.descriptor.length != model.input_width:
        raise ArchitectureMismatch("benchmark encoding width does not match the model")
    times = ds.times() if model.time_dependent else None
    recs = ds.records
    if ds.kind == datagen.ARE:
        def solver(rec):
            return riccati.solve_are(rec.system)
        name = "newton-kleinman"
    else:
        def solver(rec):
            return riccati.solve_dre(rec.system, b["n_steps"])
        name = "rk4"

    def surrogate(rec):
        return model.predict(rec.encoding[None], times)

    n = ds.metadata["n"]
    with threadpool_limits(limits=1):
        rows = analysis.bench_inference(solver, surrogate, recs, b["repetitions"], b["warmup"],
                                        dimension=n, solver_name=name, model_name="deeponet")
        if b["self_check"]:
            t_ref = analysis.time_calls(surrogate, recs, b["repetitions"], b["warmup"])
            t_again = analysis.time_calls(surrogate, recs, b["repetitions"], b["warmup"])
            rows.append(analysis.BenchRow(n, "deeponet-self", t_again, t_ref / t_again))
    table = [{"dimension": r.dimension, "method": r.method, "time_ms": r.time_ms,
              "speedup": r.speedup} for r in rows]
    analysis.write_csv(os.path.join(args.out, "timing.csv"), table)
    for r in table:
        print(f"n={r['dimension']} {r['method']:>16}: {r['time_ms']:.4f} ms  x{r['speedup']:.1f}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "verify-theorem": cmd_verify_theorem,
    "bench": cmd_bench,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="riccati-opnet",
                                     description="Riccati solvers and operator-learning surrogates")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="BLAS thread count; 1 gives bit-reproducible runs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=needs_config, default=None,
                       help=f"preset name ({', '.join(sorted(config.PRESETS))}) or JSON file")
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = add("gen-data", "generate and solve a dataset")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, default=None, help="override generator.count")
    p.add_argument("--workers", type=int, default=1, help="generation processes")
    p = add("train", "train a surrogate")
    p.add_argument("--data", required=True)
    p.add_argument("--core", default=None, help="frozen core checkpoint for progressive models")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p = add("eval", "evaluate a checkpoint on a dataset's test split", needs_config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p = add("verify-theorem", "Monte-Carlo check of the perturbation bounds")
    p.add_argument("--model", default=None, help="add model-induced perturbations")
    p.add_argument("--instances", type=int, default=None)
    p = add("bench", "time classical solves against the surrogate")
    p.add_argument("--model", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = config.load(args.config) if args.config else config.resolve({})
        with threadpool_limits(limits=args.threads):
            COMMANDS[args.command](args, cfg)
    except (ConfigError, SchemaVersionMismatch, CorruptRecord, ChecksumMismatch,
            ArchitectureMismatch, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RiccatiOpnetError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AcceptanceFailure as exc:
        print(f"acceptance failure: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
