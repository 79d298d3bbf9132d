"""Command-line driver for the flowvar experiments.

Subcommands cover the pipeline end to end: train velocity models, evaluate
the closed-form and baseline uncertainty estimators, rerun the analytic
identity check, trace uncertainty along a sampled trajectory, run the
corruption consistency protocol, sweep probe counts, and summarize cost.

Exit codes: 0 success, 1 validation problem (bad flags, bad config, missing
model), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .baselines import BaselineError, ensemble_uq, mc_dropout_uq
from .config import ConfigError, ExperimentConfig, load_config
from .data import DataError
from .metrics import (MetricsError, consistency_protocol, dropout_method,
                      ensemble_method, one_step_method, tweedie_method)
from .models import (EvalCounter, ModelError, ModelField, MlpVelocity,
                     analytic_handle, load_model, save_model)
from .numerics import NumericsError, RngState, draw_rademacher
from .oracle import OracleError, gmm_posterior
from .reporting import (CostLedger, ReportError, cost_report, write_csv,
                        write_uq_map)
from .sampler import SamplerError, euler_generate
from .training import TrainingError, train, train_ensemble
from .uq import UqError, cov_closed_form, one_step_cov, prior_baseline, \
    shift_time_grid, trajectory_uq

__all__ = ["main"]

N_EVAL_POINTS = 16
TRAJ_GRID = (0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.98)
TRAJ_STEPS = 1000


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="flowvar", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="gmm2d",
                        help="preset name or config file path")
    common.add_argument("--seed", type=int, default=None,
                        help="override the master seed")
    common.add_argument("--out", default=None,
                        help="override the output directory")

    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_train = sub.add_parser("train", parents=[common],
                             help="train velocity models")
    p_train.add_argument("variant", choices=("fm", "one-step", "ensemble"))

    p_uq = sub.add_parser("uq", parents=[common],
                          help="evaluate an uncertainty method")
    p_uq.add_argument("method", choices=("tweedie", "onestep", "ensemble",
                                         "mc-dropout"))
    p_uq.add_argument("--t", type=float, default=None,
                      help="single flow time instead of the config grid")

    sub.add_parser("oracle-check", parents=[common],
                   help="closed-form covariance vs analytic mixture posterior")
    sub.add_parser("traj", parents=[common],
                   help="uncertainty along a sampled trajectory")

    p_cons = sub.add_parser("consistency", parents=[common],
                            help="corruption consistency protocol")
    p_cons.add_argument("--n", type=int, default=64, help="samples per cell")
    p_cons.add_argument("--noise", type=float, default=0.5,
                        help="corruption mixing level")

    p_abl = sub.add_parser("ablate-probes", parents=[common],
                           help="probe-count sweep at fixed state")
    p_abl.add_argument("--S", default="4,16,64,256",
                       help="comma-separated probe counts")
    p_abl.add_argument("--replicates", type=int, default=8)

    sub.add_parser("cost", parents=[common],
                   help="instrumented cost comparison across methods")
    return parser


def _load(args) -> ExperimentConfig:
    import dataclasses

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out=Path(args.out))
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg


def _model_path(cfg: ExperimentConfig, name: str) -> Path:
    return cfg.out / f"model_{name}.fvar"


def _require_model(cfg: ExperimentConfig, name: str) -> MlpVelocity:
    path = _model_path(cfg, name)
    if not path.exists():
        raise ConfigError(f"model not found: {path}")
    return load_model(path)


def _master(cfg: ExperimentConfig) -> RngState:
    return RngState(cfg.seed)


# ---- train ------------------------------------------------------------------


def _train_one(cfg, task, name, objective, init_key, train_key,
               dropout=None):
    arch = cfg.build_arch(task.dim, dropout=dropout)
    master = _master(cfg)
    model = MlpVelocity.init(arch, master.split(init_key))
    report = train(model, task,
                   cfg.train_config(seed=master.split(train_key),
                                    objective=objective))
    save_model(_model_path(cfg, name), model)
    return model, report

def _report_rows(label, report):
    rows = [(label, 0, report.initial_loss)]
    rows += [(label, e + 1, loss) for e, loss in enumerate(report.epoch_losses)]
    return rows


def cmd_train(args, cfg: ExperimentConfig) -> int:
    task = cfg.build_task()
    rows, summary = [], []
    if args.variant == "fm":
        _, rep = _train_one(cfg, task, "fm", "fm", 1, 2)
        rows += _report_rows("fm", rep)
        summary.append(f"fm: {rep.seconds:.2f}s, final loss "
                       f"{rep.epoch_losses[-1]:.6g}")
        if "mc-dropout" in cfg.methods:
            _, rep = _train_one(cfg, task, "dropout", "fm", 5, 6,
                                dropout=cfg.dropout_rate)
            rows += _report_rows("fm-dropout", rep)
            summary.append(f"fm-dropout: {rep.seconds:.2f}s, final loss "
                           f"{rep.epoch_losses[-1]:.6g}")
    elif args.variant == "one-step":
        _, rep = _train_one(cfg, task, "onestep", "one-step", 3, 4)
        rows += _report_rows("one-step", rep)
        summary.append(f"one-step: {rep.seconds:.2f}s, final loss "
                       f"{rep.epoch_losses[-1]:.6g}")
    else:
        models, reports = train_ensemble(
            cfg.ensemble_members, cfg.build_arch(task.dim), task,
            cfg.train_config(seed=_master(cfg).split(7)))
        for i, (m, rep) in enumerate(zip(models, reports)):
            save_model(_model_path(cfg, f"member_{i}"), m)
            rows += _report_rows(f"member{i}", rep)
            summary.append(f"member{i}: {rep.seconds:.2f}s, final loss "
                           f"{rep.epoch_losses[-1]:.6g}")
    tag = args.variant.replace("-", "")
    write_csv(cfg.out / f"train_{tag}.csv", "train",
              ["method", "epoch", "loss"], rows)
    (cfg.out / f"train_{tag}_summary.txt").write_text(
        "\n".join(summary) + "\n", encoding="utf-8")
    for line in summary:
        print(line)
    return 0


# ---- uq ---------------------------------------------------------------------


def _eval_states(cfg, task, t_grid):
    x0s, x1s = task.sample_pairs(_master(cfg).split(8), N_EVAL_POINTS)
    return x0s, x1s, {t: t * x1s + (1.0 - t) * x0s for t in t_grid}


def _maybe_map(cfg, task, values, path):
    side = getattr(task, "side", None)
    if side is None:
        return "", ""
    lo, hi = write_uq_map(values, side, "per-frame", path)
    return lo, hi


def cmd_uq(args, cfg: ExperimentConfig) -> int:
    task = cfg.build_task()
    if args.t is not None and not 0.0 < args.t < 1.0:
        raise ConfigError("--t must lie in (0, 1)")
    t_grid = (args.t,) if args.t is not None else cfg.t_grid
    x0s, _, states = _eval_states(cfg, task, t_grid)
    master = _master(cfg)
    rows = []

    def probe_rng(ti, i):
        return master.split(9).split(ti).split(i)

    if args.method == "tweedie":
        field = ModelField(_require_model(cfg, "fm"))
        for ti, t in enumerate(t_grid):
            ests = []
            for i in range(N_EVAL_POINTS):
                probes = draw_rademacher(probe_rng(ti, i), task.dim, cfg.probes)
                ests.append(cov_closed_form(field, states[t][i], t, probes))
            lo, hi = _maybe_map(cfg, task, ests[0].diag,
                                cfg.out / f"uq_tweedie_t{ti}.pgm")
            for i, est in enumerate(ests):
                rows.append(("tweedie-fm", t, cfg.seed, cfg.probes, i, est.u,
                             int(est.floored), lo if i == 0 else "",
                             hi if i == 0 else ""))
            print(f"t={t:g}: mean U = {np.mean([e.u for e in ests]):.6g}")
    elif args.method == "onestep":
        field = ModelField(_require_model(cfg, "onestep"))
        ests = []
        for i in range(N_EVAL_POINTS):
            probes = draw_rademacher(probe_rng(0, i), task.dim, cfg.probes)
            ests.append(one_step_cov(field, x0s[i], cfg.epsilon, probes))
        lo, hi = _maybe_map(cfg, task, ests[0].diag, cfg.out / "uq_onestep.pgm")
        for i, est in enumerate(ests):
            rows.append(("tweedie-onestep", est.t, cfg.seed, cfg.probes, i,
                         est.u, int(est.floored), lo if i == 0 else "",
                         hi if i == 0 else ""))
        print(f"eps={cfg.epsilon:g}: mean U = {np.mean([e.u for e in ests]):.6g}")
    elif args.method == "ensemble":
        members = [ModelField(_require_model(cfg, f"member_{i}"))
                   for i in range(cfg.ensemble_members)]
        for ti, t in enumerate(t_grid):
            ests = [ensemble_uq(members, states[t][i], t)
                    for i in range(N_EVAL_POINTS)]
            lo, hi = _maybe_map(cfg, task, ests[0].variance,
                                cfg.out / f"uq_ensemble_t{ti}.pgm")
            for i, est in enumerate(ests):
                rows.append(("ensemble", t, cfg.seed, est.count, i, est.scalar,
                             0, lo if i == 0 else "", hi if i == 0 else ""))
            print(f"t={t:g}: mean var sum = "
                  f"{np.mean([e.scalar for e in ests]):.6g}")
    else:
        model = _require_model(cfg, "dropout")
        if model.arch.dropout <= 0.0:
            raise ConfigError("saved model was trained without dropout")
        for ti, t in enumerate(t_grid):
            ests = [mc_dropout_uq(model, states[t][i], t, cfg.dropout_passes,
                                  probe_rng(ti, i))
                    for i in range(N_EVAL_POINTS)]
            lo, hi = _maybe_map(cfg, task, ests[0].variance,
                                cfg.out / f"uq_mc-dropout_t{ti}.pgm")
            for i, est in enumerate(ests):
                rows.append(("mc-dropout", t, cfg.seed, est.count, i,
                             est.scalar, 0, lo if i == 0 else "",
                             hi if i == 0 else ""))
            print(f"t={t:g}: mean var sum = "
                  f"{np.mean([e.scalar for e in ests]):.6g}")

    write_csv(cfg.out / f"uq_{args.method}.csv", "uq",
              ["method", "t", "seed", "S", "point", "u", "floored",
               "map_lo", "map_hi"], rows)
    return 0


# ---- oracle-check -----------------------------------------------------------


def cmd_oracle_check(args, cfg: ExperimentConfig) -> int:
    task = cfg.build_task()
    if not hasattr(task, "spec"):
        raise ConfigError("oracle-check needs a gmm task")
    spec = task.spec
    field = analytic_handle(spec)
    master = _master(cfg)
    _, _, states = _eval_states(cfg, task, cfg.t_grid)
    worst = 0.0
    for ti, t in enumerate(cfg.t_grid):
        for i in range(N_EVAL_POINTS):
            xt = states[t][i]
            probes = draw_rademacher(master.split(9).split(ti).split(i),
                                     spec.dim, cfg.probes)
            est = cov_closed_form(field, xt, t, probes, materialize_full=True)
            ref = gmm_posterior(spec, xt, t).covariance
            err = np.linalg.norm(est.full - ref) / np.linalg.norm(ref)
            worst = max(worst, err)
    print(f"max relative Frobenius error: {worst:.3e}")
    if worst <= 1e-5:
        print("PASS")
        return 0
    print("FAIL")
    return 2


# ---- traj -------------------------------------------------------------------


def cmd_traj(args, cfg: ExperimentConfig) -> int:
    task = cfg.build_task()
    model = _require_model(cfg, "fm")
    field = ModelField(model)
    master = _master(cfg)
    x0 = master.split(10).generator().standard_normal(task.dim)
    traj = euler_generate(field, x0, TRAJ_STEPS)
    grid = shift_time_grid(TRAJ_GRID)
    idx = [int(np.searchsorted(traj.times, t - 1e-12)) for t in grid]
    node_times = [float(traj.times[k]) for k in idx]
    series = trajectory_uq(field, [traj.states[k] for k in idx], node_times,
                           cfg.probes, master.split(11))
    rows = []
    for k, (t, est) in enumerate(series.entries):
        lo, hi = _maybe_map(cfg, task, est.diag, cfg.out / f"traj_map_{k}.pgm")
        prior = prior_baseline(t, task.dim)
        rows.append(("tweedie-fm", t, cfg.seed, cfg.probes, est.u, prior,
                     est.u / prior, int(est.floored), lo, hi))
        print(f"t={t:g}: U = {est.u:.6g} (prior {prior:.6g})")
    write_csv(cfg.out / "traj.csv", "traj",
              ["method", "t", "seed", "S", "u", "u_prior", "ratio", "floored",
               "map_lo", "map_hi"], rows)
    return 0


# ---- consistency ------------------------------------------------------------


def _method_suite(cfg, task):
    """Build the configured method callables, loading models as needed."""
    methods, s_col = {}, {}
    for name in cfg.methods:
        if name == "tweedie-fm":
            field = ModelField(_require_model(cfg, "fm"))
            methods[name] = tweedie_method(field, cfg.probes)
            s_col[name] = cfg.probes
        elif name == "tweedie-onestep":
            field = ModelField(_require_model(cfg, "onestep"))
            methods[name] = one_step_method(field, cfg.probes, cfg.epsilon)
            s_col[name] = cfg.probes
        elif name == "ensemble":
            members = [ModelField(_require_model(cfg, f"member_{i}"))
                       for i in range(cfg.ensemble_members)]
            methods[name] = ensemble_method(members)
            s_col[name] = cfg.ensemble_members
        elif name == "mc-dropout":
            model = _require_model(cfg, "dropout")
            if model.arch.dropout <= 0.0:
                raise ConfigError("saved model was trained without dropout")
            methods[name] = dropout_method(model, cfg.dropout_passes)
            s_col[name] = cfg.dropout_passes
    return methods, s_col


def cmd_consistency(args, cfg: ExperimentConfig) -> int:
    task = cfg.build_task()
    reference = ModelField(_require_model(cfg, "fm"))
    methods, s_col = _method_suite(cfg, task)
    results = consistency_protocol(reference, methods, task, cfg.t_grid,
                                   args.noise, _master(cfg).split(12),
                                   n_samples=args.n)
    fmt = lambda v: "" if v is None else v
    rows = [(r.method, r.t, cfg.seed, s_col[r.method],
             fmt(r.pixel_spearman), fmt(r.hitrate), fmt(r.sample_spearman),
             r.n_samples, r.n_missing) for r in results]
    write_csv(cfg.out / "consistency.csv", "consistency",
              ["method", "t", "seed", "S", "pixel_spearman", "hitrate",
               "sample_spearman", "n_samples", "n_missing"], rows)
    for r in results:
        ps = "n/a" if r.sample_spearman is None else f"{r.sample_spearman:.3f}"
        print(f"t={r.t:g} {r.method}: sample spearman {ps}")
    return 0


# ---- ablate-probes ----------------------------------------------------------


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    task = cfg.build_task()
    field = ModelField(_require_model(cfg, "fm"))
    try:
        s_values = [int(tok) for tok in args.S.split(",") if tok]
    except ValueError as ex:
        raise ConfigError(f"bad --S list: {args.S!r}") from ex
    if not s_values or min(s_values) < 1:
        raise ConfigError("probe counts must be positive")
    if args.replicates < 1:
        raise ConfigError("need at least one replicate")
    master = _master(cfg)
    t = 0.5
    x0s, x1s = task.sample_pairs(master.split(13).split(0), 1)
    xt = (t * x1s + (1.0 - t) * x0s)[0]
    rows = []
    for si, s in enumerate(s_values):
        us = []
        for r in range(args.replicates):
            probes = draw_rademacher(master.split(13).split(1).split(si).split(r),
                                     task.dim, s)
            est = cov_closed_form(field, xt, t, probes)
            rows.append(("tweedie-fm", t, cfg.seed, s, r, est.u,
                         int(est.floored)))
            us.append(est.u)
        print(f"S={s}: mean U {np.mean(us):.6g}, spread {np.std(us):.3g}")
    write_csv(cfg.out / "ablate.csv", "ablate",
              ["method", "t", "seed", "S", "replicate", "u", "floored"], rows)
    return 0


# ---- cost -------------------------------------------------------------------


def cmd_cost(args, cfg: ExperimentConfig) -> int:
    """Train and evaluate each configured method with instrumentation.

    Training cost counts one forward pass per seen sample (backward passes
    ride along with a constant factor and are omitted from counts; wall-clock
    includes them either way).
    """
    task = cfg.build_task()
    ledger = CostLedger()
    master = _master(cfg)
    train_equiv = cfg.training.epochs * cfg.training.pairs_per_epoch
    t = 0.5
    x0s, x1s = task.sample_pairs(master.split(14), 4)
    xts = t * x1s + (1.0 - t) * x0s

    def infer(method, fn):
        counter = EvalCounter()
        t0 = time.perf_counter()
        fn(counter)
        ledger.add_inference(method, time.perf_counter() - t0,
                             counter.forward_equivalents)

    for name in cfg.methods:
        if name == "tweedie-fm":
            arch = cfg.build_arch(task.dim)
            model = MlpVelocity.init(arch, master.split(1))
            rep = train(model, task, cfg.train_config(seed=master.split(2)))
            ledger.add_training(name, rep.seconds, train_equiv)

            def run(counter, model=model):
                field = ModelField(model, counter)
                for i, xt in enumerate(xts):
                    probes = draw_rademacher(master.split(15).split(i),
                                             task.dim, cfg.probes)
                    cov_closed_form(field, xt, t, probes)

            infer(name, run)
        elif name == "tweedie-onestep":
            arch = cfg.build_arch(task.dim)
            model = MlpVelocity.init(arch, master.split(3))
            rep = train(model, task,
                        cfg.train_config(seed=master.split(4),
                                         objective="one-step"))
            ledger.add_training(name, rep.seconds, train_equiv)

            def run(counter, model=model):
                field = ModelField(model, counter)
                for i, x0 in enumerate(x0s):
                    probes = draw_rademacher(master.split(16).split(i),
                                             task.dim, cfg.probes)
                    one_step_cov(field, x0, cfg.epsilon, probes)

            infer(name, run)
        elif name == "ensemble":
            models, reports = train_ensemble(
                cfg.ensemble_members, cfg.build_arch(task.dim), task,
                cfg.train_config(seed=master.split(7)))
            ledger.add_training(name, sum(r.seconds for r in reports),
                                cfg.ensemble_members * train_equiv)

            def run(counter, models=models):
                members = [ModelField(m, counter) for m in models]
                for xt in xts:
                    ensemble_uq(members, xt, t)

            infer(name, run)
        elif name == "mc-dropout":
            arch = cfg.build_arch(task.dim, dropout=cfg.dropout_rate)
            model = MlpVelocity.init(arch, master.split(5))
            rep = train(model, task, cfg.train_config(seed=master.split(6)))
            ledger.add_training(name, rep.seconds, train_equiv)

            def run(counter, model=model):
                field = ModelField(model, counter)
                for i, xt in enumerate(xts):
                    mc_dropout_uq(field, xt, t, cfg.dropout_passes,
                                  master.split(17).split(i))

            infer(name, run)

    rows = cost_report(ledger, cfg.out)
    for method, _, _, total, ratio in rows:
        print(f"{method}: {total} forward-equivalents "
              f"({ratio:.3g}x reference)")
    return 0


# ---- entry point ------------------------------------------------------------

_COMMANDS = {
    "train": cmd_train,
    "uq": cmd_uq,
    "oracle-check": cmd_oracle_check,
    "traj": cmd_traj,
    "consistency": cmd_consistency,
    "ablate-probes": cmd_ablate,
    "cost": cmd_cost,
}

_VALIDATION_ERRORS = (ConfigError, DataError, ReportError)
_RUNTIME_ERRORS = (TrainingError, SamplerError, UqError, OracleError,
                   ModelError, NumericsError, BaselineError, MetricsError)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load(args)
        return _COMMANDS[args.command](args, cfg)
    except _UsageError:
        return 1
    except _VALIDATION_ERRORS as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as ex:
        print(f"runtime failure: {ex}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
