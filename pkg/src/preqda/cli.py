"""Batch experiment runner.

Subcommands: simulate (truth data generation), assimilate (episodic SMC with
checkpointing and resume), enkf (filter baseline with per-episode metrics),
evaluate (metrics from a checkpoint), plot (three-panel metric charts).

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import diagnostics, enkf, lorenz96, smc
from .config import ConfigError, ExperimentConfig
from .container import read_container, write_container
from .scoring import EnergyScoreLoss

FORMAT_VERSION = 1
METRIC_COLUMNS = ["episode_index", "calibration_error", "nrmse", "r2"]


class UsageError(Exception):
    pass


def _scalar(arr) -> float:
    return np.asarray(arr).reshape(-1)[0]


@contextmanager
def _dir_lock(out_dir: Path):
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{out_dir} is locked by another run (remove {lock} if stale)")
    try:
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _digest_int(cfg: ExperimentConfig) -> int:
    return int(cfg.digest(), 16) & 0x7FFFFFFFFFFFFFFF


def _refuse_overwrite(path: Path, force: bool):
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _write_metrics_csv(path: Path, rows: list[list[float]], digest: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# preqda format={FORMAT_VERSION} config={digest}\n")
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def _read_metrics_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = [[float(v) for v in rec] for rec in reader]
    data = np.asarray(rows) if rows else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def _load_series(path: Path) -> lorenz96.TimeSeries:
    path = Path(path)
    if path.suffix == ".pqda":
        arrays = read_container(path)
        return lorenz96.TimeSeries(arrays["observations"],
                                   float(_scalar(arrays["delta_t"])),
                                   int(_scalar(arrays["train_end"])))
    return lorenz96.load_csv(path)


# -- subcommands --------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "data.csv"
    bin_path = out_dir / "data.pqda"
    _refuse_overwrite(csv_path, args.force)
    _refuse_overwrite(bin_path, args.force)
    with _dir_lock(out_dir):
        series = lorenz96.generate_dataset(cfg.lorenz_params(), cfg.sim_config())
        lorenz96.save_csv(series, csv_path,
                          comment=f"preqda format={FORMAT_VERSION} config={cfg.digest()}")
        write_container(bin_path, {
            "observations": series.observations,
            "delta_t": np.float64(series.delta_t),
            "train_end": np.int64(series.train_end),
            "config_digest": np.int64(_digest_int(cfg)),
        })
        (out_dir / "config.txt").write_text(cfg.dump())
    print(f"wrote {csv_path} ({len(series.observations)} rows, "
          f"train_end={series.train_end})")
    return 0


def _evaluation_range(mode: str, episode: int, tau: int, window: int,
                      series: lorenz96.TimeSeries, test_len: int) -> tuple[int, int]:
    T = len(series.observations)
    if mode == "holdout":
        lo = max(series.train_end, window)
        hi = min(T - 1, series.train_end + test_len - 1)
    else:  # next-episode
        lo = max(episode * tau, window)
        hi = min(T - 1, (episode + 1) * tau - 1)
    if hi - lo < 1:
        raise UsageError(f"evaluation range [{lo}, {hi}] has fewer than 2 records")
    return lo, hi


def cmd_assimilate(args) -> int:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.values["seed"] = args.seed
    series = _load_series(args.data)
    spec = cfg.network_spec()
    loss = EnergyScoreLoss(spec, series.observations, cfg.score_config())
    smc_cfg = cfg.smc_config(loss.dim)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.pqda"
    metrics_path = out_dir / "metrics.csv"
    temper_path = out_dir / "tempering.csv"
    digest = cfg.digest()
    seed = cfg.seed
    limit = cfg["smc.n_episodes"] or None

    start = None
    metric_rows: list[list[float]] = []
    temper_rows: list[list[float]] = []
    if args.resume and ckpt_path.exists():
        arrays = read_container(ckpt_path)
        if int(_scalar(arrays["config_digest"])) != _digest_int(cfg):
            raise UsageError("checkpoint was produced with a different configuration")
        start = smc.ParticleEnsemble(arrays["particles"], arrays["log_weights"],
                                     int(_scalar(arrays["episode_index"])))
        metric_rows = arrays["metrics"].reshape(-1, 4).tolist()
        temper_rows = arrays["tempering"].reshape(-1, 4).tolist()
    else:
        _refuse_overwrite(ckpt_path, args.force)

    def save_checkpoint(ensemble: smc.ParticleEnsemble):
        write_container(ckpt_path, {
            "particles": ensemble.particles,
            "log_weights": ensemble.log_weights,
            "episode_index": np.int64(ensemble.episode_index),
            "seed": np.int64(seed),
            "config_digest": np.int64(_digest_int(cfg)),
            "metrics": np.asarray(metric_rows, dtype=np.float64).reshape(-1, 4),
            "tempering": np.asarray(temper_rows, dtype=np.float64).reshape(-1, 4),
        })
        _write_metrics_csv(metrics_path, metric_rows, digest)
        with open(temper_path, "w", newline="") as fh:
            fh.write(f"# preqda format={FORMAT_VERSION} config={digest}\n")
            writer = csv.writer(fh)
            writer.writerow(["episode_index", "step", "alpha", "cess"])
            for row in temper_rows:
                writer.writerow([int(row[0]), int(row[1]),
                                 repr(float(row[2])), repr(float(row[3]))])

    with _dir_lock(out_dir):
        if start is None:
            start = smc.initial_ensemble(smc_cfg, seed)
            save_checkpoint(start)          # prior checkpoint, abort-safe
        runner = smc.run_assimilation(smc_cfg, loss, series.train_end, seed,
                                      window=spec.window, start=start,
                                      n_episodes=limit)
        for result in runner:
            lo, hi = _evaluation_range(args.test_range, result.episode_index,
                                       smc_cfg.tau, spec.window, series,
                                       cfg["diagnostics.test_len"])
            report = diagnostics.evaluate_posterior(
                result.ensemble, spec, series.observations, lo, hi,
                cfg["diagnostics.m_pred"], (seed, result.episode_index, 99))
            metric_rows.append([float(result.episode_index), report.calibration_error,
                                report.nrmse, report.r2])
            for s, (a, c) in enumerate(zip(result.record.alphas,
                                           result.record.cess_values)):
                temper_rows.append([float(result.episode_index), float(s), a, c])
            save_checkpoint(result.ensemble)
            print(f"episode {result.episode_index}: calibration_error="
                  f"{report.calibration_error:.4f} nrmse={report.nrmse:.4f} "
                  f"r2={report.r2:.4f} (ladder length {len(result.record.alphas)})")
    return 0


def cmd_enkf(args) -> int:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.values["seed"] = args.seed
    series = _load_series(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "enkf_metrics.csv"
    _refuse_overwrite(metrics_path, args.force)
    tau = cfg["smc.tau"]
    window = cfg["network.window"]
    n_episodes = cfg["smc.n_episodes"] or series.train_end // tau
    n_episodes = min(n_episodes, series.train_end // tau)
    rows: list[list[float]] = []
    with _dir_lock(out_dir):
        if n_episodes > 0:
            upto = min(len(series.observations), (n_episodes + 1) * tau)
            predictive = enkf.run_filter(series.observations[:upto],
                                         cfg.enkf_config(), cfg.seed)
            for e in range(1, n_episodes + 1):
                lo, hi = _evaluation_range("next-episode", e, tau, window, series,
                                           cfg["diagnostics.test_len"])
                hi = min(hi, upto - 1)
                report = diagnostics.metrics_from_draws(
                    predictive[lo:hi + 1], series.observations[lo:hi + 1],
                    episode_index=e, evaluation_range=(lo, hi))
                rows.append([float(e), report.calibration_error, report.nrmse,
                             report.r2])
        _write_metrics_csv(metrics_path, rows, cfg.digest())
    print(f"wrote {metrics_path} ({len(rows)} episodes)")
    return 0


def cmd_evaluate(args) -> int:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    series = _load_series(args.data)
    arrays = read_container(args.checkpoint)
    ensemble = smc.ParticleEnsemble(arrays["particles"], arrays["log_weights"],
                                    int(_scalar(arrays["episode_index"])))
    spec = cfg.network_spec()
    lo, hi = _evaluation_range(args.test_range, ensemble.episode_index,
                               cfg["smc.tau"], spec.window, series,
                               cfg["diagnostics.test_len"])
    report = diagnostics.evaluate_posterior(ensemble, spec, series.observations,
                                            lo, hi, cfg["diagnostics.m_pred"],
                                            (cfg.seed, ensemble.episode_index, 99))
    print(f"episode={ensemble.episode_index} range=[{lo},{hi}] "
          f"calibration_error={report.calibration_error:.6f} "
          f"nrmse={report.nrmse:.6f} r2={report.r2:.6f}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = [("calibration_error", "Calibration error"),
              ("nrmse", "NRMSE"), ("r2", "$R^2$")]
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    for path in args.metrics:
        data = _read_metrics_csv(Path(path))
        for col, _ in panels:
            if col not in data:
                raise UsageError(f"{path}: missing column {col!r}")
        label = Path(path).stem
        for ax, (col, title) in zip(axes, panels):
            ax.plot(data["episode_index"], data[col], marker="o", ms=3, label=label)
            ax.set_title(title)
            ax.set_xlabel("episode")
    if len(args.metrics) > 1:
        axes[0].legend()
    fig.tight_layout()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)
    print(f"wrote {out}")
    return 0


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preqda")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--force", action="store_true")
        if data:
            p.add_argument("--data", required=True,
                           help="data.pqda container or data.csv")

    p = sub.add_parser("simulate", help="generate the truth dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("assimilate", help="run episodic SMC")
    common(p, data=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--test-range", choices=["next-episode", "holdout"],
                   default="holdout")
    p.set_defaults(func=cmd_assimilate)

    p = sub.add_parser("enkf", help="run the EnKF baseline")
    common(p, data=True)
    p.set_defaults(func=cmd_enkf)

    p = sub.add_parser("evaluate", help="metrics from a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-range", choices=["next-episode", "holdout"],
                   default="holdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render three-panel metric charts")
    p.add_argument("metrics", nargs="+", help="metrics CSV files")
    p.add_argument("--out", required=True, help="output SVG/PDF path")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, lorenz96.BlowUpError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
