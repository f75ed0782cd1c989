"""Experiment runner CLI.

Subcommands::

  fedledger run --config exp.cfg [--epsilon ... --rounds ... --clients ...
                                  --seed ... --delta ... --out DIR --workers N]
  fedledger plot-data --in RUNDIR --out PLOTDIR
  fedledger verify-chain --in chain_eps8_seed1.txt

Exit codes: 0 success, 1 configuration error, 2 runtime failure.

Config files are flat ``key = value`` text; ``#`` starts a comment line and
list values are comma-separated. Command-line flags override file values.
Every (epsilon, seed) sweep entry owns its ledger, content store, and
accountant, and writes one metrics CSV (columns: round, epsilon_target,
seed, mean_accuracy, mean_loss, epsilon_spent, gas_total, mean_latency_s,
store_total_bytes; gas_total is the cumulative gas of client update
transactions) plus one chain export. All floats are printed with 9
significant digits and files are written atomically (temp + rename), so
repeated runs of one config are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from .cas import ContentStore
from .data import Dataset, generate_synthetic, load_csv, partition, train_test_split
from .federation import MetricsRecord, TrainingConfig, run_training
from .ledger import Ledger, LedgerConfig, verify_exported_chain
from .privacy import InfeasiblePrivacyBudgetError, PrivacySpec


class ConfigError(ValueError):
    pass


METRICS_COLUMNS = (
    "round",
    "epsilon_target",
    "seed",
    "mean_accuracy",
    "mean_loss",
    "epsilon_spent",
    "gas_total",
    "mean_latency_s",
    "store_total_bytes",
)

SUMMARY_COLUMNS = (
    "epsilon",
    "num_seeds",
    "final_round",
    "mean_accuracy",
    "mean_loss",
    "mean_epsilon_spent",
    "status",
)


@dataclass(frozen=True)
class ExperimentConfig:
    # data
    samples: int = 5000
    classes: int = 10
    input_dim: int = 16
    class_separation: float = 3.0
    test_fraction: float = 0.2
    data_csv: str = ""
    # partition
    clients: int = 10
    dirichlet_beta: float = 0.5
    # training
    rounds: int = 15
    local_epochs: int = 3
    learning_rate: float = 1e-3
    lambda1: float = 0.05
    lambda2: float = 0.05
    tau: float = 0.3
    batch_size: int = 32
    aggregation: str = "uniform"
    hidden_dim: int = 32
    fisher_max_samples: int = 256
    # privacy
    epsilon_sweep: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    delta: float | None = None  # None means 1 / clients
    clip_c: float = 0.5
    noise_split_rho: float = 2.0
    # ledger
    base_gas: int = 22_152
    gas_price_gwei: float = 20.0
    latency_mean_s: float = 6.0
    latency_jitter_s: float = 1.0
    # run
    seeds: tuple[int, ...] = (1,)
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.epsilon_sweep or any(e <= 0 for e in self.epsilon_sweep):
            raise ConfigError("epsilon_sweep must be non-empty, all values > 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must be in (0, 1)")
        if self.clients < 1:
            raise ConfigError("clients must be >= 1")

    @property
    def effective_delta(self) -> float:
        return self.delta if self.delta is not None else 1.0 / self.clients

    def training_config(self, seed: int) -> TrainingConfig:
        return TrainingConfig(
            global_rounds=self.rounds,
            local_epochs=self.local_epochs,
            learning_rate=self.learning_rate,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            tau=self.tau,
            batch_size=self.batch_size,
            aggregation=self.aggregation,
            seed=seed,
            hidden_dim=self.hidden_dim,
            fisher_max_samples=self.fisher_max_samples,
        )

    def privacy_spec(self, epsilon: float) -> PrivacySpec:
        return PrivacySpec(
            epsilon_target=epsilon,
            delta=self.effective_delta,
            clip_c=self.clip_c,
            noise_split_rho=self.noise_split_rho,
            rounds=self.rounds,
        )

    def ledger_config(self, seed: int) -> LedgerConfig:
        return LedgerConfig(
            base_gas=self.base_gas,
            gas_price_gwei=self.gas_price_gwei,
            latency_mean_s=self.latency_mean_s,
            latency_jitter_s=self.latency_jitter_s,
            seed=seed,
        )


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in raw.split(",") if v.strip())


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in raw.split(",") if v.strip())


def _optional_delta(raw: str):
    return None if raw.lower() in ("", "none", "auto") else float(raw)


_CONVERTERS = {
    "samples": int, "classes": int, "input_dim": int, "class_separation": float,
    "test_fraction": float, "data_csv": str,
    "clients": int, "dirichlet_beta": float,
    "rounds": int, "local_epochs": int, "learning_rate": float,
    "lambda1": float, "lambda2": float, "tau": float, "batch_size": int,
    "aggregation": str, "hidden_dim": int, "fisher_max_samples": int,
    "epsilon_sweep": _float_list, "delta": _optional_delta,
    "clip_c": float, "noise_split_rho": float,
    "base_gas": int, "gas_price_gwei": float,
    "latency_mean_s": float, "latency_jitter_s": float,
    "seeds": _int_list, "output_dir": str,
}

assert set(_CONVERTERS) == {f.name for f in fields(ExperimentConfig)}


def parse_config_file(path: str | Path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONVERTERS:
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CONVERTERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    return values


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    try:
        values = parse_config_file(args.config) if args.config else {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    if args.epsilon:
        values["epsilon_sweep"] = tuple(args.epsilon)
    if args.rounds is not None:
        values["rounds"] = args.rounds
    if args.clients is not None:
        values["clients"] = args.clients
    if args.seed:
        values["seeds"] = tuple(args.seed)
    if args.delta is not None:
        values["delta"] = args.delta
    if args.out is not None:
        values["output_dir"] = args.out
    try:
        return ExperimentConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def metrics_filename(epsilon: float, seed: int) -> str:
    return f"metrics_eps{epsilon:g}_seed{seed}.csv"


def chain_filename(epsilon: float, seed: int) -> str:
    return f"chain_eps{epsilon:g}_seed{seed}.txt"


def _metrics_csv(rows: list[MetricsRecord]) -> str:
    lines = [",".join(METRICS_COLUMNS)]
    for rec in rows:
        lines.append(",".join(_fmt(getattr(rec, col)) for col in METRICS_COLUMNS))
    return "\n".join(lines) + "\n"


def _load_dataset(config: ExperimentConfig, seed: int) -> Dataset:
    if config.data_csv:
        return load_csv(config.data_csv)
    return generate_synthetic(
        config.samples, config.classes, config.input_dim, config.class_separation, seed
    )


def _run_entry(config: ExperimentConfig, epsilon: float, seed: int, out: Path):
    """One sweep entry; returns the final-round metrics or an error label."""
    dataset = _load_dataset(config, seed)
    train, test = train_test_split(dataset, config.test_fraction, seed)
    shards = partition(train, config.clients, config.dirichlet_beta, seed)
    ledger = Ledger(config.ledger_config(seed))
    store = ContentStore()
    try:
        rounds = run_training(
            train,
            shards,
            config.privacy_spec(epsilon),
            config.training_config(seed),
            ledger,
            store,
            eval_dataset=test,
        )
    except InfeasiblePrivacyBudgetError as exc:
        return ("infeasible-budget", str(exc))
    _atomic_write(out / metrics_filename(epsilon, seed), _metrics_csv([r.metrics for r in rounds]))
    _atomic_write(out / chain_filename(epsilon, seed), ledger.export_chain())
    return ("ok", rounds[-1].metrics if rounds else None)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> Path:
    """Run the sweep and return the output directory."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = [(eps, seed) for eps in config.epsilon_sweep for seed in config.seeds]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                (eps, seed): pool.submit(_run_entry, config, eps, seed, out)
                for eps, seed in entries
            }
            outcomes = {key: fut.result() for key, fut in futures.items()}
    else:
        outcomes = {(eps, seed): _run_entry(config, eps, seed, out) for eps, seed in entries}

    lines = [",".join(SUMMARY_COLUMNS)]
    for eps in config.epsilon_sweep:
        finals = [
            outcomes[(eps, seed)][1]
            for seed in config.seeds
            if outcomes[(eps, seed)][0] == "ok" and outcomes[(eps, seed)][1] is not None
        ]
        failed = [seed for seed in config.seeds if outcomes[(eps, seed)][0] != "ok"]
        if failed:
            status = "infeasible-budget"
        elif not finals:
            status = "no rounds"
        else:
            status = "ok"
        if finals:
            n = len(finals)
            row = (
                _fmt(eps), str(n), str(finals[0].round),
                _fmt(sum(m.mean_accuracy for m in finals) / n),
                _fmt(sum(m.mean_loss for m in finals) / n),
                _fmt(sum(m.epsilon_spent for m in finals) / n),
                status,
            )
        else:
            row = (_fmt(eps), "0", str(config.rounds), "", "", "", status)
        lines.append(",".join(row))
    _atomic_write(out / "summary.csv", "\n".join(lines) + "\n")
    return out


def emit_plot_data(metrics_dir: str | Path, out_dir: str | Path) -> Path:
    """Aggregate metrics files into per-epsilon, per-round series.

    Writes plot_accuracy.csv, plot_loss.csv, plot_latency.csv, plot_gas.csv,
    each with columns epsilon,round,value (value = mean over seeds).
    """
    metrics_dir = Path(metrics_dir)
    paths = sorted(metrics_dir.glob("metrics_*.csv"))
    if not paths:
        raise ConfigError(f"no metrics files in {metrics_dir}")

    series: dict[tuple[float, int], list[dict]] = {}
    for path in paths:
        with path.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (float(row["epsilon_target"]), int(row["round"]))
                series.setdefault(key, []).append(row)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plots = (
        ("plot_accuracy.csv", "mean_accuracy"),
        ("plot_loss.csv", "mean_loss"),
        ("plot_latency.csv", "mean_latency_s"),
        ("plot_gas.csv", "gas_total"),
    )
    for filename, column in plots:
        lines = ["epsilon,round,value"]
        for (eps, round_index) in sorted(series):
            rows = series[(eps, round_index)]
            mean = sum(float(r[column]) for r in rows) / len(rows)
            lines.append(f"{_fmt(eps)},{round_index},{_fmt(mean)}")
        _atomic_write(out / filename, "\n".join(lines) + "\n")
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedledger")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the epsilon sweep experiment")
    run_p.add_argument("--config", help="flat key=value config file")
    run_p.add_argument("--epsilon", type=float, nargs="+", help="override epsilon sweep")
    run_p.add_argument("--rounds", type=int)
    run_p.add_argument("--clients", type=int)
    run_p.add_argument("--seed", type=int, nargs="+", help="override seed list")
    run_p.add_argument("--delta", type=float)
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--workers", type=int, default=1, help="parallel sweep entries")

    plot_p = sub.add_parser("plot-data", help="aggregate metrics into plot series")
    plot_p.add_argument("--in", dest="in_dir", required=True)
    plot_p.add_argument("--out", dest="out_dir", required=True)

    verify_p = sub.add_parser("verify-chain", help="verify an exported chain file")
    verify_p.add_argument("--in", dest="in_file", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = build_config(args)
            out = run_experiment(config, workers=max(1, args.workers))
            print(f"wrote results to {out}")
            return 0
        if args.command == "plot-data":
            if not Path(args.in_dir).is_dir():
                raise ConfigError(f"not a directory: {args.in_dir}")
            out = emit_plot_data(args.in_dir, args.out_dir)
            print(f"wrote plot data to {out}")
            return 0
        if args.command == "verify-chain":
            path = Path(args.in_file)
            if not path.is_file():
                raise ConfigError(f"not a file: {path}")
            report = verify_exported_chain(path.read_text(encoding="utf-8"))
            if report.valid:
                print("chain valid")
                return 0
            print(f"chain INVALID at block {report.block_index}: {report.reason}")
            return 2
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
