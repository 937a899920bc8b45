"""Command-line entry point.

Subcommands: train, evaluate, predict, kstest, gradcheck, params,
export-repr. Configuration resolves in three layers: built-in defaults, then
a plain key=value config file (--config), then explicit flags. Machine-
readable outputs go to files and stdout; progress and diagnostics go to
stderr. Every command is deterministic given its full flag set, and any
package error exits with code 1 and a one-line diagnosis.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import SplitSpec, Standardizer, load_csv, make_windows, split
from .errors import (
    ForecastError,
    IncompatibleDataError,
    InvalidParameterError,
    InvalidWindowError,
)
from .kstest import shift_report
from .metrics import evaluate_run
from .models import build_model
from .tensor import Tensor, no_grad
from .training import (
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history_csv,
)
from .verification import run_gradient_checks

PRESETS = {
    # default hyper-parameters; the exchange preset drops focal decomposition
    # and shortens the input window
    "default": {},
    "exchange": {"l_in": 96, "f": 1},
}


@dataclass
class RunConfig:
    data: str = ""
    target: str = "OT"
    variant: str = "fdnet"
    l_in: int = 672
    l_out: int = 96
    f: int = 5
    alpha: float = 0.5
    n_layers: int = 5
    embed_dim: int = 8
    heads: int = 1
    dropout: float = 0.1
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 10
    patience: int = 3
    seed: int = 4321
    split: str = "ratio:0.7,0.1,0.2"
    split_part: str = "test"
    out_dir: str = "."
    checkpoint: str = ""
    at: int = 0
    m: int = 1
    alpha_ks: float = 0.05
    windows: int = 1000
    window_len: int = 96

    _INTS = ("l_in", "l_out", "f", "n_layers", "embed_dim", "heads", "batch_size",
             "max_epochs", "patience", "seed", "at", "m", "windows", "window_len")
    _FLOATS = ("alpha", "dropout", "lr", "alpha_ks")

    def apply(self, key: str, raw: str):
        key = key.strip().replace("-", "_")
        names = {f.name for f in fields(self) if not f.name.startswith("_")}
        if key == "preset":
            preset = raw.strip()
            if preset not in PRESETS:
                raise InvalidParameterError(f"unknown preset {preset!r}")
            for k, v in PRESETS[preset].items():
                setattr(self, k, v)
            return
        if key not in names:
            raise InvalidParameterError(f"unknown config key {key!r}")
        raw = raw.strip()
        if key in self._INTS:
            setattr(self, key, int(raw))
        elif key in self._FLOATS:
            setattr(self, key, float(raw))
        else:
            setattr(self, key, raw)

    def load_file(self, path: str):
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidParameterError(f"{path}:{line_no}: expected key=value")
            key, raw = line.split("=", 1)
            self.apply(key, raw)

    def snapshot(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}"
                 for f in fields(self) if not f.name.startswith("_")]
        return "\n".join(lines) + "\n"

    def split_spec(self) -> SplitSpec:
        kind, _, rest = self.split.partition(":")
        parts = [p for p in rest.split(",") if p]
        if kind == "ratio":
            tr, va, te = (float(p) for p in parts)
            return SplitSpec.ratio(tr, va, te)
        if kind == "months":
            tr, va, te = (int(p) for p in parts[:3])
            return SplitSpec.by_months(tr, va, te, parts[3])
        if kind == "rows":
            return SplitSpec.rows(int(parts[0]), int(parts[1]))
        raise InvalidParameterError(f"unknown split spec {self.split!r}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.lr, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           seed=self.seed)


def _log(message: str):
    print(message, file=sys.stderr)


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _standardized_splits(cfg: RunConfig):
    frame = load_csv(cfg.data, cfg.target)
    train_f, val_f, test_f = split(frame, cfg.split_spec())
    standardizer = Standardizer.fit(train_f)
    return frame, standardizer, {
        "train": standardizer.transform(train_f),
        "val": standardizer.transform(val_f),
        "test": standardizer.transform(test_f),
    }


def cmd_train(cfg: RunConfig) -> int:
    _, standardizer, parts = _standardized_splits(cfg)
    train_windows = make_windows(parts["train"], cfg.l_in, cfg.l_out)
    val_windows = make_windows(parts["val"], cfg.l_in, cfg.l_out)
    model = build_model(cfg.variant, cfg.l_in, cfg.l_out, cfg.f, cfg.alpha,
                        cfg.n_layers, cfg.embed_dim, cfg.seed, cfg.heads, cfg.dropout)
    _log(f"training {cfg.variant} on {len(train_windows)} windows "
         f"({cfg.max_epochs} epochs max)")
    result = train(model, train_windows, val_windows, cfg.train_config())

    out = _out_dir(cfg)
    save_checkpoint(out / "checkpoint.ckpt", model, standardizer,
                    meta={"best_epoch": result.best_epoch,
                          "best_val_mse": result.best_val_mse,
                          "steps": result.steps})
    write_history_csv(out / "history.csv", result.history)
    (out / "config.txt").write_text(cfg.snapshot())
    _log(f"best val MSE {result.best_val_mse:.6f} at epoch {result.best_epoch}; "
         f"wrote {out / 'checkpoint.ckpt'}")
    return 0


def _load_for_inference(cfg: RunConfig):
    ckpt = load_checkpoint(cfg.checkpoint)
    frame = load_csv(cfg.data, cfg.target)
    expected_v = ckpt.config["variates"]
    if frame.n_variates != expected_v:
        raise IncompatibleDataError(
            f"dataset has {frame.n_variates} variates, checkpoint expects {expected_v}"
        )
    return ckpt, frame


def cmd_evaluate(cfg: RunConfig) -> int:
    ckpt, frame = _load_for_inference(cfg)
    parts = dict(zip(("train", "val", "test"), split(frame, cfg.split_spec())))
    if cfg.split_part not in parts:
        raise InvalidParameterError(f"split part must be train/val/test, got {cfg.split_part!r}")
    part = ckpt.standardizer.transform(parts[cfg.split_part])
    windows = make_windows(part, ckpt.config["l_in"], ckpt.config["l_out"])
    report = evaluate_run(ckpt.model, windows, ckpt.standardizer, m=cfg.m)
    out = _out_dir(cfg)
    (out / "metrics.json").write_text(report.to_json())
    (out / "metrics.csv").write_text(report.to_csv())
    print(f"mse={report.mse!r} mae={report.mae!r} smape={report.smape!r} "
          f"mase={report.mase!r} owa={report.owa!r}")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    ckpt, frame = _load_for_inference(cfg)
    l_in = ckpt.config["l_in"]
    if not 0 <= cfg.at <= frame.n_rows - l_in:
        raise InvalidWindowError(
            f"window start {cfg.at} out of range for {frame.n_rows} rows and input {l_in}"
        )
    segment = ckpt.standardizer.transform_values(frame.values[cfg.at : cfg.at + l_in])
    x = Tensor(segment[np.newaxis, np.newaxis, :, :])
    with no_grad():
        pred = ckpt.model.forward(x, "eval")[0].data[0]
    forecast = ckpt.standardizer.inverse_values(pred)
    out = _out_dir(cfg)
    path = out / "forecast.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(frame.columns) + "\n")
        for row in forecast:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    _log(f"wrote {path}")
    return 0


def cmd_kstest(cfg: RunConfig) -> int:
    frame = load_csv(cfg.data, cfg.target)
    series = frame.column(cfg.target)
    report = shift_report(series, n_windows=cfg.windows, window_len=cfg.window_len,
                          alpha=cfg.alpha_ks, seed=cfg.seed)
    out = _out_dir(cfg)
    (out / "ks_report.csv").write_text(report.to_csv())
    print(f"rr={report.reject_rate!r} mean={report.mean_p!r} std={report.std_p!r}")
    return 0


def cmd_gradcheck(cfg: RunConfig, corrupt_op: str | None = None) -> int:
    results = run_gradient_checks(corrupt_op=corrupt_op)
    covered = sorted({op for r in results for op in r.ops})
    failures = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} max_rel_err={r.error:.3e} tol={r.tolerance:g} "
              f"ops={','.join(r.ops)}")
    print(f"ops covered: {','.join(covered)}")
    if failures:
        _log(f"gradient check failed for: {', '.join(r.name for r in failures)}")
        return 1
    return 0


def cmd_params(cfg: RunConfig) -> int:
    model = build_model(cfg.variant, cfg.l_in, cfg.l_out, cfg.f, cfg.alpha,
                        cfg.n_layers, cfg.embed_dim, cfg.seed, cfg.heads, cfg.dropout)
    counts = model.param_count()
    long_model = build_model(cfg.variant, cfg.l_in, 720, cfg.f, cfg.alpha,
                             cfg.n_layers, cfg.embed_dim, cfg.seed, cfg.heads,
                             cfg.dropout)
    counts_720 = long_model.param_count()
    print(f"horizon={cfg.l_out} embedding={counts['embedding']} "
          f"blocks={counts['blocks']} head={counts['head']} total={counts['total']}")
    print(f"horizon=720 embedding={counts_720['embedding']} "
          f"blocks={counts_720['blocks']} head={counts_720['head']} "
          f"total={counts_720['total']}")
    delta = counts_720["total"] - counts["total"]
    head_delta = counts_720["head"] - counts["head"]
    print(f"delta total={delta} head={head_delta} non_head={delta - head_delta}")
    return 0


def cmd_export_repr(cfg: RunConfig) -> int:
    ckpt, frame = _load_for_inference(cfg)
    l_in = ckpt.config["l_in"]
    if not 0 <= cfg.at <= frame.n_rows - l_in:
        raise InvalidWindowError(
            f"window start {cfg.at} out of range for {frame.n_rows} rows and input {l_in}"
        )
    segment = ckpt.standardizer.transform_values(frame.values[cfg.at : cfg.at + l_in])
    x = Tensor(segment[np.newaxis, np.newaxis, :, :])
    with no_grad():
        reprs = ckpt.model.representations(x, "eval")
    target_idx = frame.target_index()
    d = ckpt.config["embed_dim"]
    out = _out_dir(cfg)
    path = out / "representations.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("branch,time_index," + ",".join(f"f{k}" for k in range(d)) + "\n")
        for branch_idx, rep in enumerate(reprs):
            features = rep.data[0, :, :, target_idx]  # (D, length)
            for t in range(features.shape[1]):
                cells = ",".join(repr(float(features[k, t])) for k in range(d))
                fh.write(f"{branch_idx},{t},{cells}\n")
    _log(f"wrote {path}")
    return 0


def _add_common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--preset", choices=sorted(PRESETS))
    parser.add_argument("--data", help="dataset CSV path")
    parser.add_argument("--target", help="target column name")
    parser.add_argument("--variant", choices=("fdnet", "funet"))
    parser.add_argument("--l-in", type=int, dest="l_in")
    parser.add_argument("--l-out", type=int, dest="l_out")
    parser.add_argument("--f", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--n-layers", type=int, dest="n_layers")
    parser.add_argument("--embed-dim", type=int, dest="embed_dim")
    parser.add_argument("--heads", type=int)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--max-epochs", type=int, dest="max_epochs")
    parser.add_argument("--patience", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--split", help="ratio:0.7,0.1,0.2 | months:12,4,4,1h | rows:a,b")
    parser.add_argument("--split-part", dest="split_part", choices=("train", "val", "test"))
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--checkpoint")
    parser.add_argument("--at", type=int)
    parser.add_argument("--m", type=int, help="seasonal periodicity for MASE/OWA")
    parser.add_argument("--alpha-ks", type=float, dest="alpha_ks")
    parser.add_argument("--windows", type=int)
    parser.add_argument("--window-len", type=int, dest="window_len")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdnet",
        description="Focal-decomposition time series forecasting toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "fit a model and write checkpoint + history"),
        ("evaluate", "score a checkpoint on a dataset split"),
        ("predict", "forecast one window in original scale"),
        ("kstest", "distribution-shift audit of one column"),
        ("gradcheck", "finite-difference verification of every op"),
        ("params", "parameter counts and horizon-growth report"),
        ("export-repr", "dump per-branch representations to CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common_flags(p)
        if name == "gradcheck":
            p.add_argument("--corrupt-op", dest="corrupt_op",
                           help="harness hook: break one op's backward")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg.load_file(args.config)
    if getattr(args, "preset", None):
        cfg.apply("preset", args.preset)
    for f in fields(RunConfig):
        if f.name.startswith("_"):
            continue
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg


_COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "kstest": cmd_kstest,
    "params": cmd_params,
    "export-repr": cmd_export_repr,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, corrupt_op=getattr(args, "corrupt_op", None))
        return _COMMANDS[args.command](cfg)
    except ForecastError as exc:
        _log(f"error: {exc}")
        return 1
    except FileNotFoundError as exc:
        _log(f"error: file not found: {exc.filename}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
