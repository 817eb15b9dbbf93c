"""Command-line interface: gen, train, eval, predict, compare.

Exit codes: 0 when the requested artifact was fully written, 1 on a runtime
failure (divergence, bad data, checkpoint mismatch), 2 on usage errors.
"""

import argparse
import os
import sys

from . import model as M
from .data import PROFILES, fit_transform, load_csv, synth_generate, write_csv
from .linalg import ShapeError
from .metrics import error_reduction
from .training import ConfigError, RunConfig, evaluate_model, train_on_records

# config keys that may be given as --flags (underscores become dashes)
_FLAG_KEYS = {
    "model": str, "hidden_size": int, "window": int, "degree": int, "num_basis": int,
    "outer_num_basis": int, "channels": int, "lr": float, "batch_size": int, "max_epochs": int,
    "patience": int, "lr_factor": float, "lr_patience": int, "min_lr": float, "clip_norm": float,
    "seed": int, "nominal_capacity": float,
}


def _add_config_flags(p, with_model=True):
    p.add_argument("--config", help="flat key=value config file; flags override it")
    for key, typ in _FLAG_KEYS.items():
        if key == "model" and not with_model:
            continue
        kw = {"choices": ["lstm", "klstm"]} if key == "model" else {}
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None, **kw)
    p.add_argument("--no-early-stop", dest="early_stop", action="store_false", default=None)


def _config_from_args(args, **extra):
    overrides = {k: getattr(args, k) for k in list(_FLAG_KEYS) + ["early_stop"]
                 if getattr(args, k, None) is not None}
    overrides.update({k: v for k, v in extra.items() if v is not None})
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig.from_mapping(overrides)


def cmd_gen(args):
    records = synth_generate(args.seed, args.cycles, args.profile, nominal_capacity=args.nominal_capacity)
    write_csv(args.out, records, nominal_capacity=args.nominal_capacity)
    print(f"wrote {len(records)} cycles to {args.out}")
    return 0


def _train_one(config, records, nominal, checkpoint, report_path):
    model, report, _ = train_on_records(records, config, nominal)
    if report_path:
        with open(report_path, "w") as fh:
            fh.write(config.to_text() + "\n" + report.to_text())
    if report.diverged:
        print("training diverged", file=sys.stderr)
        return model, report, 1
    M.save(model, checkpoint)
    last = report.epochs[-1]
    print(f"{config.model}: {len(report.epochs)} epochs, stop={report.stop_reason}, "
          f"best_epoch={report.best_epoch}, val_loss={report.best_val_loss:.6g}, "
          f"test_rmse={report.test.rmse:.6g}, lr={last.lr:g}")
    return model, report, 0


def cmd_train(args):
    config = _config_from_args(args, data=args.data, checkpoint=args.out)
    records, nominal = load_csv(config.data, config.nominal_capacity)
    report_path = args.report or os.path.splitext(config.checkpoint)[0] + ".report.txt"
    return _train_one(config, records, nominal, config.checkpoint, report_path)[2]


def _load_for_data(args):
    expect = {}
    for key in ("hidden_size", "model"):
        if getattr(args, key, None) is not None:
            expect[key] = getattr(args, key)
    if args.config:
        cfg = RunConfig.from_file(args.config)
        expect.setdefault("hidden_size", cfg.hidden_size)
        expect.setdefault("model", cfg.model)
    model = M.load(args.checkpoint, expect=expect)
    records, nominal = load_csv(args.data, model.nominal_capacity)
    window = args.window or model.window or RunConfig.window
    _, _, test, _, _ = fit_transform(records, window, model.nominal_capacity or nominal,
                                     feature_scaler=model.feature_scaler, target_scaler=model.target_scaler)
    return model, test


def cmd_eval(args):
    model, test = _load_for_data(args)
    rep = evaluate_model(model, test)
    text = rep.to_text()
    print(text, end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(rep.csv_header() + "\n" + rep.to_csv_row() + "\n")
    return 0


def cmd_predict(args):
    model, test = _load_for_data(args)
    pred = M.predict_batch(model, test.windows)
    with open(args.out, "w") as fh:
        fh.write("cycle_index,soh_actual,soh_pred,cap_actual,cap_pred\n")
        for cyc, (sa, ca), (sp, cp) in zip(test.cycle_index, test.raw_targets, pred):
            fh.write(f"{int(cyc)},{float(sa)!r},{float(sp)!r},{float(ca)!r},{float(cp)!r}\n")
    if args.plot_data:
        with open(args.plot_data, "w") as fh:
            fh.write("# cycle_index soh_actual soh_pred\n")
            for cyc, (sa, _), (sp, _) in zip(test.cycle_index, test.raw_targets, pred):
                fh.write(f"{int(cyc)} {sa:.8f} {float(sp):.8f}\n")
    print(f"wrote {len(pred)} predictions to {args.out}")
    return 0


def cmd_compare(args):
    base = _config_from_args(args, data=args.data)
    records, nominal = load_csv(base.data, base.nominal_capacity)
    os.makedirs(args.out_dir, exist_ok=True)
    rmses = {}
    for kind in ("lstm", "klstm"):
        cfg = base.replace(model=kind)
        ckpt = os.path.join(args.out_dir, f"{kind}.ckpt")
        _, report, code = _train_one(cfg, records, nominal, ckpt, os.path.join(args.out_dir, f"{kind}.report.txt"))
        if code:
            return code
        rmses[kind] = report.test.rmse
    red = error_reduction(rmses["klstm"], rmses["lstm"])
    print(f"lstm_rmse={rmses['lstm']!r}")
    print(f"klstm_rmse={rmses['klstm']!r}")
    print(f"error_reduction={red!r}")
    with open(os.path.join(args.out_dir, "compare.txt"), "w") as fh:
        fh.write(f"lstm_rmse={rmses['lstm']!r}\nklstm_rmse={rmses['klstm']!r}\nerror_reduction={red!r}\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="soh-klstm", description="Battery SOH prediction with LSTM/KLSTM")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic degradation CSV")
    p.add_argument("--profile", required=True, choices=sorted(PROFILES))
    p.add_argument("--cycles", type=int, default=170)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nominal-capacity", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model and write a checkpoint + report")
    p.add_argument("--data", help="canonical CSV (or data= in the config)")
    p.add_argument("--out", help="checkpoint path (or checkpoint= in the config)")
    p.add_argument("--report", help="report path (default: <checkpoint>.report.txt)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a checkpoint on the test partition"),
                                 ("predict", cmd_predict, "write per-cycle test predictions")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--config")
        p.add_argument("--hidden-size", dest="hidden_size", type=int)
        p.add_argument("--model", choices=["lstm", "klstm"])
        p.add_argument("--window", type=int)
        if name == "eval":
            p.add_argument("--out", help="write the report block here")
            p.add_argument("--csv", help="write the report as a one-row CSV")
        else:
            p.add_argument("--out", required=True)
            p.add_argument("--plot-data", help="optional whitespace-separated plot data file")
        p.set_defaults(func=func)

    p = sub.add_parser("compare", help="train lstm and klstm on the same data and compare test RMSE")
    p.add_argument("--data")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p, with_model=False)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and not args.out and not args.config:
        parser.error("train needs --out or a config with checkpoint=")
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.error(str(exc))
    except (ShapeError, M.CheckpointError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
