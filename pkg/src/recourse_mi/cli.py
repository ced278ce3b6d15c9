"""Command-line interface.

Subcommands: gen-data, train, recourse, attack, run, sweep, dp-bound,
summarize. Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import nn, privacy, runner
from .data import write_csv


def _apply_overrides(args, cfg_raw: dict) -> dict:
    if args.seed is not None:
        cfg_raw["seed"] = args.seed
    if getattr(args, "out", None):
        cfg_raw["out_dir"] = args.out
    if args.workers is not None:
        cfg_raw["workers"] = args.workers
    return cfg_raw


def _load_raw_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise runner.ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise runner.ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _config_from_args(args) -> runner.ExperimentConfig:
    raw = _load_raw_config(args.config)
    return runner.config_from_dict(_apply_overrides(args, raw))


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    data = runner.build_dataset(cfg)
    out = Path(args.out or "data.csv")
    write_csv(data, out)
    with open(out.with_suffix(".provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(data.provenance, fh, indent=2, sort_keys=True)
    print(f"wrote {data.n} rows x {data.d} features to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    prep = runner.prepare(cfg)
    out = Path(args.out or "model")
    nn.save_model(prep.owner_model, out)
    if prep.owner_vae is not None:
        nn.save_model(prep.owner_vae, out / "vae")
    meta = dict(prep.owner_model.training_meta, test_accuracy=prep.test_accuracy)
    with open(out / "accuracy.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(f"train accuracy {meta['train_accuracy']:.4f}, "
          f"test accuracy {prep.test_accuracy:.4f} -> {out}")
    return 0


def cmd_recourse(args) -> int:
    cfg = _config_from_args(args)
    samples = runner.play_game(cfg)
    out = Path(args.out or "game_samples.jsonl")
    with open(out, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({
                "point_id": s.point_id,
                "membership": s.membership.value,
                "label": s.label,
                "point": [float(v) for v in s.point],
                "recourse": s.recourse.to_json(),
            }, sort_keys=True) + "\n")
    print(f"wrote {len(samples)} game samples to {out}")
    return 0


def cmd_attack(args) -> int:
    cfg = _config_from_args(args)
    report = runner.run_experiment(cfg)
    out = Path(args.out or "attack_out")
    out.mkdir(parents=True, exist_ok=True)
    for name, score_list in report.scores.items():
        with open(out / f"scores_{name}.jsonl", "w", encoding="utf-8") as fh:
            for sc in score_list:
                rec = dict(sc.to_json(), membership=report.membership[sc.point_id])
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote score streams for {sorted(report.scores)} to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    if cfg.out_dir is None:
        cfg.out_dir = "run_out"
        cfg.snapshot["out_dir"] = cfg.out_dir
    report = runner.run_experiment(cfg)
    for name, dirs in report.attack_metrics.items():
        best = report.best_direction[name]
        m = dirs[best]
        print(f"{name} [{best}]: auc={m.auc:.4f} ba={m.balanced_accuracy:.4f} "
              f"tpr@0.1={m.tpr_at_fpr[0.1]:.4f} tpr@0.01={m.tpr_at_fpr[0.01]:.4f}")
    print(f"report written to {Path(cfg.out_dir) / 'report.json'}")
    return 0


def cmd_sweep(args) -> int:
    raw = _apply_overrides(args, _load_raw_config(args.config))
    out_dir = args.out or "sweep_out"
    raw.pop("out_dir", None)
    reports = runner.run_sweep(raw, out_dir=out_dir)
    print(f"{len(reports)} runs -> {Path(out_dir) / 'summary.csv'}")
    return 0


def cmd_dp_bound(args) -> int:
    try:
        epsilons = [float(tok) for tok in args.epsilons.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise runner.ConfigError(f"bad --epsilons list: {exc}") from exc
    if not epsilons:
        raise runner.ConfigError("--epsilons is empty")
    sys.stdout.write(privacy.format_bound_csv(privacy.bound_table(epsilons)))
    return 0


def cmd_summarize(args) -> int:
    rows = ["experiment_id,attack,direction,auc,ba,tpr_at_0.1,tpr_at_0.01"]
    for path in args.reports:
        with open(path, encoding="utf-8") as fh:
            rep = json.load(fh)
        for name in sorted(rep["attacks"]):
            for direction in ("standard", "reversed"):
                m = rep["attacks"][name]["directions"][direction]
                tpr = m["tpr_at_fpr"]
                rows.append(
                    f"{rep['experiment_id']},{name},{direction},{m['auc']!r},"
                    f"{m['balanced_accuracy']!r},{tpr['0.1']!r},{tpr['0.01']!r}"
                )
    out = Path(args.out or "summary.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recourse-mi",
        description="Membership-inference auditing for algorithmic recourse.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=None, help="output path or directory")
        p.add_argument("--workers", type=int, default=None, help="worker threads")

    p = sub.add_parser("gen-data", help="generate/ingest the configured dataset as CSV")
    add_common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the owner model and save it")
    add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("recourse", help="play the game and dump recourse transcripts")
    add_common(p)
    p.set_defaults(fn=cmd_recourse)

    p = sub.add_parser("attack", help="run attacks and dump score streams")
    add_common(p)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("run", help="full pipeline: report.json + ROC CSVs")
    add_common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="run the sweep section of a config")
    add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("dp-bound", help="print BA bounds for a list of epsilons")
    p.add_argument("--epsilons", required=True,
                   help="comma-separated epsilon values, e.g. 0,0.5,1")
    p.set_defaults(fn=cmd_dp_bound)

    p = sub.add_parser("summarize", help="combine report.json files into summary.csv")
    p.add_argument("reports", nargs="+", help="report.json paths")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_summarize)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except runner.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
