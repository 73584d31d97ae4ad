"""Command-line entry point: gen-data, attack, defend, report, sweeps.

Every run directory receives a frozen copy of the resolved config; all
randomness comes from seeds in the config, so reruns reproduce every result
row byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ExperimentConfig, dump_config, load_config
from .corpus import (
    GeneratorSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, DataError
from .httptok import Vocab
from .models import model_from_checkpoint
from .pipeline import (
    ResultRow,
    TrainConfig,
    build_attack_test_set,
    evaluate,
    rows_to_csv,
    run_attack,
    run_defense,
    train_clean_baseline,
)
from .triggers import PoisonManifest, PoisonPlan

ATTACK_ROWS = "rows_attack.csv"
DEFENSE_ROWS = "rows_defense.csv"


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="wadlab",
        description="Backdoor attack/defense experiments on web-attack detectors.",
    )
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic labeled corpus")
    p.add_argument("--n", type=int, required=True, help="total sample count")
    p.add_argument("--attack-frac", type=float, required=True,
                   help="fraction of Attack-labeled samples, in (0,1)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("attack", help="train baselines and poisoned models")
    p.add_argument("--config", required=True, help="experiment config (INI)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel attack cases (row order stays deterministic)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="fine-tune defenses on an attack run")
    p.add_argument("--config", required=True)
    p.add_argument("--dir", required=True, help="attack run directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("report", help="merge result rows into a report")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep-alpha", help="CF-FT loss-weight sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--dir", required=True, help="attack run directory")
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1",
                   help="comma list of weighting coefficients")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("sweep-ratio", help="fine-tune-set size sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--dir", required=True)
    p.add_argument("--ratios", default="0.01,0.05,0.1")
    p.set_defaults(func=cmd_sweep_ratio)

    return parser


# --- commands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = GeneratorSpec(args.n, args.attack_frac, args.seed)
    dataset = generate_synthetic(spec)
    save_dataset(dataset, args.out, args.format)
    stats = dataset.stats()
    for row in stats:
        print(f"{row['split']}: {row['total']} samples, {row['attack_percent']}% attack")
    return 0


def _resolve_dataset(cfg: ExperimentConfig, run_dir):
    if cfg.dataset_source == "synthetic":
        dataset = generate_synthetic(cfg.generator)
    else:
        dataset = load_dataset(cfg.dataset_source, cfg.dataset_format,
                               name=cfg.dataset_name)
    save_dataset(dataset, os.path.join(run_dir, "data"), "jsonl")
    return dataset


def _external_source(cfg: ExperimentConfig):
    if not any(domain == "out" for _, domain in cfg.defense_arms):
        return []
    if cfg.external_source == "synthetic":
        n_train = int(round(cfg.generator.n_samples * 0.8))
        need = max(int(round(cfg.defense_ratio * n_train)) * 3, 100)
        ext = generate_synthetic(GeneratorSpec(
            n_samples=need, attack_fraction=cfg.generator.attack_fraction,
            seed=cfg.external_seed,
        ))
        return ext.train
    return load_dataset(cfg.external_source, cfg.dataset_format).train


def cmd_attack(args) -> int:
    cfg = load_config(args.config)
    run_dir = args.out
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    dataset = _resolve_dataset(cfg, run_dir)

    os.makedirs(os.path.join(run_dir, "baseline"), exist_ok=True)
    baselines = {}
    for kind in cfg.model_kinds:
        model, vocab, _ = train_clean_baseline(
            dataset, kind, cfg.train, cfg.vocab_size, cfg.hidden_size
        )
        model.save(os.path.join(run_dir, "baseline", f"{kind}.npz"))
        vocab.save(os.path.join(run_dir, "baseline", f"vocab_{kind}.json"))
        baselines[kind] = (model, vocab)

    cases = [(kind, trig) for kind in cfg.model_kinds
             for trig in cfg.trigger_configs()]

    def run_case(case):
        kind, trig = case
        tdir = os.path.join(run_dir, "attack", trig.kind.value)
        os.makedirs(tdir, exist_ok=True)
        plan = PoisonPlan(rate=cfg.poison_rate, trigger=trig, seed=cfg.poison_seed)
        model, vocab, poisoned, manifest, _ = run_attack(
            dataset, kind, plan, cfg.train, cfg.vocab_size, cfg.hidden_size
        )
        model.save(os.path.join(tdir, f"{kind}.npz"))
        vocab.save(os.path.join(tdir, f"vocab_{kind}.json"))
        with open(os.path.join(tdir, "manifest.json"), "w", encoding="utf-8") as fh:
            fh.write(manifest.to_json())
        save_dataset(poisoned, os.path.join(tdir, "poisoned"), "jsonl")

        attack_test, _ = build_attack_test_set(dataset, trig)
        base_model, base_vocab = baselines[kind]
        L = cfg.train.input_length
        base_m = evaluate(base_model, dataset.test, attack_test, base_vocab, L)
        att_m = evaluate(model, dataset.test, attack_test, vocab, L)
        return kind, trig.kind.value, base_m, att_m

    results = _run_cases(run_case, cases, args.jobs)

    rows, errors, row_id = [], [], 0
    for case, outcome in zip(cases, results):
        kind, trig = case
        if isinstance(outcome, Exception):
            row_id += 1
            rows.append(ResultRow(row_id, kind, dataset.name, trig.kind.value,
                                  "failed", None, None, None, None))
            errors.append((f"{kind}/{trig.kind.value}", outcome))
            continue
        _, tname, base_m, att_m = outcome
        row_id += 1
        rows.append(ResultRow(row_id, kind, dataset.name, tname, "clean-baseline",
                              base_m.c_acc, base_m.asr, base_m.r_acc, None))
        row_id += 1
        rows.append(ResultRow(row_id, kind, dataset.name, tname, "attacked",
                              att_m.c_acc, att_m.asr, att_m.r_acc, None))

    with open(os.path.join(run_dir, ATTACK_ROWS), "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows))
    for case, exc in errors:
        print(f"FAILED {case}: {exc}", file=sys.stderr)
    print(f"wrote {len(rows)} rows to {os.path.join(run_dir, ATTACK_ROWS)}")
    return 1 if errors else 0


def _load_attack_case(run_dir, kind, trigger_name):
    tdir = os.path.join(run_dir, "attack", trigger_name)
    ckpt = os.path.join(tdir, f"{kind}.npz")
    manifest_path = os.path.join(tdir, "manifest.json")
    for path in (ckpt, manifest_path):
        if not os.path.exists(path):
            raise DataError(f"missing attack artifact: {path} (run `wadlab attack` first)")
    model = model_from_checkpoint(ckpt)
    vocab = Vocab.load(os.path.join(tdir, f"vocab_{kind}.json"))
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = PoisonManifest.from_json(fh.read())
    poisoned = load_dataset(os.path.join(tdir, "poisoned"), "jsonl")
    return model, vocab, manifest, poisoned


def cmd_defend(args) -> int:
    cfg = load_config(args.config)
    if not cfg.defense_arms:
        raise ConfigError("no defense arms configured ([defense] arms = ...)")
    run_dir = args.dir
    dataset = load_dataset(os.path.join(run_dir, "data"), "jsonl",
                           name=cfg.dataset_name)
    external = _external_source(cfg)
    L = cfg.train.input_length

    cases = [(kind, trig, arm) for kind in cfg.model_kinds
             for trig in cfg.trigger_configs()
             for arm in cfg.defense_configs()]

    def run_case(case):
        kind, trig, arm = case
        model, vocab, manifest, poisoned = _load_attack_case(
            run_dir, kind, trig.kind.value
        )
        attack_test, _ = build_attack_test_set(dataset, trig)
        att_m = evaluate(model, dataset.test, attack_test, vocab, L)
        defended, _ = run_defense(model, poisoned, manifest, arm, cfg.train,
                                  vocab, external_source=external)
        name = f"{kind}_{arm.method}_{arm.domain}"
        defended.save(os.path.join(run_dir, "attack", trig.kind.value, f"{name}.npz"))
        dm = evaluate(defended, dataset.test, attack_test, vocab, L)
        return att_m, dm

    results = _run_cases(run_case, cases, args.jobs)

    rows, errors, row_id = [], [], 0
    for case, outcome in zip(cases, results):
        kind, trig, arm = case
        row_id += 1
        if isinstance(outcome, Exception):
            rows.append(ResultRow(row_id, kind, dataset.name, trig.kind.value,
                                  "failed", None, None, None, None))
            errors.append((f"{kind}/{trig.kind.value}/{arm.method}:{arm.domain}", outcome))
            continue
        att_m, dm = outcome
        rows.append(ResultRow(
            row_id, kind, dataset.name, trig.kind.value,
            f"defended:{arm.method}:{arm.domain}",
            dm.c_acc, dm.asr, dm.r_acc, att_m.asr - dm.asr,
        ))

    with open(os.path.join(run_dir, DEFENSE_ROWS), "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows))
    for case, exc in errors:
        print(f"FAILED {case}: {exc}", file=sys.stderr)
    print(f"wrote {len(rows)} rows to {os.path.join(run_dir, DEFENSE_ROWS)}")
    return 1 if errors else 0


def cmd_report(args) -> int:
    rows = []
    for name in (ATTACK_ROWS, DEFENSE_ROWS):
        path = os.path.join(args.dir, name)
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                rows.extend(list(csv.DictReader(fh)))
    if not rows:
        raise DataError(f"no result rows in {args.dir}")

    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=ResultRow.CSV_HEADER.split(","))
    writer.writeheader()
    for i, row in enumerate(rows, start=1):
        row["id"] = str(i)
        writer.writerow(row)
    with open(os.path.join(args.dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(out.getvalue())

    summary = _summarize(rows)
    with open(os.path.join(args.dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary)
    print(summary, end="")
    return 0


def _summarize(rows) -> str:
    def mean(values):
        return sum(values) / len(values) if values else float("nan")

    lines = ["wadlab experiment summary", "=" * 25]
    attacked = [r for r in rows if r["phase"] == "attacked" and r["asr"]]
    defended = [r for r in rows if r["phase"].startswith("defended:") and r["asr"]]
    failed = [r for r in rows if r["phase"] == "failed"]
    if attacked:
        lines.append(f"attack cases: {len(attacked)}, "
                     f"mean ASR {mean([float(r['asr']) for r in attacked]):.2f}, "
                     f"mean C-ACC {mean([float(r['c_acc']) for r in attacked]):.2f}")
        for key in ("model", "trigger"):
            for val in sorted({r[key] for r in attacked}):
                sel = [float(r["asr"]) for r in attacked if r[key] == val]
                lines.append(f"  mean ASR by {key}={val}: {mean(sel):.2f}")
    if defended:
        for phase in sorted({r["phase"] for r in defended}):
            sel = [r for r in defended if r["phase"] == phase]
            lines.append(
                f"{phase}: {len(sel)} cases, "
                f"mean ASR {mean([float(r['asr']) for r in sel]):.2f}, "
                f"mean dASR {mean([float(r['delta_asr']) for r in sel if r['delta_asr']]):.2f}, "
                f"mean C-ACC {mean([float(r['c_acc']) for r in sel]):.2f}"
            )
    if failed:
        lines.append(f"FAILED cases: {len(failed)}")
    return "\n".join(lines) + "\n"


def _sweep(args, values, vary: str) -> int:
    cfg = load_config(args.config)
    run_dir = args.dir
    dataset = load_dataset(os.path.join(run_dir, "data"), "jsonl",
                           name=cfg.dataset_name)
    L = cfg.train.input_length
    out_rows = []
    for value in values:
        if vary == "alpha":
            arms = cfg.defense_configs(alpha=value) or ()
        else:
            arms = cfg.defense_configs(ratio=value) or ()
        if not arms:
            raise ConfigError("no defense arms configured for sweep")
        accs, asrs = [], []
        for kind in cfg.model_kinds:
            for trig in cfg.trigger_configs():
                model, vocab, manifest, poisoned = _load_attack_case(
                    run_dir, kind, trig.kind.value
                )
                attack_test, _ = build_attack_test_set(dataset, trig)
                for arm in arms:
                    defended, _ = run_defense(
                        model, poisoned, manifest, arm, cfg.train, vocab,
                        external_source=_external_source(cfg),
                    )
                    dm = evaluate(defended, dataset.test, attack_test, vocab, L)
                    accs.append(dm.c_acc)
                    asrs.append(dm.asr)
        out_rows.append((value, float(np.mean(accs)), float(np.mean(asrs))))

    path = os.path.join(run_dir, f"{vary}_sweep.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{vary},mean_c_acc,mean_asr\n")
        for value, acc, asr in out_rows:
            fh.write(f"{value},{acc:.4f},{asr:.4f}\n")
    print(f"wrote {path}")
    return 0


def cmd_sweep_alpha(args) -> int:
    values = [float(v) for v in args.alphas.split(",")]
    return _sweep(args, values, "alpha")


def cmd_sweep_ratio(args) -> int:
    values = [float(v) for v in args.ratios.split(",")]
    return _sweep(args, values, "ratio")


def _run_cases(fn, cases, jobs: int):
    """Run cases (optionally in parallel); results keep case order."""
    if jobs <= 1:
        out = []
        for case in cases:
            try:
                out.append(fn(case))
            except Exception as exc:  # noqa: BLE001 - flushed as failure rows
                out.append(exc)
        return out
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, case) for case in cases]
        out = []
        for fut in futures:
            try:
                out.append(fut.result())
            except Exception as exc:  # noqa: BLE001
                out.append(exc)
        return out


if __name__ == "__main__":
    sys.exit(main())
