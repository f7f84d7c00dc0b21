"""Command-line interface.

One binary, eight subcommands: sample / eval / chen-study / cf / train /
mlmc / price / weakstudy. Every run takes an output directory, echoes
its fully resolved configuration into ``manifest.json`` there (config
file values overridden by flags), and writes machine-readable CSV/JSON
results. Primary outputs are byte-reproducible given the same seed in
reproducible mode; wall-clock measurements go to a separate
``timing.json`` so they never perturb the primary files.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .rng import RngStream, gauss


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def read_config_file(path: str) -> dict:
    """Flat KEY=VALUE file; '#' starts a comment; no nesting, no includes."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected KEY=VALUE, got {raw!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(parser: argparse.ArgumentParser, values: dict) -> dict:
    """Coerce config-file strings using each option's argparse type."""
    types = {}
    for action in parser._actions:  # noqa: SLF001 - argparse has no public map
        types[action.dest] = action.type
    out = {}
    for key, val in values.items():
        fn = types.get(key)
        if fn is not None:
            out[key] = fn(val)
        elif val.lower() in ("true", "false"):
            out[key] = val.lower() == "true"
        else:
            out[key] = val
    return out


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(args, out: Path, command: str) -> dict:
    resolved = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")
    }
    manifest = {"command": command, "version": __version__, "config": resolved}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1, default=str)
    return manifest


def write_json(out: Path, name: str, doc) -> None:
    with open(out / name, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1, default=str)


def write_csv(out: Path, name: str, header: list, rows) -> None:
    with open(out / name, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _load_model(path):
    from . import pairnet

    if path is None:
        return None
    return pairnet.load(path)


def cmd_sample(args) -> int:
    from .batchio import save_batch, save_batch_csv
    from .samplers import sample_area

    out = _out_dir(args)
    write_manifest(args, out, "sample")
    t0 = time.perf_counter()
    stream = RngStream(args.seed)
    w = gauss(stream.child(0), args.n, args.dt, args.d)
    batch = sample_area(
        args.kind, stream.child(1), w, args.dt,
        model=_load_model(args.model), depth=args.depth,
    )
    batch.meta.update({"seed": args.seed, "depth": args.depth})
    save_batch(batch, out / "batch.lvb")
    if args.csv:
        save_batch_csv(batch, out / "batch.csv")
    write_json(out, "timing.json", {"seconds": time.perf_counter() - t0})
    print(f"wrote {batch.n} samples (kind={args.kind}, d={args.d}) to {out}")
    return 0


def cmd_cf(args) -> int:
    from .cf import empirical_cf, gaussian_frequencies, joint_cf
    from .refcache import reference_batch

    out = _out_dir(args)
    write_manifest(args, out, "cf")
    t0 = time.perf_counter()
    batch = reference_batch(args.d, args.log2_n, args.depth, args.seed, log=print)
    freqs = gaussian_frequencies(RngStream(args.seed).child(7), args.n_freqs,
                                 args.d + batch.n_pairs, scale=args.freq_scale)
    emp = empirical_cf(batch, freqs)
    rows = []
    for m in range(freqs.m):
        vec = freqs.vectors[m]
        ana = joint_cf(batch.dt, vec[: args.d], vec[args.d :])
        rows.append(
            [m, ana, emp[m].real, emp[m].imag, abs(emp[m] - ana)]
        )
    write_csv(out, "cf.csv", ["freq", "analytic", "empirical_re", "empirical_im",
                              "abs_delta"], rows)
    write_json(out, "timing.json", {"seconds": time.perf_counter() - t0})
    worst = max(r[4] for r in rows)
    print(f"cf check over {freqs.m} frequencies: worst |delta| = {worst:.3e}")
    return 0


def cmd_chen_study(args) -> int:
    from .chen import chen_study
    from .refcache import reference_batch

    out = _out_dir(args)
    write_manifest(args, out, "chen-study")
    t0 = time.perf_counter()
    reference = reference_batch(args.d, args.ref_log2_n, args.depth, args.seed + 1,
                                log=print)
    report = chen_study(
        RngStream(args.seed), reference, d=args.d, n_start=1 << args.log2_n,
        start_variance=args.start_variance,
    )
    write_csv(out, "study.csv", ["combines", "log2_n", "w2", "baseline"],
              [[r["combines"], r["log2_n"], r["w2"], r["baseline"]]
               for r in report.rows()])
    write_json(out, "study.json", {"fitted_slope": report.fitted_slope,
                                   "used_levels": report.used_levels})
    write_json(out, "timing.json", {"seconds": time.perf_counter() - t0})
    print(f"fitted log2-W2 slope per combine: {report.fitted_slope:.3f} "
          f"({report.used_levels} pre-floor levels)")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate
    from .refcache import reference_batch

    out = _out_dir(args)
    write_manifest(args, out, "eval")
    t0 = time.perf_counter()
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    d_list = [int(x) for x in args.d_list.split(",")]
    refs = {
        d: reference_batch(d, args.ref_log2_n, args.depth, args.seed + d, log=print)
        for d in d_list
    }
    report = evaluate(kinds, d_list, 1 << args.log2_n, RngStream(args.seed), refs,
                      model=_load_model(args.model), depth=args.depth)
    timing_cols = {"seconds_per_2p20"}
    rows = report.rows
    keys = [k for k in rows[0].keys() if k not in timing_cols]
    write_csv(out, "eval.csv", keys, [[r[k] for k in keys] for r in rows])
    write_json(out, "eval.json", {"config": report.config,
                                  "rows": [{k: r[k] for k in keys} for r in rows]})
    write_json(out, "timing.json", {
        "seconds": time.perf_counter() - t0,
        "generation_seconds_per_2p20": {f"{r['kind']}-d{r['d']}": r["seconds_per_2p20"]
                                        for r in rows},
    })
    for r in rows:
        print(f"{r['kind']:>10} d={r['d']}: W2={r['marginal_w2']:.5f} "
              f"4th={r['fourth_moment']:.4f} gMMD={r['gaussian_mmd']:.3e}")
    return 0


def cmd_train(args) -> int:
    from . import pairnet
    from .refcache import reference_batch
    from .train import TrainConfig, train

    out = _out_dir(args)
    write_manifest(args, out, "train")
    t0 = time.perf_counter()
    cfg = TrainConfig(
        d=args.d, noise_dim=args.noise_dim,
        hidden=tuple(int(x) for x in args.hidden.split(",")),
        slope=args.slope, batch_size=args.batch_size, n_freqs=args.n_freqs,
        iter_d=args.iter_d, lr_gen=args.lr_gen, lr_disc=args.lr_disc,
        steps=args.steps, seed=args.seed, eval_every=args.eval_every,
        loss_power=args.loss_power, chen_stop_gradient=args.chen_stop_gradient,
        h_variance=args.h_variance,
    )
    reference = reference_batch(args.d, args.eval_ref_log2_n, args.eval_ref_depth,
                                args.seed + 101, log=print)
    model, report = train(cfg, eval_reference=reference,
                          log=print if args.verbose else None)
    pairnet.save(model, out / "model.ckpt")
    pairnet.save_json(model, out / "model.json")
    doc = report.to_json()
    wall = doc.pop("wall_clock_seconds")
    write_json(out, "report.json", doc)
    write_csv(out, "loss.csv", ["step", "loss"], report.loss_curve)
    write_json(out, "timing.json", {"seconds": time.perf_counter() - t0,
                                    "train_seconds": wall})
    print(f"best step {report.best_step}: held-out W2 {report.best_eval_w2:.6f}; "
          f"checkpoint at {out / 'model.ckpt'}")
    return 0


def cmd_mlmc(args) -> int:
    from .heston import PAPER_PARAMS, heston_price, mlmc

    out = _out_dir(args)
    write_manifest(args, out, "mlmc")
    t0 = time.perf_counter()
    price = heston_price(PAPER_PARAMS)
    report = mlmc(
        args.scheme, args.area, PAPER_PARAMS, args.levels, 1 << args.log2_n0,
        RngStream(args.seed), model=_load_model(args.model), depth=args.depth,
        oracle_price=price, antithetic=args.antithetic,
    )
    write_csv(
        out, "levels.csv",
        ["level", "h", "n", "mean", "var", "mean_se", "fine_mean", "fine_var"],
        [[lv[k] for k in ("level", "h", "n", "mean", "var", "mean_se",
                          "fine_mean", "fine_var")] for lv in report.levels],
    )
    write_json(out, "mlmc.json", report.to_json())
    write_json(out, "timing.json", {"seconds": time.perf_counter() - t0})
    print(f"{report.scheme}+{report.area_kind}: estimate {report.estimate:.5f} "
          f"(oracle {price:.5f}), variance gradient {report.variance_decay:.3f}")
    return 0


def cmd_price(args) -> int:
    from .heston import PAPER_PARAMS, heston_price, price_cross_validation
    from .refcache import cached_json

    out = _out_dir(args)
    write_manifest(args, out, "price")
    t0 = time.perf_counter()
    doc = {
        "derived_log": heston_price(PAPER_PARAMS, "derived", "log"),
        "readings": {},
    }
    for reading in ("derived", "printed"):
        for strike_form in ("log", "linear"):
            try:
                doc["readings"][f"{reading}_{strike_form}"] = heston_price(
                    PAPER_PARAMS, reading, strike_form
                )
            except Exception as exc:
                doc["readings"][f"{reading}_{strike_form}"] = f"failed: {exc}"
    if args.cross_validate:
        doc["cross_validation"] = cached_json(
            f"price_xval_n{args.log2_n0}_seed{args.seed}",
            lambda: price_cross_validation(
                PAPER_PARAMS, RngStream(args.seed), n0=1 << args.log2_n0
            ),
            log=print,
        )
    write_json(out, "price.json", doc)
    write_json(out, "timing.json", {"seconds": time.perf_counter() - t0})
    print(f"price (derived reading, log strike): {doc['derived_log']:.8f}")
    return 0


def cmd_weakstudy(args) -> int:
    from .heston import PAPER_PARAMS, heston_price, weak_error_study

    out = _out_dir(args)
    write_manifest(args, out, "weakstudy")
    t0 = time.perf_counter()
    price = heston_price(PAPER_PARAMS)
    study = weak_error_study(
        args.scheme, args.area, PAPER_PARAMS, args.levels, 1 << args.log2_n0,
        RngStream(args.seed), reps=args.reps, model=_load_model(args.model),
        depth=args.depth, oracle_price=price, antithetic=args.antithetic,
    )
    write_json(out, "weakstudy.json", study)
    write_csv(
        out, "errors.csv", ["level", "mean_error", "se_error", "mc_floor",
                            "mean_level_var"],
        [[l, study["mean_error"][l], study["se_error"][l], study["mc_floor"][l],
          study["mean_level_var"][l]] for l in study["levels"]],
    )
    write_json(out, "timing.json", {"seconds": time.perf_counter() - t0})
    print(f"{study['scheme']}+{study['area_kind']}: weak gradient "
          f"{study['weak_order']:.3f}, variance gradient {study['variance_decay']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="levyarea",
        description="Weak Levy-area samplers, generator training, metrics, "
                    "and log-Heston multilevel experiments.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="run", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="global seed")
        p.add_argument("--config", default=None, help="flat KEY=VALUE config file")
        p.add_argument("--reproducible", action="store_true",
                       help="require an explicit seed; single-threaded reductions")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (must be 1 in reproducible mode)")
        p.add_argument("--depth", type=int, default=10,
                       help="dyadic depth of the reference oracle")

    p = sub.add_parser("sample", help="draw a batch of (increment, area) samples")
    common(p)
    p.add_argument("--kind", default="foster")
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--n", type=int, default=1 << 16)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--model", default=None, help="generator checkpoint for pairnet")
    p.add_argument("--csv", action="store_true", help="also write CSV")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("cf", help="analytic vs empirical characteristic function")
    common(p)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--log2-n", type=int, default=18)
    p.add_argument("--n-freqs", type=int, default=20)
    p.add_argument("--freq-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_cf)

    p = sub.add_parser("chen-study", help="iterated-combine convergence study")
    common(p)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--log2-n", type=int, default=20)
    p.add_argument("--ref-log2-n", type=int, default=20)
    p.add_argument("--start-variance", type=float, default=0.25)
    p.set_defaults(func=cmd_chen_study)

    p = sub.add_parser("eval", help="metric table across sampler kinds")
    common(p)
    p.add_argument("--kinds", default="talay,davie,condgauss,foster")
    p.add_argument("--d-list", default="4")
    p.add_argument("--log2-n", type=int, default=20)
    p.add_argument("--ref-log2-n", type=int, default=20)
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="adversarially train the generator")
    common(p)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--noise-dim", type=int, default=4)
    p.add_argument("--hidden", default="16,16,16")
    p.add_argument("--slope", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--n-freqs", type=int, default=64)
    p.add_argument("--iter-d", type=int, default=2)
    p.add_argument("--lr-gen", type=float, default=2e-3)
    p.add_argument("--lr-disc", type=float, default=8e-3)
    p.add_argument("--steps", type=int, default=12000)
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--loss-power", type=int, default=1, choices=(1, 2))
    p.add_argument("--chen-stop-gradient", action="store_true")
    p.add_argument("--h-variance", type=float, default=1.0 / 12.0,
                   help="variance of the bridge average at unit scale")
    p.add_argument("--eval-ref-log2-n", type=int, default=17)
    p.add_argument("--eval-ref-depth", type=int, default=8)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("mlmc", help="one multilevel run for the log-Heston call")
    common(p)
    p.add_argument("--scheme", default="strang", choices=("strang", "milstein"))
    p.add_argument("--area", default="foster")
    p.add_argument("--levels", type=int, default=7)
    p.add_argument("--log2-n0", type=int, default=22)
    p.add_argument("--model", default=None)
    p.add_argument("--antithetic", action="store_true")
    p.set_defaults(func=cmd_mlmc)

    p = sub.add_parser("price", help="semi-analytic call price (all readings)")
    common(p)
    p.add_argument("--cross-validate", action="store_true",
                   help="also run the Monte-Carlo cross-validation (slow, cached)")
    p.add_argument("--log2-n0", type=int, default=26)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("weakstudy", help="repeated multilevel runs, fitted rates")
    common(p)
    p.add_argument("--scheme", default="strang", choices=("strang", "milstein"))
    p.add_argument("--area", default="foster")
    p.add_argument("--levels", type=int, default=7)
    p.add_argument("--log2-n0", type=int, default=22)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--model", default=None)
    p.add_argument("--antithetic", action="store_true")
    p.set_defaults(func=cmd_weakstudy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, _ = parser.parse_known_args(argv)
    if getattr(args, "config", None):
        try:
            file_values = read_config_file(args.config)
        except (OSError, ValueError) as exc:
            return _fail(str(exc))
        sub_parser = None
        for action in parser._actions:  # noqa: SLF001
            if isinstance(action, argparse._SubParsersAction):  # noqa: SLF001
                sub_parser = action.choices[args.command]
        known = {a.dest for a in sub_parser._actions}  # noqa: SLF001
        unknown = set(file_values) - known
        if unknown:
            return _fail(f"unknown config keys: {sorted(unknown)}")
        sub_parser.set_defaults(**_coerce(sub_parser, file_values))
    args = parser.parse_args(argv)
    if args.reproducible and args.threads != 1:
        return _fail("reproducible mode requires --threads 1")
    if args.reproducible and args.seed is None:
        return _fail("reproducible mode requires an explicit --seed")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
