"""Command-line driver: single runs, party-count sweeps, serving parties.

`run` trains the same model twice, once through the masked ring protocol and
once as a plaintext fixed-point baseline with the same seed, and exits 0
only if the two output-weight matrices are bit-identical. `sweep` repeats
that for a range of party counts and writes a CSV plus a timing figure.
`serve-party` turns this process into one remote ring participant.

Exit codes: 0 success, 1 model mismatch, 2 configuration error, 3 runtime
error (transport, parsing, numeric range).
"""

import argparse
import json
import math
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import fieldcodec as fc
from .datasets import load_libsvm, normalize
from .elm import Activation, accuracy, save_model, train, train_fixed_point
from .errors import ConfigError, InvalidPartyCount, PpelmError
from .protocol import run_party_service, secure_train_stats, train_master_tcp
from .report import render_sweep_figure, write_report_csv, write_samples_json
from .transport import DEFAULT_TIMEOUT, FrameServer, split_address

_COMMON_DEFAULTS = {
    "dataset": None,
    "hidden": 100,
    "seed": 42,
    "activation": "sign",
    "field_bits": 61,
    "modulus": None,
    "scale_bits": 20,
    "normalize": "minmax",
    "out": None,
    "n_features": None,
    "allow_mismatch": False,
    "repetitions": 1,
    "timeout": DEFAULT_TIMEOUT,
    "config": None,
}

DEFAULTS = {
    "run": {
        **_COMMON_DEFAULTS,
        "parties": None,
        "transport": "inproc",
        "party_addrs": None,
        "listen": "127.0.0.1:0",
        "master_holds_data": False,
        "model_out": None,
    },
    "sweep": {
        **_COMMON_DEFAULTS,
        "k_min": 2,
        "k_max": None,
        "figure": None,
        "no_figure": False,
        "parallel": False,
        # sweeps are in-process; these exist so run/sweep share helpers
        "transport": "inproc",
        "party_addrs": None,
        "listen": "127.0.0.1:0",
        "master_holds_data": False,
    },
    "serve-party": {
        "id": None,
        "listen": None,
        "master": None,
        "dataset": None,
        "n_features": None,
        "timeout": DEFAULT_TIMEOUT,
        "idle_timeout": None,
        "once": False,
        "config": None,
    },
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="libsvm/svmlight text file")
    p.add_argument("--hidden", type=int, help="hidden node count L (default 100)")
    p.add_argument("--seed", type=int, help="seed for hidden weights (default 42)")
    p.add_argument("--activation", choices=["sign", "sigmoid"])
    p.add_argument("--field-bits", type=int, dest="field_bits",
                   help="ring modulus 2**bits - 1 (default 61)")
    p.add_argument("--modulus", type=int, help="exact ring modulus, overrides --field-bits")
    p.add_argument("--scale-bits", type=int, dest="scale_bits",
                   help="fixed-point fractional bits (default 20)")
    p.add_argument("--normalize", choices=["minmax", "none"])
    p.add_argument("--out", help="write the report CSV here")
    p.add_argument("--n-features", type=int, dest="n_features",
                   help="declare the feature count when the file underreports it")
    p.add_argument("--allow-mismatch", action="store_true", default=None,
                   dest="allow_mismatch")
    p.add_argument("--repetitions", type=int,
                   help="secure-run repetitions; CSV carries the median timings")
    p.add_argument("--timeout", type=float, help="transport deadline in seconds")
    p.add_argument("--config", help="JSON file mirroring these flags")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppelm",
        description="Multi-party ELM training over vertically split features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one secure run checked against the plaintext baseline")
    _add_common(run)
    run.add_argument("--parties", type=int, help="party count k")
    run.add_argument("--transport", choices=["inproc", "tcp"])
    run.add_argument("--party-addr", action="append", dest="party_addrs",
                     metavar="HOST:PORT", help="tcp party address, repeat k times in ring order")
    run.add_argument("--listen", help="master's tcp listen address (default 127.0.0.1:0)")
    run.add_argument("--master-holds-data", action="store_true", default=None,
                     dest="master_holds_data",
                     help="the master doubles as party 0 (in-process only)")
    run.add_argument("--model-out", dest="model_out", help="save the secure model as JSON")

    sweep = sub.add_parser("sweep", help="run k from --k-min to --k-max in-process")
    _add_common(sweep)
    sweep.add_argument("--k-min", type=int, dest="k_min")
    sweep.add_argument("--k-max", type=int, dest="k_max",
                       help="default: the dataset's feature count")
    sweep.add_argument("--figure", help="timing figure path (default: CSV path with .png)")
    sweep.add_argument("--no-figure", action="store_true", default=None, dest="no_figure")
    sweep.add_argument("--parallel", action="store_true", default=None,
                       help="run ks concurrently; timing columns are blanked")

    serve = sub.add_parser("serve-party", help="serve one ring participant over tcp")
    serve.add_argument("--id", type=int, help="party id this process will accept")
    serve.add_argument("--listen", help="tcp listen address, port 0 for ephemeral")
    serve.add_argument("--master", help="only accept runs naming this master address")
    serve.add_argument("--dataset", help="this party's local copy of the table")
    serve.add_argument("--n-features", type=int, dest="n_features")
    serve.add_argument("--timeout", type=float)
    serve.add_argument("--idle-timeout", type=float, dest="idle_timeout",
                       help="exit after this long with no new runs")
    serve.add_argument("--once", action="store_true", default=None,
                       help="serve a single run and exit")
    serve.add_argument("--config", help="JSON file mirroring these flags")
    return parser


def _merge_settings(args: argparse.Namespace) -> SimpleNamespace:
    defaults = DEFAULTS[args.command]
    given = {k: v for k, v in vars(args).items()
             if k != "command" and v is not None}
    from_file = {}
    if given.get("config"):
        try:
            raw = json.loads(Path(given["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in raw.items():
            key = key.replace("-", "_")
            if key == "field":
                if not isinstance(value, dict):
                    raise ConfigError("config key 'field' must be {modulus, scale_bits}")
                from_file["modulus"] = int(value["modulus"])
                from_file["scale_bits"] = int(value["scale_bits"])
                continue
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r} for '{args.command}'")
            from_file[key] = value
    merged = {**defaults, **from_file, **given}
    return SimpleNamespace(command=args.command, **merged)


def _field_config(s: SimpleNamespace) -> fc.FieldConfig:
    modulus = s.modulus if s.modulus else (1 << s.field_bits) - 1
    try:
        return fc.FieldConfig(modulus, s.scale_bits)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load_dataset(s: SimpleNamespace):
    if not s.dataset:
        raise ConfigError("--dataset is required")
    ds = load_libsvm(s.dataset, n_features=s.n_features)
    return normalize(ds, s.normalize)


def _check_headroom(ds, cfg: fc.FieldConfig) -> None:
    """Refuse configurations whose pre-activations cannot fit the signed range."""
    xmax = float(np.max(np.abs(ds.X))) if ds.X.size else 0.0
    bound = math.ceil((xmax * ds.features + 1.0) * 1.05 * cfg.product_scale().scale)
    if 2 * bound >= cfg.modulus:
        raise ConfigError(
            f"accumulated dot products need about {bound.bit_length()} bits at "
            f"scale 2**{cfg.scale_bits}; raise --field-bits, lower --scale-bits, "
            f"or normalize the data"
        )


def _activation(s: SimpleNamespace) -> Activation:
    try:
        return Activation.parse(s.activation)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _secure_once(s: SimpleNamespace, ds, cfg, k: int, rep: int = 0):
    if s.transport == "tcp":
        addrs = s.party_addrs or []
        if len(addrs) != k:
            raise ConfigError(
                f"tcp needs exactly k={k} --party-addr values, got {len(addrs)}"
            )
        if s.master_holds_data:
            raise ConfigError("--master-holds-data runs in-process only")
        return train_master_tcp(ds.y, ds.features, addrs, seed=s.seed,
                                hidden=s.hidden, activation=_activation(s),
                                cfg=cfg, normalize_label=s.normalize,
                                listen=s.listen, timeout=s.timeout, run_tag=rep)
    return secure_train_stats(ds.X, ds.y, k, seed=s.seed, hidden=s.hidden,
                              activation=_activation(s), cfg=cfg,
                              normalize_label=s.normalize,
                              master_holds_data=bool(s.master_holds_data),
                              run_tag=rep)


def _run_row(s: SimpleNamespace, ds, cfg, k: int):
    """One (dataset, k) measurement: secure run(s), baselines, comparison row."""
    reps = max(1, int(s.repetitions))
    model = None
    times = {"wall_time_total": [], "wall_time_protocol": [], "wall_time_solve": []}
    for rep in range(reps):
        rep_model, stats = _secure_once(s, ds, cfg, k, rep)
        if model is None:
            model = rep_model
        times["wall_time_total"].append(stats.wall_total)
        times["wall_time_protocol"].append(stats.wall_protocol)
        times["wall_time_solve"].append(stats.wall_solve)
    baseline = train_fixed_point(ds.X, ds.y, s.seed, s.hidden, _activation(s), cfg)
    float_model = train(ds.X, ds.y, s.seed, s.hidden, _activation(s))
    identical = bool(np.array_equal(model.beta, baseline.beta))
    row = {
        "dataset": ds.name,
        "k": k,
        "L": s.hidden,
        "seed": s.seed,
        "wall_time_total": statistics.median(times["wall_time_total"]),
        "wall_time_protocol": statistics.median(times["wall_time_protocol"]),
        "wall_time_solve": statistics.median(times["wall_time_solve"]),
        "train_accuracy_secure": accuracy(model.predict(ds.X), ds.y),
        "train_accuracy_plain": accuracy(baseline.predict(ds.X), ds.y),
        "train_accuracy_float": accuracy(float_model.predict(ds.X), ds.y),
        "models_identical": identical,
    }
    samples = {"k": k, "repetitions": reps, **times}
    return row, model, samples


def _print_row(row: dict) -> None:
    print(f"{row['dataset']}: k={row['k']} L={row['L']} seed={row['seed']} "
          f"secure_acc={row['train_accuracy_secure']:.4f} "
          f"identical={'yes' if row['models_identical'] else 'NO'} "
          f"[{row['wall_time_total']:.3f}s]")


def cmd_run(s: SimpleNamespace) -> int:
    ds = _load_dataset(s)
    if s.parties is None:
        raise ConfigError("--parties is required")
    if not 2 <= s.parties <= ds.features:
        raise ConfigError(
            f"--parties must be in [2, {ds.features}] for {ds.name}, got {s.parties}"
        )
    if s.hidden < 1:
        raise ConfigError("--hidden must be at least 1")
    cfg = _field_config(s)
    _check_headroom(ds, cfg)
    row, model, samples = _run_row(s, ds, cfg, s.parties)
    _print_row(row)
    if s.out:
        write_report_csv([row], s.out)
        if s.repetitions and int(s.repetitions) > 1:
            write_samples_json({"runs": [samples]}, str(s.out) + ".samples.json")
    if s.model_out:
        save_model(model, s.model_out)
    if not row["models_identical"] and not s.allow_mismatch:
        print(json.dumps({"error": "ModelMismatch",
                          "message": "secure and plaintext output weights differ"}),
              file=sys.stderr)
        return 1
    return 0


def cmd_sweep(s: SimpleNamespace) -> int:
    if s.transport != "inproc":
        raise ConfigError("sweep runs in-process; use 'run' for tcp")
    ds = _load_dataset(s)
    k_max = s.k_max if s.k_max is not None else ds.features
    if not 2 <= s.k_min <= k_max <= ds.features:
        raise ConfigError(
            f"sweep range [{s.k_min}, {k_max}] must fit in [2, {ds.features}]"
        )
    if s.hidden < 1:
        raise ConfigError("--hidden must be at least 1")
    cfg = _field_config(s)
    _check_headroom(ds, cfg)
    ks = list(range(s.k_min, k_max + 1))
    rows, all_samples = [], []
    mismatch = False
    if s.parallel:
        with ThreadPoolExecutor(max_workers=min(8, len(ks))) as pool:
            results = list(pool.map(lambda k: _run_row(s, ds, cfg, k), ks))
        for row, _, samples in results:
            # concurrent timings are contention noise, not measurements
            row["wall_time_total"] = None
            row["wall_time_protocol"] = None
            row["wall_time_solve"] = None
            rows.append(row)
            all_samples.append(samples)
            mismatch = mismatch or not row["models_identical"]
    else:
        for k in ks:
            row, _, samples = _run_row(s, ds, cfg, k)
            _print_row(row)
            rows.append(row)
            all_samples.append(samples)
            if not row["models_identical"]:
                mismatch = True
                if not s.allow_mismatch:
                    break
    out = s.out or "sweep.csv"
    write_report_csv(rows, out)
    if s.repetitions and int(s.repetitions) > 1:
        write_samples_json({"runs": all_samples}, str(out) + ".samples.json")
    if not s.no_figure and not s.parallel:
        figure = s.figure or str(Path(out).with_suffix(".png"))
        render_sweep_figure(rows, figure, title=f"{ds.name}: L={s.hidden}")
        print(f"wrote {out} and {figure}")
    else:
        print(f"wrote {out}")
    if mismatch and not s.allow_mismatch:
        print(json.dumps({"error": "ModelMismatch",
                          "message": "sweep aborted on the first differing model"}),
              file=sys.stderr)
        return 1
    return 0


def cmd_serve_party(s: SimpleNamespace) -> int:
    if s.id is None or s.listen is None or not s.dataset:
        raise ConfigError("serve-party requires --id, --listen, and --dataset")
    ds = load_libsvm(s.dataset, n_features=s.n_features)
    host, port = split_address(s.listen)
    server = FrameServer(host, port).start()
    print(f"LISTENING {server.address}", flush=True)
    idle = s.idle_timeout
    if idle is None and s.once:
        idle = s.timeout
    try:
        runs = run_party_service(server, ds.X, expected_party_id=s.id,
                                 expected_master=s.master, timeout=s.timeout,
                                 idle_timeout=idle, once=bool(s.once))
    except KeyboardInterrupt:
        return 0
    finally:
        server.close()
    print(f"served {runs} run(s)", flush=True)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        s = _merge_settings(args)
        if args.command == "run":
            return cmd_run(s)
        if args.command == "sweep":
            return cmd_sweep(s)
        return cmd_serve_party(s)
    except (ConfigError, InvalidPartyCount) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except PpelmError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 3
    except OSError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
