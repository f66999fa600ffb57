"""Command-line entry point: ``meterguard {gen-data,bill,train,eval,bench}``.

Every run resolves its parameters from built-in defaults, then an optional
``--config`` JSON file, then explicit flags, and writes the result to
``<out>/run_config.json``. Feeding that file back through ``--config``
reproduces the run.

Exit codes: 0 success, 2 configuration error, 3 billing aborted after a
detected tamper, 4 data error.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .billing import MODES, STATIC, BillingPeriod, Tariff, default_tariff, triples_required, write_bill_report
from .errors import ConfigError, DataError
from .field import MERSENNE61
from .ingest import (ATTACK_KINDS, DEFAULT_START, INTERVAL, build_manifest, format_timestamp, load_corpus,
                     parse_timestamp, replay_manifest, save_corpus, synthesize)

EXIT_OK, EXIT_CONFIG, EXIT_ABORTED, EXIT_DATA = 0, 2, 3, 4

GLOBAL_DEFAULTS = {"seed": 0, "out": "out", "modulus": MERSENNE61, "parties": 3, "mode": STATIC,
                   "timing": True, "threaded": False}

COMMAND_DEFAULTS = {
    "gen-data": {"meters": 200, "days": 30, "fraud_fraction": 0.3,
                 "start": format_timestamp(DEFAULT_START), "kinds": list(ATTACK_KINDS)},
    "bill": {"corpus": None, "tariff": None, "clients": None, "start": None, "intervals": None,
             "adversary": None, "monitor_load": False, "detector": None, "threshold": 0.5},
    "train": {"corpus": None, "hidden": 32, "window": 48, "epochs": 20, "learning_rate": 0.05,
              "momentum": 0.9, "batch_size": 32, "train_fraction": 0.7},
    "eval": {"corpus": None, "model": None, "split": "test", "threshold": 0.5, "train_fraction": 0.7},
    "bench": {"sweep": None, "clients": [1, 4], "intervals": [48, 96], "sweep_parties": [2, 3],
              "modes": list(MODES), "monitor_load": False},
}


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    out: str = "out"
    modulus: int = MERSENNE61
    parties: int = 3
    mode: str = STATIC
    timing: bool = True
    threaded: bool = False
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.command not in COMMAND_DEFAULTS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.mode not in MODES:
            raise ConfigError(f"--mode must be one of {MODES}")
        if self.parties < 2:
            raise ConfigError("--parties must be at least 2")
        if self.modulus < 3:
            raise ConfigError("--modulus must be a prime >= 3")
        unknown = set(self.params) - set(COMMAND_DEFAULTS[self.command])
        if unknown:
            raise ConfigError(f"unknown {self.command} parameters: {sorted(unknown)}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self) -> None:
        out = Path(self.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "run_config.json").write_text(self.to_json(), encoding="utf-8")


def resolve(command: str, explicit: dict, config_path: str | None) -> RunConfig:
    """defaults < config file < explicit flags."""
    merged = dict(GLOBAL_DEFAULTS)
    params = dict(COMMAND_DEFAULTS[command])
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        if doc.get("command", command) != command:
            raise ConfigError(f"config is for {doc['command']!r}, not {command!r}")
        doc = dict(doc)
        doc.pop("command", None)
        params.update(doc.pop("params", {}))
        for k, v in doc.items():
            (merged if k in GLOBAL_DEFAULTS else params)[k] = v
    for k, v in explicit.items():
        (merged if k in GLOBAL_DEFAULTS else params)[k] = v
    cfg = RunConfig(command, params=params, **merged)
    cfg.validate()
    return cfg


# -- subcommands ----------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> int:
    p = cfg.params
    manifest = build_manifest(int(p["meters"]), int(p["days"]), float(p["fraud_fraction"]), cfg.seed,
                              parse_timestamp(p["start"]), tuple(p["kinds"]))
    save_corpus(cfg.out, replay_manifest(manifest), manifest)
    cfg.write()
    return EXIT_OK


def _require(p: dict, key: str) -> str:
    if not p.get(key):
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    return p[key]


def _load_corpus(path: str) -> list:
    path = Path(path)
    if not (path / "readings.csv").exists():
        raise DataError(f"no corpus at {path} (expected readings.csv)")
    return load_corpus(path)


def cmd_bill(cfg: RunConfig) -> int:
    from .simnet import load_adversary, run_billing_period, write_alerts

    p = cfg.params
    corpus = _load_corpus(_require(p, "corpus"))
    if not corpus:
        raise DataError("corpus holds no meters")
    n_clients = len(corpus) if p["clients"] is None else int(p["clients"])
    start = parse_timestamp(p["start"]) if p["start"] else corpus[0].start
    if p["intervals"] is None:
        n_intervals = min(len(s) - int((start - s.start) / INTERVAL) for s in corpus[:max(n_clients, 1)])
    else:
        n_intervals = int(p["intervals"])
    period = BillingPeriod(start, n_intervals)
    tariff = Tariff.load(p["tariff"]) if p["tariff"] else default_tariff(cfg.mode, n_intervals)
    if tariff.mode != cfg.mode:
        raise ConfigError(f"tariff file is {tariff.mode} but --mode is {cfg.mode}")
    adversary = load_adversary(p["adversary"]) if p["adversary"] else []
    detector = None
    if p["detector"]:
        from .detector import load_model
        detector = load_model(p["detector"])
    result = run_billing_period(n_clients, cfg.parties, tariff, period, corpus, adversary, cfg.seed,
                                modulus=cfg.modulus, monitor_load=bool(p["monitor_load"]),
                                threaded=cfg.threaded, timing=cfg.timing, detector=detector,
                                detector_threshold=float(p["threshold"]))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bill_report(result.statements, out / "bills.csv")
    result.stats.write_csv(out / "netstats.csv", timing=cfg.timing)
    write_alerts(result.alerts, out / "alerts.csv")
    if result.loads is not None:
        with open(out / "loads.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "load_kwh"])
            for t, load in enumerate(result.loads):
                w.writerow([format_timestamp(period.start + t * INTERVAL),
                            f"{float(load):.3f}"])
    cfg.write()
    if result.aborted:
        print(f"billing aborted: {len(result.alerts)} alert(s), see {out / 'alerts.csv'}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def _detector_config(cfg: RunConfig):
    from .detector import DetectorConfig
    p = cfg.params
    return DetectorConfig(num_hidden_units=int(p["hidden"]), window_len=int(p["window"]),
                          learning_rate=float(p["learning_rate"]), momentum=float(p["momentum"]),
                          epochs=int(p["epochs"]), batch_size=int(p["batch_size"]), seed=cfg.seed)


def _split(corpus: list, cfg: RunConfig):
    from .detector import split_meters
    frac = float(cfg.params["train_fraction"])
    if not 0 < frac < 1:
        raise ConfigError("train_fraction must lie strictly between 0 and 1")
    tr, te = split_meters(len(corpus), cfg.seed, frac)
    return [corpus[i] for i in tr], [corpus[i] for i in te]


def cmd_train(cfg: RunConfig) -> int:
    from .detector import evaluate, save_model, train, write_metrics

    corpus = _load_corpus(_require(cfg.params, "corpus"))
    train_set, test_set = _split(corpus, cfg)
    losses: list = []
    model = train(train_set, _detector_config(cfg), losses)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.blsm")
    rows = [("train", evaluate(model, train_set)[0])]
    if test_set:
        rows.append(("test", evaluate(model, test_set)[0]))
    write_metrics(rows, out / "metrics.csv")
    with open(out / "training_loss.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(losses, 1):
            w.writerow([i, repr(loss)])
    (out / "split.json").write_text(json.dumps({"train": [s.meter_id for s in train_set],
                                                "test": [s.meter_id for s in test_set]}, indent=2) + "\n",
                                    encoding="utf-8")
    cfg.write()
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    from .detector import evaluate, load_model, write_metrics

    p = cfg.params
    model = load_model(_require(p, "model"))
    corpus = _load_corpus(_require(p, "corpus"))
    train_set, test_set = _split(corpus, cfg)
    chosen = {"train": train_set, "test": test_set, "all": corpus}.get(p["split"])
    if chosen is None:
        raise ConfigError("--split must be train, test or all")
    if not chosen:
        raise DataError(f"the {p['split']} split is empty")
    cm, _ = evaluate(model, chosen, float(p["threshold"]))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics([(p["split"], cm)], out / "metrics.csv")
    cfg.write()
    return EXIT_OK


BENCH_HEADER = ["n_clients", "n_intervals", "n_parties", "mode", "metric", "measured", "modeled", "match"]


def bench_configs(p: dict, cfg: RunConfig) -> list:
    if p["sweep"] is not None:
        try:
            rows = json.loads(Path(p["sweep"]).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sweep {p['sweep']}: {exc}") from exc
        try:
            return [(int(r["n_clients"]), int(r["n_intervals"]), int(r["n_parties"]), str(r["mode"]))
                    for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad sweep entry: {exc}") from exc
    return list(itertools.product(p["clients"], p["intervals"], p["sweep_parties"], p["modes"]))


def bench_rows(m: int, T: int, n: int, mode: str, cfg: RunConfig, monitor_load: bool) -> list:
    """Measure one configuration and compare it with the closed-form model."""
    from .simnet import client, party, predict_bytes, run_billing_period

    if mode not in MODES:
        raise ConfigError(f"bad mode {mode!r} in sweep")
    days = max(1, math.ceil(T / 48))
    corpus = synthesize(m, days, cfg.seed)
    tariff = default_tariff(mode, T)
    result = run_billing_period(m, n, tariff, BillingPeriod(DEFAULT_START, T), corpus,
                                seed=cfg.seed, modulus=cfg.modulus, monitor_load=monitor_load,
                                threaded=cfg.threaded, timing=cfg.timing)
    model = predict_bytes(m, T, n, mode, monitor_load)
    stats = result.stats
    up = stats.sent(client(0)) if m else 0
    down = stats.received(client(0)) if m else 0
    pairs = [
        ("client_upload_bytes", up, model.client_upload),
        ("client_download_bytes", down, model.client_download),
        ("party_bytes_sent", stats.sent(party(0)), model.sent(party(0))),
        ("party_bytes_received", stats.received(party(0)), model.received(party(0))),
        ("total_bytes", stats.total_sent, model.total),
        ("triples", result.triples_used, triples_required(m, T, mode)),
        ("byte_table", int(stats.byte_table() == model.byte_table()), 1),
    ]
    rows = [[m, T, n, mode, k, a, b, int(a == b)] for k, a, b in pairs]
    rows.append([m, T, n, mode, "cpu_micros", stats.cpu_micros() if cfg.timing else 0, "", ""])
    return rows


def cmd_bench(cfg: RunConfig) -> int:
    p = cfg.params
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mismatches = 0
    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for m, T, n, mode in bench_configs(p, cfg):
            for row in bench_rows(int(m), int(T), int(n), mode, cfg, bool(p["monitor_load"])):
                mismatches += row[-1] == 0
                w.writerow(row)
    cfg.write()
    if mismatches:
        print(f"{mismatches} measured value(s) differ from the cost model", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "bill": cmd_bill, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench}


# -- argument parsing ---------------------------------------------------------------

def _int_list(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def _str_list(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int)
    common.add_argument("--config", help="JSON RunConfig (e.g. a previous run_config.json)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--modulus", type=int, help="field prime (default 2^61-1)")
    common.add_argument("--parties", type=int, help="number of computation parties")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--no-timing", dest="timing", action="store_false",
                        help="zero all CPU-time columns so outputs are byte-reproducible")
    common.add_argument("--threaded", action="store_true", help="run simnet endpoints on threads")

    parser = argparse.ArgumentParser(prog="meterguard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    kw = {"parents": [common], "argument_default": argparse.SUPPRESS}

    g = sub.add_parser("gen-data", help="synthesize a labelled corpus", **kw)
    g.add_argument("--meters", type=int)
    g.add_argument("--days", type=int)
    g.add_argument("--fraud-fraction", dest="fraud_fraction", type=float)
    g.add_argument("--start")
    g.add_argument("--kinds", type=_str_list, help="comma-separated attack kinds")

    b = sub.add_parser("bill", help="bill one period under MPC", **kw)
    b.add_argument("--corpus")
    b.add_argument("--tariff", help="tariff JSON")
    b.add_argument("--clients", type=int)
    b.add_argument("--start")
    b.add_argument("--intervals", type=int)
    b.add_argument("--adversary", help="adversary script JSON")
    b.add_argument("--monitor-load", dest="monitor_load", action="store_true")
    b.add_argument("--detector", help="trained model file; flags suspicious meters")
    b.add_argument("--threshold", type=float)

    t = sub.add_parser("train", help="train the detector", **kw)
    t.add_argument("--corpus")
    t.add_argument("--hidden", type=int)
    t.add_argument("--window", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--train-fraction", dest="train_fraction", type=float)

    e = sub.add_parser("eval", help="evaluate a trained detector", **kw)
    e.add_argument("--corpus")
    e.add_argument("--model")
    e.add_argument("--split", choices=("train", "test", "all"))
    e.add_argument("--threshold", type=float)
    e.add_argument("--train-fraction", dest="train_fraction", type=float)

    s = sub.add_parser("bench", help="measured vs modelled overhead sweep", **kw)
    s.add_argument("--sweep", help="JSON list of {n_clients, n_intervals, n_parties, mode}")
    s.add_argument("--clients", type=_int_list)
    s.add_argument("--intervals", type=_int_list)
    s.add_argument("--sweep-parties", dest="sweep_parties", type=_int_list)
    s.add_argument("--modes", type=_str_list)
    s.add_argument("--monitor-load", dest="monitor_load", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        cfg = resolve(command, args, config_path)
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
