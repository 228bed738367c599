"""Command-line driver.

    qpufid run PROTOCOL [options]
    qpufid attack PROTOCOL ATTACKER [options]
    qpufid analyze TARGET [options]
    qpufid oracle --N N --tau TAU [options]

Config files are JSON objects whose keys mirror ``ProtocolConfig`` (plus
``trials``); ``n`` and ``N`` are required in a file. Flags override the file,
which overrides defaults. The default seed comes from ``QPUFID_SEED``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, analysis, protocol, qstate
from .adversaries import ATTACKERS, run_attack_game
from .errors import ConfigError
from .protocol import PROTOCOLS, HonestProver, ProtocolConfig
from .stats import binomial_interval

SEED_ENV = "QPUFID_SEED"
CONFIG_KEYS = set(ProtocolConfig.__dataclass_fields__) | {"trials"}
DEFAULTS = {"n": 4, "N": 8, "trials": 100}
ANALYZE_TARGETS = ("bounds", "sweep-figure3", "sweep-figure6", "sweep-figure7", "sweep-figure8", "resources")


def _int_list(text: str):
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str):
    return [float(x) for x in text.split(",") if x.strip()]


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--n", type=int, help="qubits per state")
    p.add_argument("--N", type=int, help="rounds / distinct challenges")
    p.add_argument("--K", type=int, help="database size (default N)")
    p.add_argument("--M", type=int, help="copies per challenge")
    p.add_argument("--tau", type=float, help="absolute count tolerance for cVer")
    p.add_argument("--kappa", type=float)
    p.add_argument("--p", type=float, help="fraction of genuine rounds in lrv-id")
    p.add_argument("--mode", choices=(protocol.EXACT, protocol.SAMPLED))
    p.add_argument("--test", help="prover-side test for lrv-id: swap or ideal")
    p.add_argument("--transit-budget", dest="transit_budget", type=int)
    p.add_argument("--device-budget", dest="device_budget", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpufid", description="qPUF identification simulator")
    parser.add_argument("--version", action="version", version=f"qpufid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="honest protocol runs")
    p.add_argument("protocol", choices=PROTOCOLS)
    _add_config_flags(p)
    p.add_argument("--keep-transcripts", type=int, default=5, help="transcript files to write")

    p = sub.add_parser("attack", help="attack games")
    p.add_argument("protocol", choices=PROTOCOLS)
    p.add_argument("attacker", choices=ATTACKERS)
    _add_config_flags(p)
    p.add_argument("--alpha", type=float, help="bit-0 probability for classical-independent")
    p.add_argument("--d", type=int, help="transit queries spent by quantum attackers")
    p.add_argument("--rule", help="decision rule (quantum-collective/coherent) or forging rule (forger)")
    p.add_argument("--guess-test", dest="guess_test", help="ideal or swap test for trap guessing")
    p.add_argument("--strategy", choices=("haar", "basis"), help="learning queries")
    p.add_argument("--no-fast", dest="fast", action="store_false", help="always run full sessions")
    p.add_argument("--keep-transcripts", type=int, default=0)

    p = sub.add_parser("analyze", help="closed forms and sweeps")
    p.add_argument("target", choices=ANALYZE_TARGETS)
    p.add_argument("--N", type=_int_list, default=None, help="N value(s), comma separated")
    p.add_argument("--Nmin", type=int, default=4)
    p.add_argument("--Nmax", type=int, default=64)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--M", type=_int_list, default=None)
    p.add_argument("--Mmax", type=int, default=10)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--epsilon", type=_float_list, default=None)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("oracle", help="exhaustive cVer oracle")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--kappa", type=float, default=0.5)
    p.add_argument("--strategy", default="global", choices=("global", "independent", "guess-set", "optimal"))
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--out", help="output directory")
    return parser


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer", field="seed")


def resolve_config(args) -> tuple[ProtocolConfig, int, dict]:
    """Merge defaults, config file and flags. Returns ``(cfg, trials, effective)``."""
    merged = dict(DEFAULTS)
    merged["seed"] = _default_seed()
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found", field="config")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}", field="config")
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object", field="config")
        for key in data:
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown configuration key {key!r}", field=key)
        for key in ("n", "N"):
            if key not in data:
                raise ConfigError(f"missing required configuration key {key!r}", field=key)
        merged.update(data)
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    trials = int(merged.pop("trials"))
    if trials < 1:
        raise ConfigError("trials must be positive", field="trials")
    if isinstance(merged.get("tau"), float) and float(merged["tau"]).is_integer():
        merged["tau"] = int(merged["tau"])
    try:
        cfg = ProtocolConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc), field="config")
    effective = cfg.to_dict()
    effective["trials"] = trials
    return cfg, trials, effective


class Output:
    """Collects files for one command and writes them plus a manifest."""

    def __init__(self, out: str | None, argv, command: str):
        self.dir = Path(out) if out else None
        self.argv = list(argv)
        self.command = command
        self.files: dict[str, str] = {}
        self.started = time.time()

    def add(self, name: str, text: str):
        self.files[name] = text

    def finish(self, config: dict, seed: int | None):
        if self.dir is None:
            return
        for name, text in sorted(self.files.items()):
            path = self.dir / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": config,
            "seed": seed,
            "code_version": __version__,
            "outputs": sorted(self.files),
            "started_utc": datetime.fromtimestamp(self.started, timezone.utc).isoformat(),
            "wall_clock_seconds": round(time.time() - self.started, 3),
        }
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def cmd_run(args, argv) -> int:
    cfg, trials, eff = resolve_config(args)
    cfg.validate(args.protocol)
    out = Output(args.out, argv, "run")
    rows = []
    hits = 0
    probs = []
    for t in range(trials):
        prover = HonestProver(cfg.test)
        res = protocol.session(args.protocol, cfg, prover, qstate.substream(cfg.seed, "trial", t))
        hits += res.accepted
        pa = res.acceptance_probability
        if pa is not None:
            probs.append(pa)
        rows.append((t, int(res.accepted), "" if pa is None else repr(float(pa))))
        if t < args.keep_transcripts:
            out.add(f"transcripts/trial_{t:05d}.json", _dump(res.transcript))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "accepted", "acceptance_probability"])
    w.writerows(rows)
    out.add("runs.csv", buf.getvalue())
    lo, hi = binomial_interval(hits, trials)
    summary = {
        "protocol": args.protocol,
        "trials": trials,
        "accepted": int(hits),
        "accept_rate": hits / trials,
        "ci95": [lo, hi],
        "mode": cfg.mode,
        "seed": cfg.seed,
    }
    if probs:
        summary["mean_acceptance_probability"] = float(np.mean(probs))
    if args.protocol == protocol.LRV:
        summary["completeness_bound"] = analysis.cver_completeness_bound(cfg.N, cfg.tau).to_dict()
    out.add("summary.json", _dump(summary))
    out.finish(eff, cfg.seed)
    print(_dump(summary), end="")
    return 0


def cmd_attack(args, argv) -> int:
    cfg, trials, eff = resolve_config(args)
    params = {}
    if args.attacker == "classical-independent" and args.alpha is not None:
        params["alpha"] = args.alpha
    if args.attacker in ("forger", "quantum-collective", "quantum-coherent"):
        if args.d is not None:
            params["d"] = args.d
        if args.strategy:
            params["strategy"] = args.strategy
        if args.rule:
            params["rule"] = args.rule
    if args.attacker in ("quantum-collective", "quantum-coherent") and args.guess_test:
        params["test"] = args.guess_test
    if args.d is not None and cfg.transit_budget is None:
        cfg = cfg.replace(transit_budget=args.d)
        eff["transit_budget"] = args.d
    try:
        rec = run_attack_game(args.protocol, args.attacker, cfg, trials, cfg.seed, params=params, fast=args.fast,
                              keep_transcripts=args.keep_transcripts)
    except TypeError as exc:
        raise ConfigError(f"attacker parameters rejected: {exc}", field="attacker")
    out = Output(args.out, argv, "attack")
    summary = rec.summary()
    out.add("attack.json", _dump(summary))
    out.add("trials.csv", rec.trials_csv())
    for i, tr in enumerate(rec.transcripts):
        out.add(f"transcripts/trial_{i:05d}.json", _dump(tr))
    eff["attacker"] = args.attacker
    eff["attacker_params"] = params
    out.finish(eff, cfg.seed)
    brief = {k: summary[k] for k in ("protocol", "attacker", "trials", "successes", "rate", "ci", "path")}
    brief["bound"] = {k: summary["bound"][k] for k in ("analytic_value", "formula_id", "flag")}
    if rec.expected_rate is not None:
        brief["expected_rate"] = rec.expected_rate
    brief.update(rec.extras)
    print(_dump(brief), end="")
    return 0


def cmd_analyze(args, argv) -> int:
    t = args.target
    params = {k: v for k, v in vars(args).items() if k not in ("command", "target", "out")}
    if t == "bounds":
        Ns = args.N or [8]
        Ms = args.M or [1]
        parts = [analysis.bounds_csv(N, args.tau, M, args.delta, args.alpha, args.p) for N in Ns for M in Ms]
        text = parts[0] + "".join(p.split("\n", 1)[1] for p in parts[1:])
        name = "bounds.csv"
    elif t == "sweep-figure3":
        text = analysis.sweep_figure3(args.tau, args.Nmax, args.Nmin, args.alpha)
        name = "figure3.csv"
    elif t == "sweep-figure6":
        text = analysis.sweep_figure6(tuple(args.N or (16, 32, 64)))
        name = "figure6.csv"
    elif t == "sweep-figure7":
        text = analysis.sweep_figure7(args.epsilon, tuple(args.M or (1, 3, 7)))
        name = "figure7.csv"
    elif t == "sweep-figure8":
        text = analysis.sweep_figure8(args.Mmax, max(args.N or [10]))
        name = "figure8.csv"
    else:
        eps = args.epsilon or [2.0 ** -20]
        Ms = args.M or [3]
        parts = [analysis.resources_csv(e, M) for e in eps for M in Ms]
        text = parts[0] + "".join(p.split("\n", 1)[1] for p in parts[1:])
        name = "resources.csv"
    out = Output(args.out, argv, "analyze")
    out.add(name, text)
    out.finish(params, None)
    if args.out is None:
        sys.stdout.write(text)
    else:
        print(str(Path(args.out) / name))
    return 0


def cmd_oracle(args, argv) -> int:
    res = analysis.brute_force_cver(args.N, args.tau, args.p, args.strategy, args.alpha, args.kappa)
    report = {
        "N": res.N,
        "tau": res.tau,
        "p": res.p,
        "strategy": res.strategy,
        "value": float(res.exact),
        "value_exact": str(res.exact),
        "window_sum": float(res.window_sum),
        "optimum": float(res.optimum),
        "optimum_weight": res.optimum_weight,
        "per_weight": {str(w): str(f) for w, f in res.per_weight.items()},
    }
    out = Output(args.out, argv, "oracle")
    out.add("oracle.json", _dump(report))
    out.finish({k: v for k, v in vars(args).items() if k not in ("command", "out")}, None)
    print(_dump(report), end="")
    return 0


COMMANDS = {"run": cmd_run, "attack": cmd_attack, "analyze": cmd_analyze, "oracle": cmd_oracle}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, argv)
    except ConfigError as exc:
        where = f" (field: {exc.field})" if exc.field else ""
        print(f"qpufid: config error{where}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"qpufid: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
