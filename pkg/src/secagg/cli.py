"""Measurement harness: run simulated sessions from the command line.

Three subcommands share one flat configuration:

  run     honest sessions; reports per-iteration outcomes and metrics
  attack  a malicious-server script plus the assertion that the protocol
          defended itself (aborted, or at least never returned a sum
          silently off from the truth)
  join    a session that admits new clients mid-stream and keeps going

Exit codes: 0 on success or a held assertion, 2 for configuration
errors, 3 when an honest run aborted, 4 when an attack assertion failed.

Configuration comes from an optional key=value file (--config) overlaid
by command-line flags. Keys match the long flag names with dashes
replaced by underscores.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

from .errors import DegenerateExtension, InvalidConfig, InvalidPlan, SecaggError
from .groups import bench_group, production_group, test_group
from .simnet import (
    AdversaryScript,
    Session,
    SessionSpec,
    run_session,
    write_metrics,
)

GROUPS = {
    "production": production_group,
    "bench": bench_group,
    "test": test_group,
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_ASSERTION = 4


@dataclass
class ExperimentConfig:
    """One experiment, fully specified."""

    clients: int = 100
    decryptors: int = 40
    threshold: int = 27
    vector_len: int = 16000
    dropout: float = 0.05
    eta_c: float = 0.0
    eta_d: float = 0.05
    iters: int = 3
    mode: str = "oneround"
    selection: str = "static"
    participants: Optional[int] = None
    seed: int = 0
    backend: str = "production"
    full_range: bool = False
    trials: int = 1
    kappa2: Optional[int] = None
    join_count: int = 2
    out: Optional[str] = None

    def validate(self) -> None:
        if self.backend not in GROUPS:
            raise InvalidConfig(
                f"unknown backend {self.backend!r}; pick one of {sorted(GROUPS)}"
            )
        if self.trials < 1:
            raise InvalidConfig("trials must be at least 1")
        if Fraction(str(self.dropout)) > Fraction(str(self.eta_d)):
            raise InvalidPlan(
                f"dropout rate {self.dropout} exceeds the tolerated fraction {self.eta_d}"
            )

    def to_spec(self) -> SessionSpec:
        if self.selection == "static":
            round_size = self.participants
            num = den = None
        else:
            num = self.participants if self.participants is not None else self.clients // 2
            den = self.clients
            round_size = None
        return SessionSpec(
            n_clients=self.clients,
            committee_size=self.decryptors,
            kappa=self.threshold,
            vector_len=self.vector_len,
            iterations=self.iters,
            eta_c=self.eta_c,
            eta_d=self.eta_d,
            dropout_rate=self.dropout,
            selection=self.selection,
            round_size=round_size,
            select_num=num,
            select_den=den,
            mode=self.mode,
            input_bits=32 if self.full_range else 16,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}

# the one flag whose name is not its field name
_KEY_ALIASES = {"len": "vector_len"}


def load_config_file(path: str) -> Dict[str, object]:
    """Parse a flat key=value file; '#' starts a comment."""
    values: Dict[str, object] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            key = _KEY_ALIASES.get(key, key)
            value = value.strip()
            if key not in _FIELD_TYPES:
                raise InvalidConfig(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, value)
    return values


def _parse_value(key: str, value: str) -> object:
    kind = _FIELD_TYPES[key]
    if kind == "bool":
        lowered = value.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise InvalidConfig(f"{key} wants a boolean, got {value!r}")
    if kind in ("int", "Optional[int]"):
        return int(value)
    if kind == "float":
        return float(value)
    return value


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig()
    if args.config is not None:
        config = replace(config, **load_config_file(args.config))
    overrides = {}
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    if overrides:
        config = replace(config, **overrides)
    config.validate()
    return config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key=value experiment file")
    parser.add_argument("--clients", type=int, help="population size (default 100)")
    parser.add_argument("--decryptors", type=int, help="committee size (default 40)")
    parser.add_argument("--threshold", type=int, help="recovery threshold (default 27)")
    parser.add_argument(
        "--len", dest="vector_len", type=int, help="input vector length (default 16000)"
    )
    parser.add_argument("--dropout", type=float, help="per-iteration dropout rate")
    parser.add_argument("--eta-c", dest="eta_c", type=float, help="corruption budget")
    parser.add_argument("--eta-d", dest="eta_d", type=float, help="dropout budget")
    parser.add_argument("--iters", type=int, help="collection iterations (default 3)")
    parser.add_argument(
        "--mode", choices=("oneround", "tss"), help="check-and-release flavor"
    )
    parser.add_argument(
        "--selection", choices=("static", "dynamic"), help="participant selection"
    )
    parser.add_argument(
        "--participants", type=int,
        help="round size (static) or expected round size (dynamic)",
    )
    parser.add_argument("--seed", type=int, help="master seed (default 0)")
    parser.add_argument(
        "--backend", choices=sorted(GROUPS), help="group backend (default production)"
    )
    parser.add_argument(
        "--full-range", dest="full_range", action="store_const", const=True,
        help="draw 32-bit inputs instead of 16-bit",
    )
    parser.add_argument("--trials", type=int, help="independent sessions to run")
    parser.add_argument("--out", metavar="FILE", help="write metrics CSV here")
    parser.add_argument("--kappa2", type=int, help="threshold for joined members")
    parser.add_argument("--join-count", dest="join_count", type=int,
                        help="clients to admit in the join command (default 2)")


def _out_path(base: str, trial: int, trials: int) -> str:
    if trials == 1:
        return base
    stem, dot, ext = base.rpartition(".")
    if not dot:
        return f"{base}-trial{trial}"
    return f"{stem}-trial{trial}.{ext}"


def _tally(all_outcomes: Sequence[Sequence[str]]) -> Dict[str, int]:
    tally = {"sum_ok": 0, "abort": 0, "wrong_sum": 0}
    for outcomes in all_outcomes:
        for outcome in outcomes:
            tally[outcome] += 1
    return tally


def cmd_run(config: ExperimentConfig) -> int:
    group = GROUPS[config.backend]()
    spec = config.to_spec()
    collected: List[List[str]] = []
    for trial in range(config.trials):
        seed = config.seed + trial
        result = run_session(group, spec, seed=seed)
        collected.append(result.outcomes)
        print(f"trial {trial} seed {seed}: {' '.join(result.outcomes)}")
        if config.out is not None:
            path = _out_path(config.out, trial, config.trials)
            write_metrics(result.rows, path)
            print(f"trial {trial} metrics -> {path}")
    tally = _tally(collected)
    total = sum(tally.values())
    print(
        f"{total} iterations: {tally['sum_ok']} sum_ok, "
        f"{tally['abort']} abort, {tally['wrong_sum']} wrong_sum"
    )
    if tally["wrong_sum"]:
        print("error: an honest run produced a wrong sum", file=sys.stderr)
        return 1
    if tally["abort"]:
        return EXIT_ABORT
    return EXIT_OK


def _build_script(config: ExperimentConfig, scenario: str, split: Optional[int]) -> AdversaryScript:
    committee = list(range(1, config.decryptors + 1))
    if scenario == "inconsistent_sets":
        count = split if split is not None else config.decryptors // 2
        if not 0 < count <= config.decryptors:
            raise InvalidConfig(f"split {count} does not fit the committee")
        partition = {m: 1 for m in committee[-count:]}
        return AdversaryScript(mode=scenario, partition=partition)
    if scenario == "inconsistent_model":
        count = split if split is not None else config.clients // 2
        if not 0 < count <= config.clients:
            raise InvalidConfig(f"split {count} does not fit the population")
        partition = {i: 1 for i in range(1, count + 1)}
        return AdversaryScript(mode=scenario, partition=partition)
    # drop_responses: default silences just enough members to starve recovery
    count = split if split is not None else config.decryptors - config.threshold
    if not 0 < count <= config.decryptors:
        raise InvalidConfig(f"split {count} does not fit the committee")
    return AdversaryScript(mode="drop_responses", drops=tuple(committee[-count:]))


_ATTACK_EXPECTATION = {
    # set equivocation must be caught outright
    "inconsistent_sets": ("abort",),
    # model equivocation is visible in the result, never silent
    "inconsistent_model": ("wrong_sum",),
    # withheld responses may cost liveness but never correctness
    "drop_responses": ("abort", "sum_ok"),
}


def cmd_attack(config: ExperimentConfig, scenario: str, split: Optional[int]) -> int:
    group = GROUPS[config.backend]()
    spec = config.to_spec()
    script = _build_script(config, scenario, split)
    expected = _ATTACK_EXPECTATION[scenario]
    collected: List[List[str]] = []
    for trial in range(config.trials):
        seed = config.seed + trial
        result = run_session(group, spec, script=script, seed=seed)
        collected.append(result.outcomes)
        print(f"trial {trial} seed {seed}: {' '.join(result.outcomes)}")
        if config.out is not None:
            path = _out_path(config.out, trial, config.trials)
            write_metrics(result.rows, path)
    tally = _tally(collected)
    held = all(o in expected for outcomes in collected for o in outcomes)
    print(
        f"scenario {scenario}: {tally['sum_ok']} sum_ok, "
        f"{tally['abort']} abort, {tally['wrong_sum']} wrong_sum"
    )
    if held:
        print(f"assertion held: every outcome in {'/'.join(expected)}")
        return EXIT_OK
    print(
        f"assertion FAILED: expected only {'/'.join(expected)}", file=sys.stderr
    )
    return EXIT_ASSERTION


def cmd_join(config: ExperimentConfig) -> int:
    group = GROUPS[config.backend]()
    spec = config.to_spec()
    kappa2 = config.kappa2
    if kappa2 is None:
        kappa2 = config.decryptors + 1
    session = Session(group, spec, seed=config.seed)
    for t in range(1, config.iters + 1):
        outcome = session.run_iteration(t)
        print(f"iteration {t}: {outcome}")
    before = len(session.rows)
    try:
        session.join(config.join_count, kappa2=kappa2)
    except DegenerateExtension as exc:
        print(f"join refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    join_rows = [r for r in session.rows[before:] if r.phase == "join"]
    boxes = [r for r in join_rows if r.msg_type == "SEEDSHARE" and r.bytes_sent > 0]
    existing = [r for r in boxes if r.entity_id <= spec.n_clients]
    print(
        f"joined {config.join_count} clients at threshold {kappa2}: "
        f"{len(existing)} extension boxes from existing clients, "
        f"{len(boxes) - len(existing)} dealing boxes from new clients"
    )
    for t in range(config.iters + 1, 2 * config.iters + 1):
        outcome = session.run_iteration(t)
        print(f"iteration {t}: {outcome}")
    if config.out is not None:
        write_metrics(session.rows, config.out)
        print(f"metrics -> {config.out}")
    tally = _tally([session.outcomes])
    if tally["wrong_sum"]:
        print("error: a join run produced a wrong sum", file=sys.stderr)
        return 1
    if tally["abort"]:
        return EXIT_ABORT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="secagg",
        description="Measure secure-aggregation sessions on a simulated network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="honest sessions")
    _add_common(p_run)

    p_attack = sub.add_parser("attack", help="malicious-server scripts")
    _add_common(p_attack)
    p_attack.add_argument(
        "--scenario",
        required=True,
        choices=sorted(_ATTACK_EXPECTATION),
        help="what the server tries",
    )
    p_attack.add_argument(
        "--split", type=int,
        help="parties on the doctored side (default: a natural split)",
    )

    p_join = sub.add_parser("join", help="admit clients mid-session")
    _add_common(p_join)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
        if args.command == "run":
            return cmd_run(config)
        if args.command == "attack":
            return cmd_attack(config, args.scenario, args.split)
        return cmd_join(config)
    except (InvalidConfig, InvalidPlan, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SecaggError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
