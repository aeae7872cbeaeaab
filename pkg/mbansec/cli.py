# mbansec/cli.py
"""
Command-line entry points: handshake traces, scenario simulation, attack
comparison, assessment reports and the crypto self-test.

Exit codes: 0 success, 1 usage error, 2 scenario/config error, 3 failed
self-test vector.
"""
import argparse
import functools
import random
import sys
from pathlib import Path
from typing import List, Optional, TextIO

import pandas as pd

from config import Config
from logger import setup_logger

from . import assessment
from .adversary import AdversaryModel, AttackKind, compare_profiles, report_frame, run_attack
from .assoc_protocols import Role, create_session, resolve_roles, run_handshake
from .crypto_suite import key_fingerprint, run_vectors
from .errors import MbanError, NotFound, UsageError
from .frame_codec import ASSOCIATION_PROTOCOLS, AssocProtocol
from .netsim import NodeFailure, Simulation, load_scenario_file, pair_scenario
from .schemas import Profile

logger = setup_logger("Cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_VECTORS = 3


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with its own status 2, and prints help to `out`."""

    def __init__(self, *args, out: Optional[TextIO] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.out = out

    def print_help(self, file=None):
        super().print_help(file or self.out)

    def print_usage(self, file=None):
        super().print_usage(file or self.out)

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _profile(text: str) -> Profile:
    try:
        return Profile(text.strip().lower())
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown profile {text!r}")


def _profiles(text: str) -> List[Profile]:
    return [_profile(p) for p in text.split(",") if p.strip()]


def _protocol(text: str) -> AssocProtocol:
    try:
        protocol = AssocProtocol.from_roman(text)
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown protocol {text!r}")
    if protocol not in ASSOCIATION_PROTOCOLS:
        raise argparse.ArgumentTypeError("association protocols are I to V")
    return protocol


def _failure(text: str) -> NodeFailure:
    try:
        addr, tick = text.split("@")
        return NodeFailure(int(addr, 0), int(tick))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ADDR@TICK, got {text!r}")


def _kinds(text: str) -> List[AttackKind]:
    return [AttackKind.parse(k) for k in text.split(",") if k.strip()]


def build_parser(out: Optional[TextIO] = None) -> argparse.ArgumentParser:
    parser = _Parser(prog="mbansec", description="IEEE 802.15.6 MAC security model and simulator", out=out)
    sub = parser.add_subparsers(dest="command", parser_class=functools.partial(_Parser, out=out))

    hs = sub.add_parser("handshake", help="run one association between a sensor and its hub")
    hs.add_argument("--protocol", type=_protocol, default=AssocProtocol.preshared_mk, help="I, II, III, IV or V")
    hs.add_argument("--seed", type=int, default=Config.DEFAULT_SEED)
    hs.add_argument("--profile", type=_profile, default=_profile(Config.DEFAULT_PROFILE))
    hs.add_argument("--mitm", action="store_true", help="place a man in the middle without any secrets")

    sim = sub.add_parser("simulate", help="run a scenario and print its frame trace")
    sim.add_argument("scenario")
    sim.add_argument("--profile", type=_profile, default=_profile(Config.DEFAULT_PROFILE))
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--ticks", type=int, default=None)
    sim.add_argument("--format", choices=("csv", "table"), default="csv")
    sim.add_argument("--out", default=None)
    sim.add_argument("--fail", type=_failure, action="append", default=[], metavar="ADDR@TICK")

    atk = sub.add_parser("attack", help="compare attack success across profiles")
    atk.add_argument("scenario")
    atk.add_argument("--kinds", type=_kinds, required=True)
    atk.add_argument("--profile", type=_profiles, default=[Profile.baseline])
    atk.add_argument("--seed", type=int, default=Config.DEFAULT_SEED)
    atk.add_argument("--attempts", type=int, default=None)
    atk.add_argument("--format", choices=("csv", "table"), default="csv")
    atk.add_argument("--out", default=None)

    ass = sub.add_parser("assess", help="coverage and fulfillment matrices")
    ass.add_argument("--profile", type=_profile, default=Profile.baseline)
    ass.add_argument("--use-cases", default="UC1,UC2,UC3")
    ass.add_argument("--format", choices=("csv", "table"), default="table")
    ass.add_argument("--data", default=None)

    sub.add_parser("vectors", help="run the embedded CMAC, CCM and P-256 known-answer tests")
    return parser


def _scenario_path(name: str) -> str:
    path = Path(name)
    if path.exists():
        return str(path)
    bundled = Path(Config.SCENARIO_DIR) / name
    if bundled.exists():
        return str(bundled)
    repo = Path(__file__).resolve().parent.parent / Config.SCENARIO_DIR / name
    if repo.exists():
        return str(repo)
    raise NotFound(f"scenario {name} not found")


def _emit(text: str, out: TextIO, path: Optional[str] = None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        out.write(text)


def _render(df: pd.DataFrame, fmt: str) -> str:
    if fmt == "csv":
        return df.to_csv(index=False)
    return (df.to_string(index=False) if not df.empty else "  ".join(df.columns)) + "\n"


# ------------------------
# Subcommands
# ------------------------

def cmd_handshake(args, out: TextIO) -> int:
    scenario = pair_scenario(args.protocol)
    if args.mitm:
        report = run_attack(scenario, AttackKind.mitm_handshake, AdversaryModel(), args.seed, args.profile,
                            attempts=1, protocol=args.protocol)
        out.write(report_frame([report]).to_csv(index=False))
        return EXIT_OK

    sim = Simulation(scenario, args.profile, args.seed)
    node, hub = sim.by_name["sensor"], sim.by_name["hub"]
    sss = sim.suite_for(sim.nodes[node].spec)
    cfg_i, cfg_r = sim.session_configs(node, hub, sss, random.Random(f"{args.seed}:handshake"))
    initiator = create_session(Role.initiator, args.protocol, cfg_i)
    responder = create_session(Role.responder, args.protocol, cfg_r)
    trace = run_handshake(initiator, responder)

    ini, resp = resolve_roles(node, hub)
    rows = [[e.sender, e.recipient, e.phase, e.size, e.tagged, e.delivered] for e in trace]
    out.write(pd.DataFrame(rows, columns=["sender", "recipient", "phase", "octets", "tagged", "delivered"])
              .to_string(index=False) + "\n")
    agreed = (initiator.activated and responder.activated
              and initiator.result.mk.material == responder.result.mk.material)
    out.write(f"protocol={args.protocol.roman} initiator={ini} responder={resp} messages={len(trace)}\n")
    if agreed:
        out.write(f"mk={key_fingerprint(initiator.result.mk)} "
                  f"mutual={initiator.result.mutually_authenticated}\n")
    else:
        reason = initiator.abort_reason or responder.abort_reason
        out.write(f"aborted reason={reason.value if reason else 'incomplete'}\n")
    logger.info(f"handshake {args.protocol.roman} seed={args.seed} agreed={agreed}")
    return EXIT_OK


def cmd_simulate(args, out: TextIO) -> int:
    config = load_scenario_file(_scenario_path(args.scenario))
    sim = Simulation(config, args.profile, args.seed)
    for failure in args.fail:
        sim.inject(failure)
    sim.run(args.ticks if args.ticks is not None else config.duration)
    if args.format == "csv":
        text = sim.trace_csv()
    else:
        snap = sim.snapshot()
        header = (f"scenario={config.name} profile={snap['profile']} tick={snap['tick']} hub={snap['hub']} "
                  f"admitted={snap['admitted']} delivered={snap['delivered']}\n")
        text = header + _render(sim.trace_frame(), "table")
    _emit(text, out, args.out)
    return EXIT_OK


def cmd_attack(args, out: TextIO) -> int:
    config = load_scenario_file(_scenario_path(args.scenario))
    reports = compare_profiles(config, args.kinds, args.seed, profiles=args.profile, attempts=args.attempts)
    for report in reports:
        logger.info(f"attack {report.kind.value} on {config.name} [{report.profile.value}]: "
                    f"{report.successes}/{report.attempts}")
    _emit(_render(report_frame(reports), args.format), out, args.out)
    return EXIT_OK


def cmd_assess(args, out: TextIO) -> int:
    data = assessment.load_assessment(args.data)
    use_cases = [u.strip() for u in args.use_cases.split(",") if u.strip()]
    coverage = assessment.coverage_matrix(use_cases, data)
    fulfillment = assessment.fulfillment_matrix(args.profile, data=data)
    assessment.trace_recommendations(assessment.baseline_verdicts(data), data)

    cov_csv, cov_table = assessment.export_report(coverage, title="Coverage")
    ful_csv, ful_table = assessment.export_report(fulfillment, title=f"Fulfillment ({args.profile.value})")
    if args.format == "csv":
        out.write(cov_csv + "\n" + ful_csv)
    else:
        gaps = assessment.completeness_gaps(use_cases, data)
        out.write(cov_table + f"gaps: {', '.join(gaps) if gaps else 'none'}\n\n" + ful_table)
    return EXIT_OK


def cmd_vectors(args, out: TextIO) -> int:
    results = run_vectors()
    for name, passed in results:
        out.write(f"{'PASS' if passed else 'FAIL'} {name}\n")
    failed = [name for name, passed in results if not passed]
    if failed:
        logger.error(f"{len(failed)} known-answer vector(s) failed: {', '.join(failed)}")
        return EXIT_VECTORS
    return EXIT_OK


COMMANDS = {
    "handshake": cmd_handshake,
    "simulate": cmd_simulate,
    "attack": cmd_attack,
    "assess": cmd_assess,
    "vectors": cmd_vectors,
}


def run_cli(argv: Optional[List[str]] = None, out: Optional[TextIO] = None, err: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser(out)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        return COMMANDS[args.command](args, out)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except UsageError as e:
        err.write(f"{e}\n{parser.format_usage()}")
        return EXIT_USAGE
    except MbanError as e:
        logger.error(f"{type(e).__name__}: {e}")
        err.write(f"error: {e}\n")
        return EXIT_CONFIG
