"""Command-line entry point: ``aris-hppo <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error. The default
output root is taken from the ``ARIS_HPPO_OUTPUT_ROOT`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ._validation import ConfigError
from .config import load_config
from .env import MANEUVER_NAMES
from . import experiments as ex

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _common(p, out=True):
    p.add_argument("--config", help="config file (default: packaged reference config)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    if out:
        p.add_argument("--out", help="run directory (default: $ARIS_HPPO_OUTPUT_ROOT/<command>-<hash>)")


def build_parser():
    parser = argparse.ArgumentParser(prog="aris-hppo", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("train", help="train agent.variant for every run seed"))
    p = sub.add_parser("eval", help="score a checkpoint on frozen fading snapshots")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("sweep-elements", help="ARIS element-count sweep incl. brute-force optimum")
    _common(p)
    p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("sweep-power", help="transmit-power x reward-design sweep")
    _common(p)
    p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("oracle", help="brute-force optimum per fading snapshot")
    _common(p)
    p.add_argument("--elements", type=int, nargs="+", help="ARIS element counts (default oracle.n_aris)")
    p = sub.add_parser("describe", help="print state/action layout and the resolved config")
    _common(p, out=False)
    p = sub.add_parser("selfcheck", help="gradient, channel, GAE, alignment and determinism checks")
    p.add_argument("--perturb-backward", action="store_true",
                   help="test hook: corrupt backprop so the gradient suite must fail")
    return parser


def describe(cfg):
    env = ex.make_env(cfg, n_envs=1)
    lines = [f"variant: {cfg.get('agent', 'variant')}", f"state_dim: {env.state_dim}", "state layout:"]
    lines += [f"  [{a}:{b}] {text}" for a, b, text in env.state_layout()]
    n, m = env.n_aris, env.n_tris
    lines += ["action layout:",
              f"  discrete: {len(MANEUVER_NAMES)} maneuvers {list(MANEUVER_NAMES)}"
              + ("" if env.has_maneuver else " (ignored: ARIS position fixed)"),
              f"  continuous[0:{n}] ARIS phases, pi*(c+1)",
              f"  continuous[{n}:{n + m}] TRIS phases, pi*(c+1)",
              f"  continuous[{n + m}:{n + m + 2}] alpha of CoMP BS 0, 1 in [0.55, 0.95]",
              f"config hash: {cfg.config_hash()}", "", cfg.to_text()]
    return "\n".join(lines)


def _run(args):
    if args.command == "selfcheck":
        from .selfcheck import run_selfcheck
        ok, results, timing = run_selfcheck(perturb_backward=args.perturb_backward)
        for r in results:
            print(r.line())
        print(f"{len(timing)} suites, {sum(not r.passed for r in results)} failed checks")
        return EXIT_OK if ok else EXIT_RUNTIME
    cfg = load_config(args.config, args.overrides)
    if args.command == "describe":
        print(describe(cfg))
        return EXIT_OK
    if args.command == "train":
        path, summaries = ex.run_train(cfg, args.out)
        for seed, m in summaries:
            print(f"seed {seed}: plateau reward {m['cum_reward']:.3f}, plateaued={m['plateaued']}")
    elif args.command == "eval":
        path, rows = ex.run_eval(cfg, args.checkpoint, args.out)
        print(f"mean sum rate {sum(r[1] for r in rows) / len(rows):.4f} bit/s/Hz")
    elif args.command == "sweep-elements":
        path, _ = ex.run_sweep_elements(cfg, args.out, workers=args.workers)
    elif args.command == "sweep-power":
        path, _ = ex.run_sweep_power(cfg, args.out, workers=args.workers)
    elif args.command == "oracle":
        path, _ = ex.run_oracle(cfg, args.out, args.elements)
    print(f"outputs in {path}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
