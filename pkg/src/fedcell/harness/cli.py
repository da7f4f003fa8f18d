"""Command line entry point: ``fedcell {train,federate,eval,adapt,report}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import OutputExistsError, adapt_experiment, evaluate, federate, train
from .report import report

log = logging.getLogger("fedcell")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedcell", description="Federated DQN transmit-power control for indoor small cells.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, checkpoint=False, needs_config=True):
        sp = sub.add_parser(name, help=help_)
        if needs_config:
            sp.add_argument("--config", required=True, type=Path, help="experiment JSON document")
            sp.add_argument("--seed", type=int, help="override the configured seed list with one seed")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")
        if checkpoint:
            sp.add_argument("--checkpoint", help="checkpoint path; {room} and {seed} are substituted")
        return sp

    add("train", "train one DQN agent per room and seed")
    add("federate", "FedAvg training across the federation rooms")
    add("eval", "frozen rollouts of a checkpoint or baseline policy", checkpoint=True)
    add("adapt", "fine-tune a global model in the held-out room next to a scratch twin", checkpoint=True)
    rp = add("report", "aggregate metrics.csv files into a policy-by-room summary table", needs_config=False)
    rp.add_argument("metrics_dir", type=Path)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("FEDCELL_LOG", "WARNING").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            print(report(args.metrics_dir, args.out), end="")
            return 0
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = args.out or Path(cfg.output_dir or f"runs/{cfg.scenario}-{args.command}")
        if args.command == "train":
            train(cfg, out, args.force)
        elif args.command == "federate":
            federate(cfg, out, args.force)
        elif args.command == "eval":
            rows = evaluate(cfg, out, args.checkpoint, args.force)
            for r in rows:
                print(f"{r.room}\t{r.policy}\tseed={r.seed}\tQ1={r.cumulative_q1_mbps:.2f}\tavg={r.cumulative_avg_mbps:.2f}")
        elif args.command == "adapt":
            if not args.checkpoint:
                raise ConfigError("adapt needs --checkpoint pointing at a global model")
            for rec in adapt_experiment(cfg, out, args.checkpoint, args.force):
                print(f"{rec['room']}\tseed={rec['seed']}\t{rec['init']}\treach={rec['episodes_to_reach']}")
    except ConfigError as exc:
        print(f"fedcell: config error: {exc}", file=sys.stderr)
        return 2
    except OutputExistsError as exc:
        print(f"fedcell: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"fedcell: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
