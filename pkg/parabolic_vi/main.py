import argparse
import logging
import sys

from .config import API_PORT
from .errors import ObstacleProblemError
from .harness import SUBCOMMANDS, run
from .scenarios import parse_config
from .storage import FORMATS, emit

logger = logging.getLogger("parabolic_vi")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Penalized parabolic obstacle problems with convex obstacles")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name, help=f"Run '{name}' on a scenario")
        sub.add_argument("--config", required=True, help="Scenario file, or builtin:<name>")
        sub.add_argument("--out", required=True, help="Output directory")
        sub.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
        sub.add_argument("--format", choices=FORMATS, default="json", help="Result format")

    serve = subparsers.add_parser("serve", help="Browse an emitted result over HTTP")
    serve.add_argument("--out", required=True, help="Directory holding result.json")
    serve.add_argument("--port", type=int, default=API_PORT, help="API port")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command is None:
        parser.print_help()
        return 2

    if args.command == "serve":
        from .api import create_app

        try:
            app = create_app(args.out)
        except ObstacleProblemError as exc:
            logger.error("Cannot load a result from %s: %s", args.out, exc)
            return 2
        app.run(host="127.0.0.1", port=args.port, use_reloader=False)
        return 0

    try:
        config = parse_config(args.config)
        result = run(config, args.command, out_dir=args.out, seed=args.seed)
        emit(result, args.out, args.format)
    except ObstacleProblemError as exc:
        logger.error("%s", exc)
        return 2
    for name, c in result.checks.items():
        logger.info("%-24s %s  value=%s limit=%s", name, "PASS" if c["passed"] else "FAIL", c["value"], c["limit"])
    logger.info("Result hash %s", result.result_hash())
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
