import logging
import sys
import traceback
from typing import List, Optional

from app.commands.registry import build_parser
from app.core.config import settings
from app.core.errors import ConfigurationError, ParseError, PreconditionError
from app.services.experiments import ExperimentService, load_experiment_config

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; exit code 2 for bad input, 1 for unexpected failures"""
    args = build_parser().parse_args(argv)
    if args.log_level:
        logging.getLogger().setLevel(args.log_level.upper())

    try:
        config = load_experiment_config(args.config, seed=args.seed, output_dir=args.out)
        service = ExperimentService(config, threads=args.threads)
        logger.info(f"{args.command}: seed={config.seed} config_hash={config.config_hash()[:12]}")
        args.handler(args, service)
    except (ParseError, ConfigurationError, PreconditionError, OSError) as exc:
        logger.error(f"{args.command} failed: {exc}")
        return 2
    except Exception as exc:
        logger.error(
            f"Unhandled error in {args.command}: {exc}\n"
            f"{''.join(traceback.format_exception(type(exc), exc, exc.__traceback__))}"
        )
        return 1
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
