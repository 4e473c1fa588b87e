import json

from app.services.experiments import ExperimentService


def register(subparsers) -> None:
    parser = subparsers.add_parser("debias", help="Refit weights on a fixed support")
    parser.add_argument("--model", required=True)
    parser.add_argument("--certificate", required=True)
    parser.add_argument("--dataset", required=True)
    parser.set_defaults(handler=run)


def run(args, service: ExperimentService) -> None:
    summary = service.debias(args.model, args.certificate, args.dataset)
    print(json.dumps(summary, sort_keys=True, indent=2))
