import json

from app.services.experiments import ExperimentService


def register(subparsers) -> None:
    parser = subparsers.add_parser("gen", help="Synthesise a ground-truth network")
    parser.add_argument("--atoms", type=int, required=True, help="Number of atoms (signs alternate)")
    parser.add_argument("--separation", type=float, default=0.0, help="Minimal +/- operator-norm separation")
    parser.add_argument("--certify", action="store_true", help="Also verify the source condition")
    parser.add_argument("--samples", type=int, default=200, help="Sample inputs used by the certificate")
    parser.add_argument("--grid", type=int, default=0, help="Validation grid size (0: settings default)")
    parser.set_defaults(handler=run)


def run(args, service: ExperimentService) -> None:
    """Write truth.json (and truth_certificate.json with --certify)"""
    summary = service.generate(args.atoms, args.separation, args.certify, args.samples, args.grid)
    print(json.dumps(summary, sort_keys=True, indent=2))
