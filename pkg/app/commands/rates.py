from app.core.errors import ParseError
from app.schemas.reports import ErrorKind
from app.schemas.solver import NoiseScheme
from app.services.experiments import ExperimentService


def _grid(text: str, cast):
    try:
        return [cast(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ParseError(f"invalid grid {text!r}", "command line")


def register(subparsers) -> None:
    parser = subparsers.add_parser("rates", help="Approximation or Bregman rate experiments")
    parser.add_argument("which", choices=["approx", "bregman"])
    parser.add_argument("--model", required=True)
    parser.add_argument("--trials", type=int, default=20, help="Trials per grid point")
    parser.add_argument("--n-grid", default="16,64,256,1024,4096", help="Comma-separated atom counts")
    parser.add_argument("--error", choices=[e.value for e in ErrorKind], default=ErrorKind.SUP_DSTAR.value)
    parser.add_argument("--probes", type=int, default=0, help="Probe points for sup-dstar, 0 for PROBE_COUNT")
    parser.add_argument("--certificate", default=None, help="Reference certificate (bregman)")
    parser.add_argument("--eps-grid", default="0.2,0.1,0.05,0.025", help="Comma-separated decreasing noise levels")
    parser.add_argument("--c-lambda", type=float, default=1.0)
    parser.add_argument("--c-m", type=float, default=1.0)
    parser.add_argument("--m-cap", type=int, default=100_000, help="Upper bound on the sample count m")
    parser.add_argument("--scheme", choices=[s.value for s in NoiseScheme], default=NoiseScheme.GAUSSIAN.value)
    parser.set_defaults(handler=run)


def run(args, service: ExperimentService) -> None:
    if args.which == "approx":
        paths = service.rates_approx(
            args.model, _grid(args.n_grid, int), args.trials, ErrorKind(args.error), args.probes
        )
    else:
        if args.certificate is None:
            raise ParseError("bregman rates need --certificate", "command line")
        paths = service.rates_bregman(
            args.model,
            args.certificate,
            _grid(args.eps_grid, float),
            args.trials,
            args.c_lambda,
            args.c_m,
            args.m_cap,
            NoiseScheme(args.scheme),
        )
    for path in paths:
        print(path)
