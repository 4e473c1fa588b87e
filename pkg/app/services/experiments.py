"""File-level workflows behind the command-line subcommands."""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from app.core.errors import ParseError, PreconditionError
from app.schemas.experiment import ExperimentConfig
from app.schemas.reports import ErrorKind, SolverFlag
from app.schemas.solver import NoiseScheme, TrainingMode
from app.services.approximation import bochner_error, rate_experiment, sup_dstar_error
from app.services.certificates import (
    bregman_distance,
    check_separation,
    debias,
    separation_bound,
    solution_certificate,
    validate_certificate,
    verify_source_condition,
)
from app.services.datasets import make_dataset
from app.services.distributions import sample_inputs
from app.services.fidelity import fidelity
from app.services.measures import lipschitz_bound, radon_norm, random_measure
from app.services.sweeps import rate_sweep
from app.services.training import lambda_max, max_residual, solve_least_error, solve_variational
from app.storage.datasets import load_dataset, save_dataset
from app.storage.models import load_certificate, load_model, read_json, save_certificate, save_model
from app.storage.reports import artifact_metadata, write_rate_report, write_report, write_sweep_report
from app.tasks.pool import derive_rng

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# stream keys, one per subcommand
GEN, DATASET, TRAIN, CERTIFY, EVAL = range(5)


def load_experiment_config(
    path: PathLike, seed: Optional[int] = None, output_dir: Optional[str] = None
) -> ExperimentConfig:
    """Read the experiment JSON, applying command-line overrides"""
    payload = read_json(path)
    if seed is not None:
        payload["seed"] = seed
    if output_dir is not None:
        payload["output_dir"] = output_dir
    try:
        return ExperimentConfig.model_validate(payload)
    except ValueError as exc:
        errors = getattr(exc, "errors", lambda: [])()
        location = ".".join(str(part) for part in errors[0]["loc"]) if errors else None
        raise ParseError(errors[0]["msg"] if errors else str(exc), f"{path}: field {location}")


class ExperimentService:
    def __init__(self, config: ExperimentConfig, threads: int = 0):
        self.config = config
        self.threads = threads
        self.out_dir = Path(config.output_dir)

    @property
    def space(self):
        return self.config.space

    def _path(self, name: str) -> Path:
        return self.out_dir / name

    def _meta(self, **extra) -> Dict[str, Any]:
        return {**artifact_metadata(self.config), **extra}

    def generate(
        self,
        atoms: int,
        separation: float = 0.0,
        certify: bool = False,
        samples: int = 200,
        grid_size: int = 0,
    ) -> Dict[str, Any]:
        """Synthesise a ground truth and optionally its source-condition certificate"""
        rng = derive_rng(self.config.seed, GEN)
        a = random_measure(self.space, atoms, rng, separation=separation)
        model_path = save_model(a, self._path("truth.json"), self._meta(separation=separation))
        summary: Dict[str, Any] = {
            "model": str(model_path),
            "atoms": len(a),
            "radon_norm": radon_norm(a),
        }
        if certify:
            inputs = sample_inputs(self.config.distribution, self.space.d, samples, rng)
            result = verify_source_condition(a, inputs, grid_size, rng, self.config.solver)
            report = result.report
            if result.certificate is not None:
                bound = separation_bound(result.certificate, p=2.0)
                report = report.model_copy(
                    update={
                        "separation_bound": bound,
                        "separation": check_separation(a, bound, equality_tol=1e-6),
                    }
                )
                cert_path = save_certificate(
                    result.certificate, self.space, self._path("truth_certificate.json"), self._meta()
                )
                summary["certificate"] = str(cert_path)
            elif result.violating_matrix is not None:
                summary["violating_operator"] = np.asarray(result.violating_matrix).tolist()
            summary["source_condition"] = report.model_dump(mode="json")
        write_report(summary, self._path("gen_report.json"), self.config)
        return summary

    def dataset(
        self,
        model_path: PathLike,
        m: int,
        epsilon: float,
        scheme: NoiseScheme = NoiseScheme.GAUSSIAN,
        name: str = "dataset.csv",
    ) -> Path:
        a = load_model(model_path, self.space)
        rng = derive_rng(self.config.seed, DATASET)
        data = make_dataset(
            a, self.config.distribution, m, epsilon, scheme, rng, self.config.fidelity.p, seed=self.config.seed
        )
        return save_dataset(data, self._path(name))

    def train(
        self,
        dataset_path: PathLike,
        mode: TrainingMode = TrainingMode.VARIATIONAL,
        lam: Optional[float] = None,
    ) -> Dict[str, Any]:
        """Fit a network to a dataset and report fidelity, norm and certificate status"""
        data = load_dataset(dataset_path, self.space)
        sc = self.config.solver
        fc = self.config.fidelity
        if lam is not None:
            sc = sc.model_copy(update={"lambda_": lam})
        rng = derive_rng(self.config.seed, TRAIN)
        summary: Dict[str, Any] = {"mode": TrainingMode(mode).value}

        if TrainingMode(mode) == TrainingMode.LEAST_ERROR:
            result = solve_least_error(data, sc, fc, rng)
            a = result.measure
            summary.update(
                {
                    "flags": [flag.value for flag in result.flags],
                    "final_lambda": result.lam,
                    "continuation": [step.model_dump(mode="json", by_alias=True) for step in result.trace],
                    "residual": max_residual(a, data),
                }
            )
        else:
            threshold = lambda_max(data, fc, sc, derive_rng(self.config.seed, TRAIN, 1))
            result = solve_variational(data, sc.lambda_, sc, fc, rng=rng)
            a = result.measure
            summary.update(
                {
                    "lambda": sc.lambda_,
                    "lambda_max": threshold,
                    "empty": len(a) == 0,
                    "objective": result.objective,
                    "objective_trace": result.objective_trace,
                    "flags": [flag.value for flag in result.flags],
                    "certificate_value": result.certificate_value,
                }
            )
            if len(a):
                # validate the raw v / lambda, save the polished one
                raw = solution_certificate(result, data, fc, polish=False)
                validation = validate_certificate(raw, a, rng=derive_rng(self.config.seed, TRAIN, 2), sc=sc)
                if not validation.valid:
                    logger.warning(
                        f"Solution certificate fails validation (max {validation.max_abs_value:.6g}, "
                        f"sign error {validation.sign_error:.3e})"
                    )
                    summary["flags"].append(SolverFlag.INVALID_CERTIFICATE.value)
                summary["certificate_validation"] = validation.model_dump(mode="json")
                polished = solution_certificate(result, data, fc, polish=True)
                save_certificate(polished, self.space, self._path("trained_certificate.json"), self._meta())

        summary.update({"atoms": len(a), "radon_norm": radon_norm(a), "fidelity": fidelity(a, data, fc)})
        save_model(a, self._path("trained.json"), self._meta(mode=summary["mode"]))
        write_report(summary, self._path("train_report.json"), self.config)
        return summary

    def evaluate(
        self,
        model_path: PathLike,
        dataset_path: Optional[PathLike] = None,
        reference_path: Optional[PathLike] = None,
        probe_count: int = 0,
        bochner_samples: int = 10_000,
    ) -> Dict[str, Any]:
        a = load_model(model_path, self.space)
        summary: Dict[str, Any] = {
            "atoms": len(a),
            "radon_norm": radon_norm(a),
            "lipschitz_bound": lipschitz_bound(a),
        }
        if dataset_path is not None:
            data = load_dataset(dataset_path, self.space)
            summary["fidelity"] = fidelity(a, data, self.config.fidelity)
            summary["max_residual"] = max_residual(a, data)
        if reference_path is not None:
            reference = load_model(reference_path, self.space)
            rng = derive_rng(self.config.seed, EVAL)
            summary["sup_dstar_error"] = sup_dstar_error(reference, a, probe_count, rng)
            summary["bochner_error"] = bochner_error(
                reference, a, self.config.distribution, self.config.fidelity.p, bochner_samples, rng
            )
        write_report(summary, self._path("eval_report.json"), self.config)
        return summary

    def certify(self, model_path: PathLike, dataset_path: Optional[PathLike] = None, samples: int = 200,
                grid_size: int = 0) -> Dict[str, Any]:
        """Verify the source condition of a model on dataset inputs or fresh samples"""
        a = load_model(model_path, self.space)
        rng = derive_rng(self.config.seed, CERTIFY)
        if dataset_path is not None:
            inputs = load_dataset(dataset_path, self.space).inputs
        else:
            inputs = sample_inputs(self.config.distribution, self.space.d, samples, rng)
        result = verify_source_condition(a, inputs, grid_size, rng, self.config.solver)
        summary: Dict[str, Any] = {"source_condition": result.report.model_dump(mode="json")}
        if result.certificate is not None:
            bound = separation_bound(result.certificate, p=2.0)
            summary["separation"] = check_separation(a, bound, equality_tol=1e-6).model_dump(mode="json")
            summary["certificate"] = str(
                save_certificate(result.certificate, self.space, self._path("certificate.json"), self._meta())
            )
        elif result.violating_matrix is not None:
            summary["violating_operator"] = np.asarray(result.violating_matrix).tolist()
        write_report(summary, self._path("certify_report.json"), self.config)
        return summary

    def debias(self, model_path: PathLike, certificate_path: PathLike, dataset_path: PathLike) -> Dict[str, Any]:
        a = load_model(model_path, self.space)
        cert = load_certificate(certificate_path, self.space)
        data = load_dataset(dataset_path, self.space)
        fc = self.config.fidelity
        refit = debias(a, cert, data, fc, self.config.solver)
        summary = {
            "atoms_before": len(a),
            "atoms_after": len(refit),
            "fidelity_before": fidelity(a, data, fc),
            "fidelity_after": fidelity(refit, data, fc),
            "bregman_to_input": bregman_distance(refit, cert).distance,
        }
        save_model(refit, self._path("debiased.json"), self._meta())
        write_report(summary, self._path("debias_report.json"), self.config)
        return summary

    def rates_approx(
        self,
        model_path: PathLike,
        n_grid: Sequence[int],
        trials: int,
        error_kind: ErrorKind = ErrorKind.SUP_DSTAR,
        probe_count: int = 0,
    ) -> List[Path]:
        a = load_model(model_path, self.space)
        report = rate_experiment(
            a,
            n_grid,
            trials,
            error_kind,
            seed=self.config.seed,
            probe_count=probe_count,
            dist=self.config.distribution,
            p=float(self.config.fidelity.p),
            threads=self.threads,
        )
        return write_rate_report(report, self.out_dir, self.config)

    def rates_bregman(
        self,
        model_path: PathLike,
        certificate_path: PathLike,
        eps_grid: Sequence[float],
        trials: int,
        c_lambda: float = 1.0,
        c_m: float = 1.0,
        m_cap: int = 100_000,
        scheme: NoiseScheme = NoiseScheme.GAUSSIAN,
    ) -> List[Path]:
        a = load_model(model_path, self.space)
        cert = load_certificate(certificate_path, self.space)
        if cert.m == 0:
            raise PreconditionError("reference certificate has no samples")
        report = rate_sweep(
            a,
            cert,
            eps_grid,
            self.config.distribution,
            self.config.solver,
            self.config.fidelity,
            seed=self.config.seed,
            trials=trials,
            c_lambda=c_lambda,
            c_m=c_m,
            m_cap=m_cap,
            noise_scheme=scheme,
            threads=self.threads,
        )
        return write_sweep_report(report, self.out_dir, self.config)
