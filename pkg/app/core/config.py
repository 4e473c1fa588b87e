from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Project Settings
    PROJECT_NAME: str = "radon-nets"
    TOOL_VERSION: str = "0.1.0"
    FORMAT_VERSION: int = 1

    # Runtime Settings
    LOG_LEVEL: str = "INFO"
    DEFAULT_THREADS: int = 1
    OUTPUT_DIR: str = "./data/runs"

    # Operator Ball Settings
    NORM_TOL: float = 1e-10
    NORM_MAX_ITER: int = 10_000
    BALL_TOL: float = 1e-9

    # Measure Settings
    MERGE_TOLERANCE: float = 1e-8

    # Experiment Settings
    PROBE_COUNT: int = 512
    PROBE_SEED: int = 0
    VALIDATION_GRID: int = 256
    CERT_TOL: float = 1e-3
    LAMBDA_FLOOR: float = 1e-10

    # Solver Settings
    CONIC_SIZE_LIMIT: int = 50_000
    POLISH_SIZE_LIMIT: int = 20_000_000

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()
