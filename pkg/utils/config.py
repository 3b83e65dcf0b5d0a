from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore"
    )

    LOG_LEVEL: str = "INFO"

    # Linear algebra
    DENSE_CAP: int = 2048
    TOL_PSD: float = 1e-10
    POWER_ITER_TOL: float = 1e-12
    POWER_ITER_MAX: int = 20000
    POWER_ITER_SEED: int = 0

    # Solvers
    DIVERGENCE_THRESHOLD: float = 1e100
    PF_CAP_FACTOR: float = 1e12
    PF_CHECK_ATOL: float = 1e-12
    RESIDUAL_REFRESH: int = 50

    # Reference solutions
    REFERENCE_TOL: float = 1e-10
    REFERENCE_MAX_ITER: int = 200000
    CD_ORACLE_MAX_DIM: int = 64
    CD_AGREEMENT_TOL: float = 1e-6

    # Caches
    CACHE_REFERENCE_LIMIT: int = 64
    CACHE_LIPSCHITZ_LIMIT: int = 256

settings = Settings()
