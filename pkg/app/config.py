"""Config using Pydantic v2 settings."""
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"

    # Default locations for generated datasets and run outputs
    DATA_DIR: str = "data"
    OUTPUT_DIR: str = "runs"

    # Training defaults (50 epochs of Adam at 1e-4)
    EPOCHS: int = 50
    LEARNING_RATE: float = 1e-4
    BATCH_SIZE: int = 16

    # Robust explanation loss defaults
    ALPHA: float = 0.01
    GAMMA: float = 50.0
    LAMBDA_EXP: float = 1.0
    GAUSSIAN_KERNEL: int = 5
    GAUSSIAN_SIGMA: float = 1.5

    # Sweep execution. An empty broker runs cells in-process.
    SWEEP_WORKERS: int = 1
    BROKER_URL: str = ""  # e.g. redis://redis:6379/0
    RESULT_BACKEND: str = ""
    CELL_TIMEOUT: int = 3600
    DATASET_CACHE_SIZE: int = 4

    model_config = {
        "env_file": ".env",
        "env_prefix": "RES_",
        "extra": "ignore",
    }


settings = Settings()
