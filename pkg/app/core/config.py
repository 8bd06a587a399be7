from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    PROJECT_NAME: str = "OTFS-ISAC Link Simulator"
    API_V1_STR: str = "/api/v1"
    LOG_LEVEL: str = "INFO"
    # Trial-level thread pool size; 1 runs trials serially
    MAX_WORKERS: int = 1
    DEFAULT_OUTPUT_DIR: str = "results"
    PLOT_FORMAT: str = "svg"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="OTFS_ISAC_", extra="ignore")


settings = Settings()
