"""
Run configuration for the odds model pipeline.
Layered loading: defaults, then the configuration already saved in the output
directory (if any), then a YAML/JSON file, then ODDS_* environment variables, then CLI overrides.
The resolved configuration is written into every output directory for provenance.
"""
import json
import logging
import os
import threading
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .errors import ConfigError

log = logging.getLogger(__name__)

DEFAULT_BOOKMAKERS: Dict[str, str] = {
    "Bet365": "B365",
    "BetAndWin": "BW",
    "Interwetten": "IW",
    "Ladbrokes": "LB",
    "Sportingbet": "SB",
    "VCBet": "VC",
    "WilliamHill": "WH",
}

DEFAULT_BLOCKS: List[str] = [
    "mu", "drift", "att", "def", "scales",
    "p_home", "lambda_home", "p_away", "lambda_away", "alpha", "tau",
]

PPC_STATISTICS: List[str] = ["mean_goal_difference", "draw_frequency", "total_goals", "max_home_score"]


@dataclass
class RunSection:
    """Top-level run settings."""
    league: str = "D1"
    data_dir: str = "data"
    output_dir: str = "runs/default"
    method: str = "shin"
    test_season: Optional[int] = None
    seed: int = 2017
    use_test_odds: bool = True
    only_positive_ev: bool = False
    away_intercept: bool = False


@dataclass
class DataConfig:
    """Ingestion settings."""
    season_files: List[str] = field(default_factory=list)
    file_pattern: str = "{league}_*.csv"
    bookmakers: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_BOOKMAKERS))
    rate_cap: float = 12.0
    workers: int = 1


@dataclass
class PriorConfig:
    """Prior hyperparameters."""
    beta_a: float = 1.0
    beta_b: float = 1.0
    normal_scale: float = 10.0
    normal_is_variance: bool = True
    half_cauchy_scale: float = 2.5
    lambda_variance: float = 10.0
    alpha_variance: float = 100.0
    tau_half_cauchy_scale: float = 2.5

    @property
    def normal_sd(self) -> float:
        return self.normal_scale ** 0.5 if self.normal_is_variance else self.normal_scale


@dataclass
class SamplerConfig:
    """Adaptive Metropolis-within-Gibbs settings."""
    n_iterations: int = 5000
    n_burnin: int = 1000
    n_chains: int = 4
    seed: Optional[int] = None
    adapt_window: int = 50
    target_acceptance: float = 0.35
    adapt_gain: float = 1.0
    blocks: List[str] = field(default_factory=lambda: list(DEFAULT_BLOCKS))
    init_jitter: float = 0.1
    rate_thin: int = 4
    workers: int = 1
    rhat_threshold: float = 1.01
    rhat_fail: float = 1.05

    @property
    def n_retained(self) -> int:
        return self.n_iterations - self.n_burnin


@dataclass
class PredictConfig:
    """Forecast and simulation settings."""
    max_goals: int = 10
    max_draws: int = 2000
    n_simulations: int = 10000
    ppc_max_draws: int = 1000
    statistics: List[str] = field(default_factory=lambda: list(PPC_STATISTICS))
    season_projection: str = "evolve"


@dataclass
class BettingConfig:
    """Backtest settings."""
    strategies: List[str] = field(default_factory=lambda: ["A", "B"])
    bookmakers: List[str] = field(default_factory=list)
    forecast_source: str = "model"


@dataclass
class LoggingConfig:
    """Logging configuration."""
    level: str = "INFO"
    format: str = "%(asctime)s %(levelname)s %(name)s %(message)s"
    file_path: Optional[str] = None
    max_file_size: int = 10485760
    backup_count: int = 5


@dataclass
class MetricsConfig:
    """Metrics configuration."""
    enabled: bool = True
    export_path: Optional[str] = None


_SECTIONS = {
    "run": RunSection,
    "data": DataConfig,
    "prior": PriorConfig,
    "sampler": SamplerConfig,
    "predict": PredictConfig,
    "betting": BettingConfig,
    "logging": LoggingConfig,
    "metrics": MetricsConfig,
}

_ENV_MAPPINGS = {
    "ODDS_LEAGUE": ("run", "league"),
    "ODDS_DATA_DIR": ("run", "data_dir"),
    "ODDS_OUTPUT_DIR": ("run", "output_dir"),
    "ODDS_METHOD": ("run", "method"),
    "ODDS_TEST_SEASON": ("run", "test_season"),
    "ODDS_SEED": ("run", "seed"),
    "ODDS_USE_TEST_ODDS": ("run", "use_test_odds"),
    "ODDS_ONLY_POSITIVE_EV": ("run", "only_positive_ev"),
    "ODDS_AWAY_INTERCEPT": ("run", "away_intercept"),
    "ODDS_DATA_WORKERS": ("data", "workers"),
    "ODDS_SAMPLER_ITERATIONS": ("sampler", "n_iterations"),
    "ODDS_SAMPLER_BURNIN": ("sampler", "n_burnin"),
    "ODDS_SAMPLER_CHAINS": ("sampler", "n_chains"),
    "ODDS_SAMPLER_WORKERS": ("sampler", "workers"),
    "ODDS_PREDICT_SIMULATIONS": ("predict", "n_simulations"),
    "ODDS_LOGGING_LEVEL": ("logging", "level"),
    "ODDS_LOGGING_FILE_PATH": ("logging", "file_path"),
    "ODDS_METRICS_ENABLED": ("metrics", "enabled"),
    "ODDS_METRICS_EXPORT_PATH": ("metrics", "export_path"),
}


def _coerce(section: str, key: str, raw: str) -> Any:
    """Coerce a string to the type of the section field default."""
    default = getattr(_SECTIONS[section](), key)
    if isinstance(default, bool):
        return raw.lower() in ("true", "1", "yes", "on")
    if isinstance(default, int) or key in ("test_season", "seed"):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Merge section by section; values inside a section (including dicts such as
    data.bookmakers) are replaced, not merged."""
    result = {name: dict(values) for name, values in base.items()}
    for section, values in override.items():
        if not isinstance(values, dict):
            raise ConfigError(f"Section {section} must be a mapping")
        result.setdefault(section, {}).update(values)
    return result


class RunConfig:
    """
    Complete run configuration: one dataclass section per concern.
    Sections are attributes (config.sampler.n_iterations, config.run.seed, ...).
    """

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                 use_environment: bool = True, base_path: Optional[str] = None):
        self.config_path = config_path
        self.base_path = base_path
        self._lock = threading.RLock()
        self.run = RunSection()
        self.data = DataConfig()
        self.prior = PriorConfig()
        self.sampler = SamplerConfig()
        self.predict = PredictConfig()
        self.betting = BettingConfig()
        self.logging = LoggingConfig()
        self.metrics = MetricsConfig()
        self.load_config(overrides or {}, use_environment)

    @contextmanager
    def _config_lock(self):
        self._lock.acquire()
        try:
            yield
        finally:
            self._lock.release()

    @classmethod
    def from_file(cls, path: str, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """Reload a persisted configuration; the environment is ignored so reruns are exact."""
        if not Path(path).exists():
            raise ConfigError(f"Configuration file not found: {path}", path=path)
        return cls(path, overrides=overrides, use_environment=False)

    def load_config(self, overrides: Dict[str, Any], use_environment: bool = True) -> None:
        with self._config_lock():
            config_data = self._get_defaults()
            if self.base_path:
                config_data = _deep_merge(config_data, self._load_from_file(self.base_path))
            if self.config_path:
                config_data = _deep_merge(config_data, self._load_from_file(self.config_path))
            if use_environment:
                config_data = _deep_merge(config_data, self._load_from_environment())
            config_data = _deep_merge(config_data, self._expand_overrides(overrides))
            self._validate_config(config_data)
            self._apply_config(config_data)
            log.debug("config.loaded path=%s base=%s", self.config_path, self.base_path)

    def _get_defaults(self) -> Dict[str, Any]:
        return {name: asdict(cls()) for name, cls in _SECTIONS.items()}

    def _load_from_file(self, config_path: str) -> Dict[str, Any]:
        """Load configuration from file (JSON or YAML)."""
        file_path = Path(config_path)
        if not file_path.exists():
            raise ConfigError(f"Configuration file not found: {config_path}", path=config_path)
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                if file_path.suffix.lower() in (".yaml", ".yml"):
                    data = yaml.safe_load(f) or {}
                else:
                    data = json.load(f) or {}
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigError(f"Unreadable configuration file: {e}", path=config_path) from e
        if not isinstance(data, dict):
            raise ConfigError("Configuration file must hold a mapping", path=config_path)
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"Unknown configuration sections: {sorted(unknown)}", path=config_path)
        return data

    def _load_from_environment(self) -> Dict[str, Any]:
        config: Dict[str, Any] = {}
        for env_var, (section, key) in _ENV_MAPPINGS.items():
            value = os.getenv(env_var)
            if value is None:
                continue
            try:
                config.setdefault(section, {})[key] = _coerce(section, key, value)
            except ValueError:
                log.warning("config.invalid_env env_var=%s value=%s", env_var, value)
        return config

    @staticmethod
    def _expand_overrides(overrides: Dict[str, Any]) -> Dict[str, Any]:
        """Turn {"sampler.n_chains": 2} into {"sampler": {"n_chains": 2}}."""
        nested: Dict[str, Any] = {}
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, _, key = dotted.partition(".")
            if section not in _SECTIONS or not key:
                raise ConfigError(f"Invalid override key: {dotted}")
            nested.setdefault(section, {})[key] = value
        return nested

    def _validate_config(self, config_data: Dict[str, Any]) -> None:
        for section, cls in _SECTIONS.items():
            known = set(asdict(cls()))
            unknown = set(config_data.get(section, {})) - known
            if unknown:
                raise ConfigError(f"Unknown keys in section {section}: {sorted(unknown)}")
        self._validate_run(config_data["run"])
        self._validate_data(config_data["data"])
        self._validate_prior(config_data["prior"])
        self._validate_sampler(config_data["sampler"])
        self._validate_predict(config_data["predict"])
        self._validate_betting(config_data["betting"])

    def _validate_run(self, config: Dict[str, Any]) -> None:
        method = str(config["method"]).lower()
        if method not in ("basic", "shin"):
            raise ConfigError(f"Invalid probability method: {method}")
        config["method"] = method
        if config["test_season"] is not None:
            config["test_season"] = int(config["test_season"])
            if config["test_season"] < 1:
                raise ConfigError(f"Invalid test season: {config['test_season']}")
        config["seed"] = int(config["seed"])

    def _validate_data(self, config: Dict[str, Any]) -> None:
        config["rate_cap"] = max(1.0, min(50.0, float(config["rate_cap"])))
        config["workers"] = max(1, min(64, int(config["workers"])))
        if not config["bookmakers"]:
            raise ConfigError("At least one bookmaker must be configured")

    def _validate_prior(self, config: Dict[str, Any]) -> None:
        for key in ("beta_a", "beta_b", "normal_scale", "half_cauchy_scale", "lambda_variance",
                    "alpha_variance", "tau_half_cauchy_scale"):
            if float(config[key]) <= 0:
                raise ConfigError(f"Prior setting prior.{key} must be positive")
            config[key] = float(config[key])

    def _validate_sampler(self, config: Dict[str, Any]) -> None:
        config["n_iterations"] = max(1, int(config["n_iterations"]))
        config["n_burnin"] = max(0, int(config["n_burnin"]))
        if config["n_burnin"] >= config["n_iterations"]:
            raise ConfigError(
                f"Burn-in ({config['n_burnin']}) must be smaller than iterations ({config['n_iterations']})"
            )
        config["n_chains"] = max(1, min(64, int(config["n_chains"])))
        config["adapt_window"] = max(5, min(1000, int(config["adapt_window"])))
        config["target_acceptance"] = max(0.05, min(0.95, float(config["target_acceptance"])))
        config["rate_thin"] = max(1, int(config["rate_thin"]))
        config["workers"] = max(1, min(64, int(config["workers"])))
        unknown = set(config["blocks"]) - set(DEFAULT_BLOCKS)
        if unknown:
            raise ConfigError(f"Unknown sampler blocks: {sorted(unknown)}")

    def _validate_predict(self, config: Dict[str, Any]) -> None:
        config["max_goals"] = max(1, min(30, int(config["max_goals"])))
        config["max_draws"] = max(1, int(config["max_draws"]))
        config["n_simulations"] = max(1, int(config["n_simulations"]))
        config["ppc_max_draws"] = max(1, int(config["ppc_max_draws"]))
        unknown = set(config["statistics"]) - set(PPC_STATISTICS)
        if unknown:
            raise ConfigError(f"Unknown PPC statistics: {sorted(unknown)}")
        if config["season_projection"] not in ("evolve", "carry"):
            raise ConfigError(f"Invalid season projection: {config['season_projection']}")

    def _validate_betting(self, config: Dict[str, Any]) -> None:
        bad = [s for s in config["strategies"] if s not in ("A", "B", "never", "all")]
        if bad:
            raise ConfigError(f"Unknown betting strategies: {bad}")
        if config["forecast_source"] not in ("model", "basic", "shin"):
            raise ConfigError(f"Invalid forecast source: {config['forecast_source']}")

    def _apply_config(self, config_data: Dict[str, Any]) -> None:
        for section_name in _SECTIONS:
            section_obj = getattr(self, section_name)
            for key, value in config_data[section_name].items():
                setattr(section_obj, key, value)

    @property
    def sampler_seed(self) -> int:
        return self.sampler.seed if self.sampler.seed is not None else self.run.seed

    def to_dict(self) -> Dict[str, Any]:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def save_config(self, file_path: str) -> None:
        """Save the exact configuration (YAML or JSON by suffix)."""
        path = Path(file_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            if path.suffix.lower() in (".yaml", ".yml"):
                yaml.safe_dump(self.to_dict(), f, default_flow_style=False, sort_keys=True)
            else:
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        log.info("config.saved path=%s", file_path)

    def __str__(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

