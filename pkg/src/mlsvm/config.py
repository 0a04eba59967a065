"""Run configuration with the recommended defaults."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

# (low, high) recommended ranges; values outside need ``force=True``.
RECOMMENDED = {
    "Q": (0.4, 0.6),
    "eta": (2.0, 2.0),
    "caliber": (1, 4),
    "theta": (0.001, 0.05),
    "k_nn": (1, 10),
    "m_pos": (300, 300),
    "m_neg": (300, 300),
    "coarsest_size": (500, 500),
    "q_t": (3000, 5000),
}

COARSENING_MODES = ("amg", "iis", "sparse_amg")
VALIDATION_STRATEGIES = ("cs", "cckf", "ff", "fs")
DISAGGREGATION_MODES = ("full", "k_distant", "sampled")
METRIC_RULES = ("gmean", "gmean_then_sn", "acc")
WEIGHT_SCHEMES = ("per_point", "per_class", "none")
VOTING_RULES = ("distance_weighted", "majority")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    Q: float = 0.5
    eta: float = 2.0
    caliber: int = 1
    theta: float = 0.05
    k_nn: int = 10
    knn_mode: str = "auto"
    m_pos: int = 300
    m_neg: int = 300
    coarsest_size: int = 500
    q_t: int = 5000
    part_size: int = 1000
    coarsening: str = "amg"
    # None picks FF up to 50k training points and FS above
    validation: str | None = None
    val_fraction: float = 0.1
    cv_folds: int = 5
    disaggregation: str = "full"
    disagg_distance: int = 1
    disagg_budget: int = 4
    iis_neighbors: int = 5
    # None: gmean_then_sn on coarse levels, gmean on the finest
    metric: str | None = None
    weight_scheme: str = "per_point"
    voting: str = "distance_weighted"
    smo_tol: float = 1e-3
    smo_max_iter: int = 10_000_000
    cache_mb: float = 512.0
    seed: int = 0
    threads: int = 1
    force: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.coarsening not in COARSENING_MODES:
            raise ConfigError(f"coarsening must be one of {COARSENING_MODES}")
        if self.validation is not None and self.validation not in VALIDATION_STRATEGIES:
            raise ConfigError(f"validation must be one of {VALIDATION_STRATEGIES}")
        if self.disaggregation not in DISAGGREGATION_MODES:
            raise ConfigError(f"disaggregation must be one of {DISAGGREGATION_MODES}")
        if self.metric is not None and self.metric not in METRIC_RULES:
            raise ConfigError(f"metric must be one of {METRIC_RULES}")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ConfigError(f"weight_scheme must be one of {WEIGHT_SCHEMES}")
        if self.voting not in VOTING_RULES:
            raise ConfigError(f"voting must be one of {VOTING_RULES}")
        if not 0 < self.val_fraction <= 0.5:
            raise ConfigError("val_fraction must lie in (0, 0.5]")
        if not 1 <= self.disagg_distance <= 2:
            raise ConfigError("disagg_distance is capped at 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not 0 < self.Q < 1:
            raise ConfigError("Q must lie in (0, 1)")
        if self.caliber < 1 or self.k_nn < 1:
            raise ConfigError("caliber and k_nn must be >= 1")
        if min(self.m_pos, self.m_neg, self.coarsest_size) <= 0:
            raise ConfigError("coarsest-level limits must be positive")
        if self.force:
            return
        for name, (lo, hi) in RECOMMENDED.items():
            val = getattr(self, name)
            if not lo <= val <= hi:
                raise ConfigError(
                    f"{name}={val} outside recommended range [{lo}, {hi}]; pass force=True to override"
                )

    def validation_for(self, n_train: int) -> str:
        if self.validation is not None:
            return self.validation
        return "ff" if n_train <= 50_000 else "fs"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})
