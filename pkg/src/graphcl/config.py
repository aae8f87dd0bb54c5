"""Run configuration: dataclasses with strict JSON round-tripping."""
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .voldata import PhantomSpec


def _from_dict(cls, raw, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class TrainConfig:
    alpha: float = 0.5
    kappa: float = 0.01
    tau: float = 2.0
    lambda_ema: float = 0.99
    base_lr: float = 0.01
    lr_decay: float = 0.9
    lr_period: int = 2500
    momentum: float = 0.9
    optimizer: str = "sgd"
    iters_pretrain: int = 300
    iters_selftrain: int = 600
    batch_size: int = 4
    zero_ratio: float = 2.0 / 3.0
    mask_resample: str = "iteration"
    c_max: int = 8
    gcn_level: Optional[int] = None
    score_dim: int = 16
    sa_enabled: bool = True
    cc_enabled: bool = True
    sa_graph_scope: str = "batch"
    cc_normalize: bool = True
    cc_unit_nodes: bool = True
    seg_loss_mix: float = 0.5
    dice_eps: float = 1e-5
    augment: bool = True
    pretrain_bcp: bool = False
    labeled_ratio: float = 0.05
    ckpt_interval: int = 0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kappa < 0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0 <= self.lambda_ema <= 1:
            raise ConfigError(f"lambda_ema must lie in [0, 1], got {self.lambda_ema}")
        if self.batch_size < 4 or self.batch_size % 4:
            raise ConfigError(f"batch_size must be a multiple of 4 (>= 4), got {self.batch_size}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.mask_resample not in ("iteration", "once"):
            raise ConfigError(f"mask_resample must be 'iteration' or 'once', got {self.mask_resample!r}")
        if self.sa_graph_scope not in ("batch", "stream"):
            raise ConfigError(f"sa_graph_scope must be 'batch' or 'stream', got {self.sa_graph_scope!r}")
        if not 0 <= self.zero_ratio <= 1:
            raise ConfigError(f"zero_ratio must lie in [0, 1], got {self.zero_ratio}")
        if self.c_max < 1 or self.score_dim < 1:
            raise ConfigError("c_max and score_dim must be >= 1")
        if self.iters_pretrain < 0 or self.iters_selftrain < 0:
            raise ConfigError("iteration budgets must be >= 0")
        if self.lr_period <= 0:
            raise ConfigError(f"lr_period must be > 0, got {self.lr_period}")
        if not 0 < self.labeled_ratio < 1:
            raise ConfigError(f"labeled_ratio must lie in (0, 1), got {self.labeled_ratio}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be 'float32' or 'float64', got {self.dtype!r}")


@dataclass
class ModelConfig:
    levels: int = 3
    base_channels: int = 8


@dataclass
class EvalConfig:
    net: str = "teacher"
    allow_train_eval: bool = False
    batch: int = 2
    hd95_mode: str = "max_directed_p95"

    def __post_init__(self):
        if self.net not in ("teacher", "student"):
            raise ConfigError(f"eval.net must be 'teacher' or 'student', got {self.net!r}")
        if self.hd95_mode != "max_directed_p95":
            raise ConfigError(f"eval.hd95_mode: only 'max_directed_p95' is implemented, got {self.hd95_mode!r}")


@dataclass
class AblationConfig:
    gcn_sweep: bool = True


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    holdout: int = 10
    data_dir: Optional[str] = None
    out_dir: str = "runs/default"
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw or {})
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - top)
        if unknown:
            raise ConfigError(f"config: unknown key(s) {unknown}")
        phantom = raw.get("phantom")
        if isinstance(phantom, dict):
            phantom = dict(phantom)
            for key in ("shape", "radius_range", "spacing"):
                if key in phantom:
                    phantom[key] = tuple(phantom[key])
        holdout = raw.get("holdout", 10)
        if not isinstance(holdout, int) or holdout < 0:
            raise ConfigError(f"holdout must be a non-negative integer, got {holdout!r}")
        return cls(
            train=_from_dict(TrainConfig, raw.get("train"), "train"),
            model=_from_dict(ModelConfig, raw.get("model"), "model"),
            phantom=_from_dict(PhantomSpec, phantom, "phantom"),
            holdout=holdout,
            data_dir=raw.get("data_dir"),
            out_dir=raw.get("out_dir", "runs/default"),
            eval=_from_dict(EvalConfig, raw.get("eval"), "eval"),
            ablation=_from_dict(AblationConfig, raw.get("ablation"), "ablation"),
        )

    def to_dict(self):
        out = dataclasses.asdict(self)
        for key in ("shape", "radius_range", "spacing"):
            out["phantom"][key] = list(out["phantom"][key])
        return out

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text):
        try:
            raw = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.loads(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
