from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

Variant = Literal["none", "gradia", "haics", "res-g", "res-l"]
VARIANTS: List[str] = ["none", "gradia", "haics", "res-g", "res-l"]


class BackboneConfig(BaseModel):
    in_channels: int = Field(1, ge=1)
    height: int = Field(64, ge=1)
    width: int = Field(64, ge=1)
    widths: List[int] = Field(default_factory=lambda: [16, 32, 64])
    kernel_sizes: List[int] = Field(default_factory=lambda: [3, 3, 3])
    num_classes: int = Field(2, ge=2)
    seed: int = 0

    @model_validator(mode="after")
    def _check_geometry(self):
        if not self.widths or len(self.widths) != len(self.kernel_sizes):
            raise ValueError("widths and kernel_sizes must be nonempty and of equal length")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ValueError("kernel sizes must be odd")
        factor = 2 ** len(self.widths)
        if self.height % factor or self.width % factor:
            raise ValueError(f"input {self.height}x{self.width} must be divisible by {factor}")
        if self.height // factor < 4 or self.width // factor < 4:
            raise ValueError("final feature map must be at least 4x4")
        return self

    @property
    def feature_size(self) -> tuple:
        factor = 2 ** len(self.widths)
        return self.height // factor, self.width // factor


class ImputationConfig(BaseModel):
    gaussian_kernel: int = Field(5, ge=1)
    gaussian_sigma: float = Field(1.5, gt=0)
    learnable_depth: Literal["shallow", "deep"] = "shallow"
    deep_width: int = Field(8, ge=1)

    @field_validator("gaussian_kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("gaussian kernel size must be odd")
        return value


class RobustLossConfig(BaseModel):
    alpha: float = Field(0.01, ge=0, le=2)
    gamma: float = Field(50.0, gt=0)
    lambda_exp: float = Field(1.0, ge=0)
    variant: Variant = "none"
    imputation: ImputationConfig = Field(default_factory=ImputationConfig)
    threshold_scope: Literal["batch", "sample"] = "batch"
    # through-max keeps the per-sample saliency max in the graph during training
    normalizer_gradient: Literal["frozen", "through-max"] = "through-max"


class TrainConfig(BaseModel):
    epochs: int = Field(50, ge=1)
    learning_rate: float = Field(1e-4, gt=0)
    batch_size: int = Field(16, ge=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    loss: RobustLossConfig = Field(default_factory=RobustLossConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    seed: int = 0
    eval_every: int = Field(1, ge=1)  # validate every k epochs and after the last


class NoiseSpec(BaseModel):
    boundary_radius: int = 0
    drop_probability: float = Field(0.0, ge=0, le=1)
    seed: int = 0


class DatasetRecipe(BaseModel):
    n: int = Field(500, ge=1)
    image_size: int = Field(64, ge=32)
    class_count: int = Field(2, ge=2, le=4)
    distractors: int = Field(2, ge=0)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    seed: int = 0


class SplitSizes(BaseModel):
    train: int = Field(100, ge=1)
    val: int = Field(200, ge=0)
    test: int = Field(200, ge=0)


class ExperimentSpec(BaseModel):
    variants: List[Variant] = Field(default_factory=lambda: list(VARIANTS))
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    data_dir: Optional[str] = None
    recipe: DatasetRecipe = Field(default_factory=DatasetRecipe)
    split: SplitSizes = Field(default_factory=SplitSizes)
    split_seed: int = 0
    sweep_axis: Literal["none", "train_size", "alpha"] = "none"
    sweep_values: List[float] = Field(default_factory=list)
    train: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: str = "runs/experiment"
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_sweep(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if not self.variants:
            raise ValueError("variants must be nonempty")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ValueError(f"sweep over {self.sweep_axis} needs at least one value")
        return self


class ExplanationScore(BaseModel):
    iou: float = Field(0.0, ge=0, le=1)
    precision: float = Field(0.0, ge=0, le=1)
    recall: float = Field(0.0, ge=0, le=1)
    f1: float = Field(0.0, ge=0, le=1)


class EvalResult(BaseModel):
    accuracy: float
    explanation: ExplanationScore


class EpochRecord(BaseModel):
    epoch: int
    pred_loss: float
    exp_loss: float
    hinge: float
    distance: float
    exact_hinge: float
    threshold: float
    # empty on epochs without a validation pass
    val_accuracy: Optional[float] = None
    val_iou: Optional[float] = None
    val_precision: Optional[float] = None
    val_recall: Optional[float] = None
    val_f1: Optional[float] = None


class TrainReport(BaseModel):
    config: TrainConfig
    seed: int
    epochs: List[EpochRecord] = Field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    test: Optional[EvalResult] = None
    wall_clock_s: float = 0.0
    diverged: bool = False
