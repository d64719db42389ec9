"""Noise-adaptive flow-matching denoising with blind noise-level estimation."""
from .errors import (
    DivergenceError,
    ImageFormatError,
    ParameterError,
    QFMError,
    ShapeError,
    TrainingDivergenceError,
)
from .flow_model import (
    MlpField,
    OracleField,
    PathSample,
    TrainConfig,
    gradient_check,
    make_path_sample,
    oracle_field,
    qfm_loss,
    train,
)
from .image_core import Metrics, add_gaussian_noise, as_image, psnr, ssim
from .noise_estimator import (
    DEFAULT_CONSTANTS,
    CalibrationConstants,
    NoiseEstimate,
    calibrate_constants,
    estimate_sigma,
    noise_to_ratio,
    partition_blocks,
)
from .schedule import Schedule, TimeGrid, build_grid, build_schedule, start_index
from .solver import DenoiseResult, TrajectoryLog, denoise_adaptive, denoise_fixed, euler_integrate

__version__ = "0.1.0"
