"""Location-scale Gaussian VAE for probabilistic time-series forecasting."""
from .data import (Dataset, PatchGrid, SeriesWindow, SyntheticSpec, chrono_split, gen_synthetic,
                   load_csv, patch, rng_normal, unpatch, windows)
from .metrics import (EvalConfig, EvalResult, crps_samples, evaluate, nmae, qice,
                      volatility_recovery)
from .model import (ModelConfig, ModelParams, decode, encode, evolve, forward, init_params,
                    sample_paths)
from .objective import (LossBreakdown, composite_loss, gaussian_nll, kl_diag_gauss, mse_loss)
from .training import TrainConfig, TrainReport, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
