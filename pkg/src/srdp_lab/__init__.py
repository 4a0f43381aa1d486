"""Desk-scale laboratory for reconstruction-regularized diffusion policies
on 2D multimodal contextual bandits."""

from .bandit import (BanditDataset, BanditSpec, Box, generate_dataset,
                     get_preset, gmm_means, ground_truth_set, quadrant,
                     sample_action, ur10_preset, unit_preset)
from .config import ExperimentConfig, load_config
from .critic import CriticEnsemble
from .diffusion import NoiseSchedule, build_schedule, default_schedule, forward_noise, reverse_step
from .errors import ConfigError, NumericError, UsageError
from .harness import SeedRun, make_synthetic_mdp, run_experiment
from .metrics import ChamferReport, chamfer, chamfer_noise_floor, grouped_chamfer, quadrant_accuracy
from .nn import Adam, DenseNet, Layer, TimeEmbedding, init_network
from .policy import SrdpPolicy, load_policy, make_policy

__version__ = "0.1.0"
