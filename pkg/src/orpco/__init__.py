"""Reliable offline model-based optimisation for industrial process control.

Learn a dynamics model ``p(y | x, u)`` from logged records with an ensemble of
conditional GANs, score candidate controls with an uncertainty-penalised
Monte-Carlo reward, and search policies with Bayesian optimisation (discrete
control) or offline DDPG (continuous control).
"""
from .bayesopt import BoConfig, DiscretePolicy, optimize_controls, policy_value_true
from .cgan import CganEnsemble, ConditionalGAN
from .data import (
    Normalizer,
    ProcessDataset,
    ProcessRecord,
    Schema,
    Trajectory,
    VariableSpace,
    load_dataset,
    save_dataset,
    split,
)
from .ddpg import DdpgAgent, DdpgConfig, evaluate_policy, train_offline_ddpg
from .ensemble import empirical_moments, load_ensemble, train_ensemble
from .exceptions import (
    ConfigurationError,
    DataError,
    NumericalError,
    OrpcoError,
    ParseError,
    TrainingError,
    ValidationError,
)
from .gpn import GaussianProbabilisticNetwork, GpnEnsemble
from .reward import (
    PenalizedEvaluator,
    PenaltyCalibration,
    RewardFunction,
    UncertaintyReport,
    compute_kappa,
    compute_varkappa,
    squared_hellinger,
)
from .synthetic import GaussianBandit, MixtureProcess, generate_synthetic_discrete

__version__ = "0.1.0"
