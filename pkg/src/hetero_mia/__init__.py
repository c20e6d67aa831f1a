"""Tabular data-heterogeneity metric and membership-inference simulation over federated training."""

from .attack import AttackConfig, AttackModel, AttackResult, extract_features, run_attack, train_shadow_attack
from .dataset import (
    RawDataset,
    Schema,
    SyntheticSpec,
    TabularDataset,
    gen_synthetic,
    load_csv,
    load_dataset,
    load_schema,
    preprocess,
)
from .errors import ConfigError, DataError, HeteroMIAError, SchemaError, TrainingError
from .experiment import ExperimentConfig, ExperimentReport, emit_table, load_config, run_experiment
from .fedavg import FLConfig, RoundSnapshot, aggregate, local_update, partition_clients, run_rounds
from .metric import GaussianProxy, HeterogeneityReport, estimate_proxy, heterogeneity, sqrt_spd, w2_gaussian
from .model import Architecture, ModelParams, TrainConfig, init_model, loss_and_grad, predict, train
from .splitting import ChallengeSet, SplitOutput, SplitPlan, build_challenge, natural_split, uniform_split

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackModel",
    "AttackResult",
    "extract_features",
    "run_attack",
    "train_shadow_attack",
    "RawDataset",
    "Schema",
    "SyntheticSpec",
    "TabularDataset",
    "gen_synthetic",
    "load_csv",
    "load_dataset",
    "load_schema",
    "preprocess",
    "ConfigError",
    "DataError",
    "HeteroMIAError",
    "SchemaError",
    "TrainingError",
    "ExperimentConfig",
    "ExperimentReport",
    "emit_table",
    "load_config",
    "run_experiment",
    "FLConfig",
    "RoundSnapshot",
    "aggregate",
    "local_update",
    "partition_clients",
    "run_rounds",
    "GaussianProxy",
    "HeterogeneityReport",
    "estimate_proxy",
    "heterogeneity",
    "sqrt_spd",
    "w2_gaussian",
    "Architecture",
    "ModelParams",
    "TrainConfig",
    "init_model",
    "loss_and_grad",
    "predict",
    "train",
    "ChallengeSet",
    "SplitOutput",
    "SplitPlan",
    "build_challenge",
    "natural_split",
    "uniform_split",
]
