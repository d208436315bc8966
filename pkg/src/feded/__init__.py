"""Federated learning simulator with empty-class distillation and logit suppression."""

from feded.nn import Model, OptimizerState, init_model, forward, backward, sgd_step
from feded.losses import (
    ClassPrior,
    LossResult,
    class_priors,
    loss_cal,
    loss_ce,
    loss_dis,
    loss_feded,
    loss_logit,
    prox_term,
)
from feded.partition import Partition, dirichlet_partition, quantity_shard_partition, partition_stats
from feded.data import Dataset, load_mnist_idx, gen_synthetic, batch_iter
from feded.engine import FedConfig, Method, aggregate, local_update, run_experiment, run_ablation_suite, run_lambda_sweep
from feded.config import ExperimentConfig, parse_config
from feded.metrics import RoundReport, evaluate, write_report, read_report, summarize_runs

__version__ = "0.1.0"
