"""Numerical core and run plumbing for dsvae_lab."""

from .checkpoint_manager import Checkpoint, CheckpointManager, load_checkpoint, save_checkpoint
from .graceful_shutdown import GracefulShutdown
from .metrics_manager import MetricSnapshot, MetricsManager
from .optim import Adam, AdamState, adam_step
from .output_writer import OutputWriter
from .rng import make_rng
from .system_monitor import SystemMonitor
from .tensor import Tensor, no_grad
from .worker_pool import WorkerPool

__all__ = [
    "Adam",
    "AdamState",
    "Checkpoint",
    "CheckpointManager",
    "GracefulShutdown",
    "MetricSnapshot",
    "MetricsManager",
    "OutputWriter",
    "SystemMonitor",
    "Tensor",
    "WorkerPool",
    "adam_step",
    "load_checkpoint",
    "make_rng",
    "no_grad",
    "save_checkpoint",
]
