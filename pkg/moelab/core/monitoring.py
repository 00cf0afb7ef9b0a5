"""
Monitoring Module
=================

Run observability for training and benchmarking:
- Training metrics on a private Prometheus registry
- Textfile export next to checkpoints
- Host descriptor for benchmark results (psutil)
"""

import logging
import os
import platform
import socket
from typing import Any, Dict, Optional

import psutil
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

logger = logging.getLogger(__name__)


# =============================================================================
# Training Metrics
# =============================================================================

class TrainingMetrics:
    """
    Prometheus metrics for one training run

    Metric Types:
    - Gauge: step, learning rate, loss, per-domain token accuracy
    - Counter: optimizer updates, target tokens seen
    - Histogram: wall time per optimizer step
    """

    STEP_BUCKETS = (0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0)

    def __init__(self, namespace: str = "moelab"):
        self.registry = CollectorRegistry()
        self.step = Gauge("train_step", "Current optimizer step", namespace=namespace, registry=self.registry)
        self.learning_rate = Gauge("train_learning_rate", "Learning rate of the last update",
                                   namespace=namespace, registry=self.registry)
        self.loss = Gauge("train_loss", "Token-mean training loss of the last update",
                          namespace=namespace, registry=self.registry)
        self.accuracy = Gauge("eval_token_accuracy", "Per-domain teacher-forced token accuracy",
                              ["domain"], namespace=namespace, registry=self.registry)
        self.updates = Counter("train_updates", "Optimizer updates applied",
                               namespace=namespace, registry=self.registry)
        self.tokens = Counter("train_target_tokens", "Non-pad target tokens consumed",
                              namespace=namespace, registry=self.registry)
        self.step_seconds = Histogram("train_step_seconds", "Wall time per optimizer step",
                                      namespace=namespace, buckets=self.STEP_BUCKETS,
                                      registry=self.registry)

    def record_step(self, step: int, lr: float, loss: float, tokens: int, seconds: float) -> None:
        self.step.set(step)
        self.learning_rate.set(lr)
        self.loss.set(loss)
        self.updates.inc()
        self.tokens.inc(tokens)
        self.step_seconds.observe(seconds)

    def record_accuracy(self, accuracies: Dict[str, float]) -> None:
        for domain, value in accuracies.items():
            self.accuracy.labels(domain=domain).set(value)

    def value(self, name: str, labels: Optional[Dict[str, str]] = None) -> Optional[float]:
        """Read back a sample value (namespace included in name)"""
        return self.registry.get_sample_value(name, labels or {})

    def write(self, path: str) -> None:
        """Write the registry in Prometheus textfile format"""
        write_to_textfile(path, self.registry)
        logger.debug(f"Wrote training metrics to {path}")


# =============================================================================
# Host Descriptor
# =============================================================================

def environment_descriptor(precision: str, workers: int = 1, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Describe the measuring host for benchmark results"""
    memory = psutil.virtual_memory()
    descriptor: Dict[str, Any] = {
        "host": socket.gethostname(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "physical_cores": psutil.cpu_count(logical=False),
        "logical_cores": psutil.cpu_count(logical=True),
        "memory_total_mb": round(memory.total / 1024 / 1024),
        "process_id": os.getpid(),
        "precision": precision,
        "workers": workers,
        "batch_unit": "tokens",
    }
    if extra:
        descriptor.update(extra)
    return descriptor


def host_load() -> Dict[str, float]:
    """Current CPU and memory pressure, logged before timed runs"""
    process = psutil.Process()
    return {
        "cpu_percent": psutil.cpu_percent(interval=0.1),
        "memory_percent": psutil.virtual_memory().percent,
        "process_memory_mb": process.memory_info().rss / 1024 / 1024,
    }
