"""Semi-supervised teacher-student distillation toolkit.

Losses and a two-stage training procedure for domain-generalizable
embedding learning, driven by a deterministic synthetic multi-domain
benchmark and evaluated with re-id style retrieval metrics.
"""

from .autodiff import Tape, Tensor, backward, softmax_T
from .datagen import (Benchmark, BenchmarkSpec, DomainShift, DomainSpec,
                      ProtocolSpec, SampleRecord, build_protocol,
                      default_benchmark_spec, generate_benchmark,
                      generate_domain, generate_unlabeled_pool)
from .evaluation import EmbeddingSet, EvalResult, distance_matrix, evaluate, run_protocol
from .experiments import ExperimentConfig, SweepConfig, run, sweep, validate_config
from .losses import TemperatureConfig, cross_entropy, kd_loss, kd_loss_unlabeled
from .models import (ExtractorConfig, Model, build_model, embed, forward,
                     freeze, load_checkpoint, param_count, save_checkpoint)
from .optim import Adam, SGD, ScheduleConfig, lr_at
from .sampling import pk_sample
from .training import (BatchPlan, TrainState, sskd_components, sskd_total,
                       train_stage1, train_stage2_sskd)

__version__ = "0.1.0"
