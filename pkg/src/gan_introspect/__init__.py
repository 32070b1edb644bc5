"""Gated 2-1-2D voice-conversion GAN on a small numpy autodiff engine, with SVCCA tools for
comparing what its layers learn across training."""
from .errors import (ConfigError, ContractViolation, DegenerateStats, DegenerateSubspace, DivergenceError,
                     FormatError, GanIntrospectError, InvalidData, LayerSetMismatch, ShapeError, ShapeMismatch,
                     SingularCovariance, UnknownDomain, UnknownLayer)
from .svcca import (ActivationMatrix, CcaResult, GroupSummary, LayerSimilarityReport, ReducedSubspace, cca,
                    center_rows, compare_checkpoints, group_summary, svcca, svcca_similarity, svd_reduce)
from .dataio import (Dataset, DatasetConfig, DomainStats, FeatureSequence, convert_logf0, normalize_per_domain,
                     read_amat, read_fseq, synth_dataset, write_amat, write_fseq)
from .networks import (Discriminator, Generator, GeneratorConfig, NetworkCheckpoint, build_discriminator,
                       build_generator, freeze_layers, generator_forward, load_checkpoint, save_checkpoint)
from .objectives import LossWeights
from .trainer import TrainConfig, TrainLog, TrainResult, build_probe_set, record_activations, train
from .experiments import (ExperimentReport, emit_csv, exp1_similarity_vs_init, exp2_transfer, exp3_frozen,
                          exp4_depth_sweep, mode_collapse_index, read_csv, seeded, transfer_config)

__version__ = "0.1.0"
