"""Probe ensembles over feature banks, with entropy-based data splitting,
semi-supervised probe refinement, and Dawid-Skene prediction fusion."""

from .aggregate import (AggregateResult, ConfusionMatrix, DSConfig,
                        avg_aggregate, ds_aggregate, ds_loglikelihood,
                        ds_marginal_loglikelihood, entropy_of, harden,
                        validate_annotations)
from .bank import BankError, FeatureBank, read_bank, slice_rows, write_bank
from .mixmatch import (MixMatchConfig, feature_augment, guess_labels,
                       mixup_pair, mse_loss_and_grad, semisup_train_probe,
                       sharpen)
from .pipeline import (MetricsReport, PipelineConfig, PipelineState, evaluate,
                       infer, read_posteriors, run_pipeline, write_posteriors)
from .probes import (ProbeEnsemble, ProbeModel, TrainConfig, ce_loss_and_grad,
                     ensemble_from_json, ensemble_to_json, load_ensemble,
                     predict_all, probe_forward, save_ensemble, train_probe)
from .split import SplitAssignment, SplitConfig, round_half_up, split_by_entropy
from .synth import (NoiseConfig, SynthConfig, gen_crowd_instance, gen_domains,
                    inject_noise)
from .util import NumericalError, as_targets, one_hot, softmax

__version__ = "0.1.0"
