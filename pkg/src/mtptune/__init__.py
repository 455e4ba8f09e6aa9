"""AutoML for multi-target prediction.

Route a dataset of (instance, target, score) triplets to its problem setting,
train a two-branch embedding network on it, and tune the hyperparameters with
budget-aware search under one epoch-equivalent accounting.
"""

from .dataio import (DataError, DatasetBundle, DuplicateCell, MissingFeature,
                     RunDirectory, UnknownId, calibrate_max_budget, load_bundle,
                     synth_matrix_completion, synth_multilabel)
from .engine import (METHODS, Done, Evaluate, RunResult, TrialFailure,
                     TrialLedger, TrialResult, TunerSpec, TuningRun, Wait,
                     hyperband_brackets, hyperband_cycle_cost, promote, run,
                     sh_schedule)
from .metrics import (MetricSpec, aupr, auroc, evaluate_metric, macro_aupr,
                      macro_auroc, macro_rrmse, micro_aupr, micro_auroc,
                      micro_rmse, rank_over_time)
from .mtp import (Answers, MtpDataset, MtpSetting, ValidationSetting,
                  auto_answer, infer_setting, nearest_settings, split,
                  validation_setting)
from .network import (BranchSpec, Checkpoint, FeasibilityError, HeadSpec,
                      TrainConfig, TrainingDiverged, build, forward,
                      load_checkpoint, predict_matrix, save_checkpoint, train)
from .objective import (AssembledProblem, MtpTrainingObjective,
                        NoMatchingSetting, assemble_problem, default_space)
from .space import ConfigSpace, GridSizeError, ParamSpec
from .surrogates import (InsufficientData, Observation, expected_improvement,
                         kde_fit_pair, kde_propose, rf_fit, rf_predict)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
