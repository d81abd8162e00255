"""Learning structured-prediction constraints with a two-layer rectifier network.

A trained net ``1 - sum_k relu(w_k . psi + b_k) >= 0`` is equivalent to a
system of ``2^K - 1`` linear inequalities, which can be handed to an exact
binary ILP solver or used to filter a beam-search sequence decoder.
"""
from .constraint_extraction import (ConstraintSystem, LinearInequality, all_feasible, conjunction_eval,
                                    dumps_system, extract_system, is_feasible, loads_system,
                                    threshold_net_eval, violated_indices)
from .constraint_features import (FeatureError, FeatureTemplate, GeneratedDataset, LabelVocab,
                                  TaggedSequence, build_positive_set, extract, generate_negatives,
                                  make_dataset, read_conll, write_conll)
from .er_tables import eval_er_tables
from .ilp import (IlpInstance, IlpSolution, SharedConstraints, evaluate_recovery, generate_family,
                  make_training_pairs, run_recovery, solve_exact)
from .rectifier_net import (ConstraintNet, DimensionError, LabeledFeatureExample, TrainConfig,
                            TrainingError, classification_accuracy, dumps_net, forward_raw, loads_net,
                            loss_and_grad, predict, select_and_train, train)
from .sequence import (DecodeError, ScoreMatrix, SequenceModel, beam_decode, load_scores, token_accuracy,
                       train_markov, viterbi)

__version__ = "0.1.0"
