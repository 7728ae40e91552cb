"""Noise-robust training with actively queried per-example perturbation levels.

Each training example carries its own noise level. A query loop estimates
how well every level fits its example from the entropy of predictions over
noisy copies, sends the worst-fitting examples to an oracle (simulated or
human, over HTTP), and fine-tunes on the corrected levels.
"""

from .conformity import ConformityReport, closed_form_entropy_linear, entropy_of, mc_conformity
from .dataset import Dataset, Triplet, TripletDataset, gen_blobs, init_triplets, load_idx_images
from .model import Classifier, LinearBinary, init_classifier
from .numerics import Rng, gaussian_vector, std_normal_cdf, std_normal_quantile
from .oracle import ConceptOracle, Conformity, LinearOracle, conformity_of, sigma_opt_bisect, sigma_opt_linear
from .perturb import CorruptedEvalSet, Ladder, NoiseSpec, corrupt_eval_set, make_ladder, perturb
from .select import SelectionResult, select_aqpl, select_clean_uncertainty, select_noise_uncertainty, select_random
from .trainer import RoundMetrics, TrainConfig, evaluate, run_aqpl, train_noise_fixed, train_noise_instancewise

__version__ = "0.1.0"

__all__ = [
    "Classifier",
    "ConceptOracle",
    "Conformity",
    "ConformityReport",
    "CorruptedEvalSet",
    "Dataset",
    "Ladder",
    "LinearBinary",
    "LinearOracle",
    "NoiseSpec",
    "Rng",
    "RoundMetrics",
    "SelectionResult",
    "TrainConfig",
    "Triplet",
    "TripletDataset",
    "closed_form_entropy_linear",
    "conformity_of",
    "corrupt_eval_set",
    "entropy_of",
    "evaluate",
    "gaussian_vector",
    "gen_blobs",
    "init_classifier",
    "init_triplets",
    "load_idx_images",
    "make_ladder",
    "mc_conformity",
    "perturb",
    "run_aqpl",
    "select_aqpl",
    "select_clean_uncertainty",
    "select_noise_uncertainty",
    "select_random",
    "sigma_opt_bisect",
    "sigma_opt_linear",
    "std_normal_cdf",
    "std_normal_quantile",
    "train_noise_fixed",
    "train_noise_instancewise",
]
