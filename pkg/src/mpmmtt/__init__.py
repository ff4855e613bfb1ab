"""Multi-target tracking of maneuvering targets by iterative message passing."""

from .association import (AssociationMatrix, AssociationWeights, build_weights,
                          consistency_check, enumerate_marginals, lbp_marginals)
from .filters import GaussianBelief, fuse_models, predict, smooth, update
from .hmm import MarkovChain, forward_backward, forward_step
from .models import PolarSensor, ct_matrices, cv_matrices
from .simulator import ScenarioSpec, generate_truth, simulate, table1_scenario
from .tracker import MPMMTTracker, TrackerConfig

__version__ = "0.1.0"
