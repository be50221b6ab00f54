"""Constrained dominant set clustering and multi-camera tracking."""
from .simplex_qp import (ConstraintSpec, SolveReport, alpha_bound, dominant_distribution, fast_cdsc,
                         kkt_residual, local_maximizer, objective, replicator_step)
from .enumeration import (Cluster, ClusterCollection, assign_unique, enumerate_clusters,
                          find_constrained_sets, rank_by_membership)
from .affinity import (NodeDescriptor, TransitionModel, build_cross_camera_affinity, combine,
                       kernel_affinity, median_gamma, motion_affinity, path_closure,
                       spatiotemporal_gate)
from .metrics import IdentityMetrics, identity_metrics
from .synth import SynthConfig, synth_generate

__version__ = "0.1.0"
