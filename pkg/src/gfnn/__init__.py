"""Learning symplectic maps through neural type-2 generating functions."""
from .genfun import AnalyticGF, GenFunMap, SolverConfig, SolverError, gf_rollout, gf_step, symplecticity_defect
from .net import ParamNet, init_net, load_net, save_net
from .systems import SystemSpec, Trajectory

__version__ = "0.1.0"
