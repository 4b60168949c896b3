"""Persistency (partial optimality) for discrete energy minimization."""
from .energy import EnergyModel, InstanceSeedSpec, evaluate, generate, load, reparametrize, save
from .mapping import NodewiseMap, SubsetToOneMap, ZetaIndex, ZetaVector
from .persistency import (PersistencyResult, build_L1, perturb, pseudo_boolean_L1, solve_L1,
                          two_phase, verify_strict_improving, verify_weak_improving)
from .relaxation import build_spec, embed

__version__ = "0.1.0"
