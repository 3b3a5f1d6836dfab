from .config import SolverConfig
from .problem import DatasetSpec, ProblemSpec
from .aoadmm import FitResult, TraceRecord, fit, multi_init_fit, objective, stopping_check
