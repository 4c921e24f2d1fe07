"""Adversarial-risk evaluation with pluggable surrogate losses, and a
genetic-programming search over a small loss language."""
from .attack import AttackSpec, pgd, project
from .datasets import Dataset, load_dataset, make_blobs, make_rings, save_dataset
from .expr import load_expr, parse, save_expr, simplify, to_text
from .kernels import BACKEND
from .losses import SurrogateLoss, get_loss, resolve_loss
from .model import MlpModel, load_model, save_model, train
from .riskeval import RiskReport, approx_risk, grid_oracle_risk, landscape_grid
from .search import SearchConfig, run_search

__version__ = "0.1.0"
