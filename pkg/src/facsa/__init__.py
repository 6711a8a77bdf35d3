"""Frame-asynchronous coded slotted ALOHA: simulation, density evolution and
stopping-set error-floor analysis."""

from .core import (
    Boundary,
    DegreeDistribution,
    RandomStream,
    SystemConfig,
    Variant,
    avg_degree,
    parse_degree_distribution,
    poisson_pmf,
    shifted_vn_dists,
    to_edge_perspective,
)
from .de import DEConfig, ThresholdQuery, find_threshold, fs_threshold, run_de
from .error_floor import EFQuery, ef_plr, phi_factor, sc_ef_plr
from .sim import SimStats, batch_interval, collect_stats, run_simulation
from .stopping_sets import Catalog, StoppingSetRecord, enumerate_catalog, read_catalog, write_catalog

__version__ = "0.1.0"
