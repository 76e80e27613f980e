"""Probabilistic cellular automata on cyclic graphs: simulation, dynamics, inference."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BENCHMARK_T,
    Init,
    ModelSpec,
    cyclic_permutation,
    local_empirical,
    move_to_next,
    neighborhood,
    random_transition_matrix,
    simulate_trajectory,
    site_distribution,
    step,
)
from .data import (  # noqa: E402
    EnsembleDataset,
    TrajectoryDataset,
    delink_to_ensemble,
    generate_multitraj,
    read_dataset,
    write_dataset,
)
from .dynamics import (  # noqa: E402
    global_transition_matrix,
    local_from_global,
    period_report,
    predicts_synchronization,
    stationary_distribution,
)
from .inference import (  # noqa: E402
    assemble_ensemble,
    assemble_multitraj,
    assemble_singletraj,
    exact_normal_system,
    sample_size_bound,
    solve_constrained,
)
