"""Uncertainty-aware local explanations for a statevector-simulated quantum
graph classifier: synthetic benchmarks, exact simulation and training, mask
perturbations, HSIC surrogate ensembles, DKW ensemble-size planning, and the
evaluation metric suite."""

from .circuit import (
    EDUQGCModel,
    EDUQGCParams,
    ModelOutput,
    ReadoutNetwork,
    forward_exact,
    forward_shots,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .ensemble import (
    DKWPlan,
    EnsembleConfig,
    EnsembleExplanation,
    explain,
    flip_probability,
    indecision_fraction,
    iqr_ci,
    make_plan,
    plan_dkw,
    plan_dkw_simultaneous,
    tip,
)
from .errors import (
    ConfigError,
    DataError,
    EmptyGraphError,
    InvalidSizeError,
    NumericalError,
    QGLimeError,
    QubitBudgetError,
)
from .graphs import (
    Dataset,
    Graph,
    apply_permutation,
    generate_dataset,
    load_dataset,
    make_cycle,
    make_two_component,
    make_wheel,
    remove_edges,
    remove_nodes,
    save_dataset,
)
from .hsic import (
    GramMatrix,
    GroupStructure,
    KernelConfig,
    SolverConfig,
    SurrogateFit,
    build_groups,
    center_normalize,
    fit_hsic_group,
    fit_hsic_l1,
    fit_logistic,
    gaussian_gram,
    hsic,
    median_bandwidth,
)
from .metrics import (
    MetricsReport,
    consensus,
    evaluate_explanations,
    fidelity,
    random_explainer,
    relative_importance,
    sparsity,
    topk_accuracy,
)
from .perturb import (
    PerturbConfig,
    PerturbationSet,
    evaluate_perturbations,
    perturb,
    perturb_random,
    perturb_random_walk,
)
from .training import (
    GradientBundle,
    TrainConfig,
    TrainReport,
    analytic_gradient,
    bce_loss,
    quantum_gradient,
    train,
)

__version__ = "0.1.0"
