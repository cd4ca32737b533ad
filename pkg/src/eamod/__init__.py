"""Fleet optimization toolkit for electric autonomous mobility-on-demand.

Subpackages cover the pipeline end to end: demand forecasting and scenario
trees, energy-aware network instances, an exact LP/MILP solver, nested
decomposition of the multistage program, and a closed-loop fleet simulator.
"""

from .errors import EmptyRun, InfeasibleDecision, InvalidParameter, ModelBug
from .net_model import (
    NetworkInstance,
    PriceProfile,
    StageDecisions,
    TerminalParams,
    charge_delta_bins,
    stage_cost,
    terminal_penalty,
    trip_energy_bins,
)
from .vehicle_energy import (
    ChargeCurve,
    Segment,
    VehicleParams,
    arc_energy_kwh,
    charge_power,
    cruise_profile,
    trip_energy,
    vehicle_preset,
)
from .forecast import (
    ArcLognormal,
    CountModel,
    RobustParams,
    count_quantile,
    fit_moments,
    read_counts_csv,
    robustify,
    sample,
    sample_chargers,
)
from .scenario_tree import (
    NodeValue,
    ScenarioFan,
    ScenarioNode,
    ScenarioTree,
    anticipativity_groups,
    build_fan,
    chain_tree,
    extend_constant,
    reduce,
)
from .lp_solver import (
    LinearProgram,
    SolveOutcome,
    Status,
    duals_for,
    parse_lp_text,
    solve_lp,
    solve_milp,
    write_lp_text,
)
from .opt_model import (
    BendersCut,
    IntegralityMode,
    StageProblem,
    VariableKey,
    build_extensive,
    build_stage,
    evaluate_tree_solution,
    imbalance_step,
    interface_in_keys,
    root_fixed_values,
)
from .nbd import (
    BoundsLedger,
    NbdConfig,
    NbdResult,
    backward_pass,
    compute_gap,
    forward_pass,
    prepare,
    run,
    topology_signature,
    warm_up_cuts,
)
from .fleet_sim import (
    ControllerCommand,
    FleetState,
    OptimizingController,
    SimResult,
    TreeConfig,
    Vehicle,
    Violation,
    controller_dmp,
    controller_rb,
    controller_rcc,
    controller_smpc,
    initial_state,
    metrics,
    simulate,
    step,
)

__version__ = "0.1.0"

from .cli import (  # noqa: E402  (cli imports the version above)
    IngestResult,
    RunConfig,
    SweepResult,
    ingest_trips,
    main,
    read_price_file,
    resolve_price,
    run_sweep,
    spread_fleet,
)
