"""Dynamic routing games on congested road networks.

A population of vehicles picks successor links on a directed graph;
congestion maps each link's occupancy share to its travel time.  The
mean-field limit is solved by online mirror descent, and the resulting
policy is validated as an approximate equilibrium of the finite-player
game by event-driven simulation.
"""

from .kernel import (
    AgentState,
    DemandAtom,
    Policy,
    Scenario,
    TimeGrid,
    enumerate_pure_paths,
    mixture_policy,
    path_policy,
    sample_trajectory,
    travel_ticks,
)
from .mfg import (
    DEFAULT_OMD_SCHEDULE,
    DistributionFlow,
    HistoryRow,
    OmdSchedule,
    best_response,
    exploitability,
    forward_flow,
    omd_solve,
    path_distribution,
    policy_values,
    q_values,
    walk_path,
)
from .network import (
    CongestionFn,
    Link,
    Network,
    affine,
    augment_od,
    bpr,
    build_network,
    constant,
    evaluate_congestion,
    scale_capacity,
    step,
)
from .nplayer import (
    DeviationEstimate,
    PurePathStrategy,
    deviation_incentive_exact,
    deviation_incentive_mc,
    mccfr_solve,
    simulate_event,
    simulate_ticks,
)
from .oracles import (
    PigouParams,
    braess_equilibrium_policy,
    brute_force_nash,
    pigou_deviation_formula,
    pigou_equilibrium_cost,
    pigou_mf_equilibrium,
    profile_deviation_gap,
)
from .scenarios import (
    augmented_braess_scenario,
    braess_scenario,
    discontinuous_pigou_scenario,
    pigou_scenario,
)

__version__ = "0.1.0"
