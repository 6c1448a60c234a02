//! Post-hoc analysis: hindsight optimum, heterogeneity at the optimum, regret,
//! regret-bound constants, learning-rate formulas and the budget planner.

mod bounds;
mod budget;
mod hindsight;

pub use bounds::{
    alpha_l1, alpha_table1, comm_cost, dominance_check, optimal_eta, BoundParams, CommCost,
    Dominance, EtaChoice,
};
pub use budget::{budget_objective, optimize_budget, BudgetPlan, DEFAULT_S_MAX};
pub use hindsight::{
    regret, sigma_diff, solve_hindsight, total_loss, HindsightSolution, SolverOptions, Trajectory,
};
