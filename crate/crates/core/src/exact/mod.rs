//! Ground-truth computations on known arm models.

pub mod dual;
pub mod index;
pub mod oracle;
pub mod rvi;
pub mod stationary;

pub use dual::{
    dual_value, golden_section, optimal_lambda, DualOptions, DualSolution, Randomization,
};
pub use index::{
    indexability_check, lagrangian_index, lagrangian_index_table, linear_grid, passive_set,
    whittle_index, whittle_table, IndexSource, IndexTable, Indexability, IndexabilityReport,
    WhittleIndex, WhittleOptions, TIE_TOL,
};
pub use oracle::{product_mdp_oracle, ProductSolution};
pub use rvi::{f_norm, rvi_q, rvi_q_warm, QTable, RviOptions};
pub use stationary::{activation_rate, policy_gain, stationary_distribution};
