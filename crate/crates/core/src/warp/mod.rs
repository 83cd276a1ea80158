//! Hierarchical coordinate transformation: hypernetwork-conditioned residual
//! displacement levels, the Jacobian penalty, and the stability analysis
//! suite (Lipschitz estimation, composition bounds, folding detection).

pub mod analysis;
pub mod fixtures;
pub mod level;
pub mod stack;

pub use analysis::{
    composition_bound, composition_check, dense_grid_1d, dense_grid_2d, folding_fraction,
    jacobian_report, lipschitz_estimate, pairwise_lipschitz_check, CompositionCheck,
    JacobianReport, PairwiseLipschitzCheck, Transform, SPECTRAL_NORM_ITERATIONS,
};
pub use fixtures::{ComposedWarp, IdentityWarp, LinearWarp, SineWarp1d};
pub use level::{
    base_frequency, phi_dim, HyperNet, LevelTrace, ParamSource, WarpLevel, ATOM_DIRECTIONS, DIM,
};
pub use stack::{fixed_warp_stack, init_warp_stack, PenaltyMode, WarpStack, WarpStackConfig};
