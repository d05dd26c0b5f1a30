//! Dense SQP solver for the small transcribed optimal control problems.
//!
//! Multiplier convention: at a KKT point
//! `∇f − J_eqᵀλ − J_inᵀμ − μ_lower + μ_upper = 0` with `μ ≥ 0`.

pub mod nlp;
pub mod qp;
mod sqp;

pub use nlp::{ClosureNlp, Nlp};
pub use sqp::{solve, HessianMode, SolveResult, SolveStatus, SolverConfig};

use crate::error::{check_dim, Result};

/// Receding-horizon warm start for `z = [x₁..x_N, u₀..u_{N−1}]`: every block
/// moves one stage earlier and the last stage is held.
pub fn warm_start_shift(z_prev: &[f64], horizon: usize, state_dim: usize, input_dim: usize) -> Result<Vec<f64>> {
    check_dim("warm start", horizon * (state_dim + input_dim), z_prev.len())?;
    let mut z = Vec::with_capacity(z_prev.len());
    let (xs, us) = z_prev.split_at(horizon * state_dim);
    for (block, dim) in [(xs, state_dim), (us, input_dim)] {
        if horizon == 0 {
            continue;
        }
        z.extend_from_slice(&block[dim..]);
        z.extend_from_slice(&block[(horizon - 1) * dim..]);
    }
    Ok(z)
}
