//! Small dense Gauss–Newton loop shared by pose and point refinement.

use nalgebra::{SMatrix, SVector};

/// Stop when the accepted step is shorter than this.
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 50;

/// Normal equations at a linearization point: `JᵀJ`, `Jᵀr` and `|r|²`.
pub(crate) struct Normal<const N: usize> {
    pub jtj: SMatrix<f64, N, N>,
    pub jtr: SVector<f64, N>,
    pub cost: f64,
}

pub(crate) struct Refined<S> {
    pub state: S,
    pub cost: f64,
    pub iterations: usize,
}

/// Gauss–Newton with step halving. `linearize` returns `None` where the
/// model is undefined (e.g. a point behind a camera); such states are
/// never accepted.
pub(crate) fn gauss_newton<const N: usize, S>(
    initial: S,
    linearize: impl Fn(&S) -> Option<Normal<N>>,
    update: impl Fn(&S, &SVector<f64, N>) -> S,
) -> Option<Refined<S>> {
    let mut state = initial;
    let mut normal = linearize(&state)?;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let step = match normal.jtj.cholesky() {
            Some(ch) => -ch.solve(&normal.jtr),
            None => match normal.jtj.try_inverse() {
                Some(inv) => -(inv * normal.jtr),
                None => break,
            },
        };
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = update(&state, &(step * scale));
            if let Some(n) = linearize(&candidate) {
                if n.cost <= normal.cost {
                    accepted = Some((candidate, n));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((candidate, n)) = accepted else {
            break;
        };
        let moved = step.norm() * scale;
        let no_progress = n.cost == normal.cost;
        state = candidate;
        normal = n;
        if moved < STEP_TOLERANCE || no_progress {
            break;
        }
    }
    Some(Refined {
        state,
        cost: normal.cost,
        iterations,
    })
}
