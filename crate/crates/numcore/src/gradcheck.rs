//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NumError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Which coordinates of each input to perturb.
#[derive(Clone, Copy, Debug)]
pub enum CoordSelection {
    All,
    /// At most `per_input` coordinates per input tensor, drawn without
    /// replacement.
    Sample { per_input: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

fn evaluate<F>(f: &F, point: &[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(format!("input{}", i), t.clone()))
        .collect();
    let loss = f(&mut g, &vars)?;
    if g.value(loss).numel() != 1 {
        return Err(NumError::Contract("grad_check needs a scalar-valued function".into()));
    }
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss)?;
    let analytic = vars.iter().map(|v| grads.get(*v).cloned().unwrap()).collect();
    Ok((value, analytic))
}

fn value_at<F>(f: &F, point: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok(g.value(loss).data()[0])
}

/// Denominator floor, relative to `|f(x)|`. Central differences carry
/// round-off of order `2⁻⁵² · |f| / epsilon`; components smaller than this
/// floor are compared on an absolute scale rather than a relative one.
pub const RESOLUTION_FLOOR: f64 = 1e-6;

/// Max over checked coordinates of
/// `|analytic − numeric| / max(|analytic|, |numeric|, RESOLUTION_FLOOR·|f(x)|, 1e-300)`,
/// where `numeric` is the central difference with step `epsilon`.
pub fn grad_check<F>(f: F, point: &[Tensor<f64>], epsilon: f64, selection: CoordSelection) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(NumError::Contract(format!("epsilon must be > 0, got {}", epsilon)));
    }
    let (value, analytic) = evaluate(&f, point)?;
    let floor = (RESOLUTION_FLOOR * value.abs()).max(1e-300);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = point.to_vec();
    for (input, grad) in analytic.iter().enumerate() {
        let n = point[input].numel();
        let coords: Vec<usize> = match selection {
            CoordSelection::All => (0..n).collect(),
            CoordSelection::Sample { per_input, seed } if per_input < n => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (input as u64).wrapping_mul(0x9E37_79B9));
                let mut picked = sample(&mut rng, n, per_input).into_vec();
                picked.sort_unstable();
                picked
            }
            CoordSelection::Sample { .. } => (0..n).collect(),
        };
        for c in coords {
            let orig = work[input].data()[c];
            work[input].data_mut()[c] = orig + epsilon;
            let plus = value_at(&f, &work)?;
            work[input].data_mut()[c] = orig - epsilon;
            let minus = value_at(&f, &work)?;
            work[input].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.coords_checked == 1 {
                report.max_rel_error = rel;
                report.worst_input = input;
                report.worst_coord = c;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[10], |_| rng.gen_range(-2.0..2.0));
        let report = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum(sq)
            },
            &[x],
            1e-5,
            CoordSelection::All,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{:?}", report);
        assert_eq!(report.coords_checked, 10);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // d/dx of sum(x*x) computed as if the graph forgot one factor
        let x = Tensor::from_fn(&[3], |i| 1.0 + i as f64);
        let report = grad_check(
            |g, v| {
                let c = g.constant(g.value(v[0]).clone());
                let sq = g.mul(v[0], c)?;
                g.sum(sq)
            },
            &[x],
            1e-5,
            CoordSelection::All,
        )
        .unwrap();
        assert!(report.max_rel_error > 0.4);
    }

    #[test]
    fn non_finite_names_kernel() {
        let x = Tensor::full(&[1], 1e200);
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum(sq)
            },
            &[x],
            1e-5,
            CoordSelection::All,
        )
        .unwrap_err();
        assert_eq!(err, NumError::NonFinite { kernel: "mul" });
    }
}
