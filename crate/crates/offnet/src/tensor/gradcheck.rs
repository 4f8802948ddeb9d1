//! Finite-difference gradient oracle.
//!
//! [`grad_check`] compares reverse-mode gradients against central differences
//! `(f(x + h e_i) - f(x - h e_i)) / 2h`, perturbing the checked tensor in
//! place and rebuilding the graph per probe. The reported error is the worst
//! absolute deviation normalized by the largest gradient magnitude seen on
//! either side (the infinity norm), which keeps the check meaningful at
//! coordinates where the gradient happens to cross zero.

use super::{Result, Tensor, TensorError};
use crate::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked_coords: usize,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Check the gradient of `f` with respect to every coordinate of `x`.
/// `f` must be deterministic and scalar-valued; it reads `x` from its
/// environment so the same routine covers inputs and parameters alike.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    run(f, x, h, tol, None)
}

/// Like [`grad_check`] but probing a deterministic random subset of at most
/// `max_coords` coordinates, for functions too expensive to probe fully.
pub fn grad_check_sampled<F>(
    f: F,
    x: &Tensor,
    h: f64,
    tol: f64,
    max_coords: usize,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    run(f, x, h, tol, Some(max_coords))
}

fn run<F>(
    mut f: F,
    x: &Tensor,
    h: f64,
    tol: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(TensorError::Contract("grad_check requires h > 0".into()));
    }
    if !x.requires_grad() {
        return Err(TensorError::Contract(
            "grad_check target must require gradients".into(),
        ));
    }

    let probe = f()?;
    if probe.len() != 1 {
        return Err(TensorError::Contract(format!(
            "grad_check requires a scalar function, got shape {:?}",
            probe.shape()
        )));
    }
    let again = f()?;
    if probe.item()?.to_bits() != again.item()?.to_bits() {
        return Err(TensorError::Oracle(format!(
            "function is not deterministic: {} vs {}",
            probe.item()?,
            again.item()?
        )));
    }

    x.zero_grad();
    again.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.len()]);

    let coords: Vec<usize> = match max_coords {
        Some(limit) if limit < x.len() => {
            let mut all: Vec<usize> = (0..x.len()).collect();
            SplitMix64::new(0x6f72_61c1_e000 ^ x.len() as u64).shuffle(&mut all);
            let mut picked = all[..limit].to_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..x.len()).collect(),
    };

    let mut pairs: Vec<(usize, f64, f64)> = Vec::with_capacity(coords.len());
    for &i in &coords {
        let orig = x.data()[i];
        let plus = (orig as f64 + h) as f32;
        let minus = (orig as f64 - h) as f32;

        x.set_value(i, plus);
        let fp = f()?.item()? as f64;
        x.set_value(i, minus);
        let fm = f()?.item()? as f64;
        x.set_value(i, orig);

        let numeric = (fp - fm) / (plus as f64 - minus as f64);
        pairs.push((i, analytic[i] as f64, numeric));
    }

    let scale = pairs
        .iter()
        .map(|&(_, a, n)| a.abs().max(n.abs()))
        .fold(0.0f64, f64::max);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked_coords: pairs.len(),
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        tolerance: tol,
    };
    if scale > 0.0 {
        for (i, a, n) in pairs {
            let rel = (a - n).abs() / scale;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_coord = i;
                report.worst_analytic = a;
                report.worst_numeric = n;
            }
        }
    }
    Ok(report)
}
