use super::{Gradients, Mode, Network};
use crate::dist::RngStream;
use crate::error::{Error, Result};
use ndarray::Array2;

/// Below this magnitude a gradient counts as zero and the error is absolute.
const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-5)`
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step evaluations straddle a ReLU kink; the central
    /// difference is not a derivative there.
    pub skipped_kinks: usize,
    /// `(tensor index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// Compares backpropagated gradients of `loss(network output)` with central
/// differences in train mode. `loss` returns the scalar and its gradient with
/// respect to the output. The network is not modified.
pub fn grad_check<L>(net: &Network, x: &Array2<f64>, loss: L, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    L: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    let pass = net.forward(x, Mode::Train)?;
    let (_, upstream) = loss(pass.output());
    let (analytic, _) = net.backward(&pass, &upstream)?;
    grad_check_against(net, x, loss, &analytic, opts)
}

/// Same as [`grad_check`] but against caller-supplied analytic gradients.
pub fn grad_check_against<L>(
    net: &Network,
    x: &Array2<f64>,
    loss: L,
    analytic: &Gradients,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    L: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    let analytic_slices = analytic.slices();
    let shapes: Vec<usize> = net.parameters().slices().iter().map(|s| s.len()).collect();
    if analytic_slices.len() != shapes.len() || analytic_slices.iter().zip(&shapes).any(|(a, &n)| a.len() != n) {
        return Err(Error::Config("analytic gradient layout does not match network".into()));
    }
    let specs = net.specs();
    let mut probe = net.clone();
    let mut rng = RngStream::new(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    for (tensor, &len) in shapes.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(k) if k < len => {
                let mut all: Vec<usize> = (0..len).collect();
                rng.shuffle(&mut all);
                all.truncate(k);
                all
            }
            _ => (0..len).collect(),
        };
        for idx in coords {
            let original = probe.param_slices_mut()[tensor][idx];
            probe.param_slices_mut()[tensor][idx] = original + opts.step;
            let plus = probe.forward(x, Mode::Train)?;
            probe.param_slices_mut()[tensor][idx] = original - opts.step;
            let minus = probe.forward(x, Mode::Train)?;
            probe.param_slices_mut()[tensor][idx] = original;
            if plus.relu_pattern(&specs) != minus.relu_pattern(&specs) {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (loss(plus.output()).0 - loss(minus.output()).0) / (2.0 * opts.step);
            let a = analytic_slices[tensor][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((tensor, idx));
            }
        }
    }
    Ok(report)
}
