//! Central-difference gradient checking.

use ndarray::ArrayD;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates sampled per parameter; `None` checks every coordinate.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, coords_per_param: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` gradients of the scalar `f` at `params` against central
/// differences `(f(p + h) - f(p - h)) / 2h`, one coordinate at a time.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &[ArrayD<f64>],
    analytic: &[ArrayD<f64>],
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&[ArrayD<f64>]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one gradient per parameter");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // flat coordinates index the logical (row-major) order of every array
    let params: Vec<ArrayD<f64>> = params.iter().map(|p| p.as_standard_layout().into_owned()).collect();
    let mut work = params.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, coords_checked: 0 };
    for (pi, grad) in analytic.iter().enumerate() {
        let grad = grad.as_standard_layout();
        assert_eq!(grad.shape(), params[pi].shape(), "gradient shape for parameter {pi}");
        let n = params[pi].len();
        let coords: Vec<usize> = match cfg.coords_per_param {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let original = params[pi].as_slice().expect("standard layout")[c];
            set_flat(&mut work[pi], c, original + cfg.step);
            let plus = f(&work);
            set_flat(&mut work[pi], c, original - cfg.step);
            let minus = f(&work);
            set_flat(&mut work[pi], c, original);
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.as_slice().expect("standard layout")[c];
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((pi, c));
            }
        }
    }
    report
}

fn set_flat(a: &mut ArrayD<f64>, i: usize, v: f64) {
    a.as_slice_mut().expect("standard layout")[i] = v;
}
