//! Central finite-difference verification of analytic gradients.
//!
//! The caller owns the parameter arrays and supplies a re-evaluation
//! closure; this module only perturbs entries and compares. Double
//! precision is expected — with `step` around `1e-4` the truncation error
//! of the central difference sits far below the tolerances used here.

use ndarray::ArrayD;

/// One compared gradient entry.
#[derive(Debug, Clone)]
pub struct FdSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub samples: Vec<FdSample>,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&FdSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap())
    }

    pub fn all_within(&self, rel_tol: f64) -> bool {
        self.samples.iter().all(|s| s.rel_err < rel_tol)
    }
}

/// Relative error with a small absolute floor so that a pair of
/// near-machine-zero gradients does not register as a mismatch.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= 1e-9 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-9)
}

/// Compares analytic gradients against central differences at the chosen
/// `(param_index, flat_element_index)` positions.
///
/// `eval` must recompute the scalar loss from the current contents of
/// `params`; entries are restored bit-exactly after each probe.
pub fn compare_with_fd<F>(
    params: &mut [(String, ArrayD<f64>)],
    analytic: &[ArrayD<f64>],
    picks: &[(usize, usize)],
    step: f64,
    mut eval: F,
) -> FdReport
where
    F: FnMut(&[(String, ArrayD<f64>)]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut samples = Vec::with_capacity(picks.len());
    for &(pi, flat) in picks {
        let original = params[pi].1.as_slice().unwrap()[flat];
        params[pi].1.as_slice_mut().unwrap()[flat] = original + step;
        let f_plus = eval(params);
        params[pi].1.as_slice_mut().unwrap()[flat] = original - step;
        let f_minus = eval(params);
        params[pi].1.as_slice_mut().unwrap()[flat] = original;

        let numeric = (f_plus - f_minus) / (2.0 * step);
        let a = analytic[pi].as_slice().unwrap()[flat];
        samples.push(FdSample {
            param: params[pi].0.clone(),
            index: flat,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
        });
    }
    FdReport { samples }
}
