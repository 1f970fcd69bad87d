//! Analytic-vs-finite-difference gradient comparison on `f64` copies.

use super::mlp::MlpParams;

/// Result of one loss evaluation handed to [`grad_check`].
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub param_grads: MlpParams<f64>,
    /// Gradients for the extra (non-parameter) inputs, same order as given.
    pub extra_grads: Vec<Vec<f64>>,
    /// Identifies the active branch of every piecewise-linear op
    /// (ReLU, clamp, absolute value). Probes whose `±h` evaluations land on
    /// a different branch than the base point are skipped.
    pub branch_key: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_analytic: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    pub fn worst(&self) -> Option<&GroupError> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares the analytic gradient of `loss_fn` against central differences
/// for every network parameter and every entry of `extra`.
pub fn grad_check<F>(
    params: &MlpParams<f64>,
    extra: &[(String, Vec<f64>)],
    loss_fn: F,
    config: GradCheckConfig,
) -> GradCheckReport
where
    F: Fn(&MlpParams<f64>, &[Vec<f64>]) -> LossEval,
{
    let extra_vals: Vec<Vec<f64>> = extra.iter().map(|(_, v)| v.clone()).collect();
    let base = loss_fn(params, &extra_vals);
    let h = config.step;
    let mut groups = Vec::new();

    let names = params.tensor_names();
    let analytic = base.param_grads.tensors();
    let mut probe = params.clone();
    for (t, name) in names.into_iter().enumerate() {
        let mut g = GroupError {
            name,
            max_rel_err: 0.0,
            max_abs_analytic: 0.0,
            checked: 0,
            skipped: 0,
        };
        let n = analytic[t].len();
        for j in 0..n {
            let orig = probe.tensors()[t][j];
            let evals = STENCIL.map(|k| {
                probe.tensors_mut()[t][j] = orig + k * h;
                loss_fn(&probe, &extra_vals)
            });
            probe.tensors_mut()[t][j] = orig;
            record(&mut g, &base, &evals, analytic[t][j], h, config.floor);
        }
        groups.push(g);
    }

    let mut probe_extra = extra_vals.clone();
    for (k, (name, vals)) in extra.iter().enumerate() {
        let mut g = GroupError {
            name: name.clone(),
            max_rel_err: 0.0,
            max_abs_analytic: 0.0,
            checked: 0,
            skipped: 0,
        };
        for j in 0..vals.len() {
            let orig = vals[j];
            let evals = STENCIL.map(|s| {
                probe_extra[k][j] = orig + s * h;
                loss_fn(params, &probe_extra)
            });
            probe_extra[k][j] = orig;
            record(&mut g, &base, &evals, base.extra_grads[k][j], h, config.floor);
        }
        groups.push(g);
    }

    GradCheckReport {
        groups,
        tolerance: config.tolerance,
    }
}

const STENCIL: [f64; 4] = [2.0, 1.0, -1.0, -2.0];

fn record(g: &mut GroupError, base: &LossEval, evals: &[LossEval; 4], analytic: f64, h: f64, floor: f64) {
    if evals.iter().any(|e| e.branch_key != base.branch_key) {
        g.skipped += 1;
        return;
    }
    // five-point central difference, truncation error O(h^4)
    let [p2, p1, m1, m2] = evals.each_ref().map(|e| e.value);
    let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    let rel = (analytic - numeric).abs() / denom;
    g.max_rel_err = g.max_rel_err.max(rel);
    g.max_abs_analytic = g.max_abs_analytic.max(analytic.abs());
    g.checked += 1;
}
