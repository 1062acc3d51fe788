use serde::Serialize;

use super::{NumericError, Tape, Tensor, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale of
/// `tol * RELATIVE_FLOOR` instead of relative to their own magnitude.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// One input coordinate: (input position, flat element index).
pub type Coordinate = (usize, usize);

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst: Option<Coordinate>,
    /// Coordinates whose perturbation crossed a relu kink or changed a
    /// min/max winner; their finite difference is meaningless.
    pub excluded: Vec<Coordinate>,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Compares tape gradients of a scalar function against central
/// differences at `x`.
pub fn grad_check<F>(f: F, x: &Tensor, tol: f64) -> Result<GradCheckReport, NumericError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, NumericError>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), tol)
}

/// Multi-input form of [`grad_check`]; every element of every input is
/// perturbed.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], tol: f64) -> Result<GradCheckReport, NumericError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericError>,
{
    let coords: Vec<Coordinate> = inputs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |e| (k, e)))
        .collect();
    grad_check_coords(f, inputs, &coords, tol)
}

/// Checks only the listed coordinates.
pub fn grad_check_coords<F>(
    f: F,
    inputs: &[Tensor],
    coords: &[Coordinate],
    tol: f64,
) -> Result<GradCheckReport, NumericError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericError>,
{
    let evaluate = |values: &[Tensor]| -> Result<(f64, u64), NumericError> {
        let mut tape = Tape::new();
        tape.set_track_branches(true);
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.value(out).item(), tape.branch_signature()))
    };

    let mut tape = Tape::new();
    tape.set_track_branches(true);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let base_signature = tape.branch_signature();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheckReport {
        tolerance: tol,
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
        excluded: Vec::new(),
        passed: true,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for &(k, e) in coords {
        let original = work[k].data()[e];
        work[k].data_mut()[e] = original + FD_STEP;
        let (plus, sig_plus) = evaluate(&work)?;
        work[k].data_mut()[e] = original - FD_STEP;
        let (minus, sig_minus) = evaluate(&work)?;
        work[k].data_mut()[e] = original;

        if sig_plus != base_signature || sig_minus != base_signature {
            report.excluded.push((k, e));
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = relative_error(analytic[k].data()[e], numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = err;
            report.worst = Some((k, e));
        }
    }
    report.passed = report.max_relative_error <= tol;
    Ok(report)
}
