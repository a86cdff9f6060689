use super::{DiffError, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic - numeric| / max(1, |numeric|) over checked coordinates.
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub checked: usize,
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape and the inputs recorded as trainable leaves and
/// must return a scalar. `coords` restricts the check to `(input, coord)`
/// pairs; `None` checks every coordinate.
pub fn grad_check<F>(
    f: F,
    point: &[Tensor],
    fd_step: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let eval = |pt: &[Tensor]| -> Result<(Tape, Vec<Var>, Var), DiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pt.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(point)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();

    let all: Vec<(usize, usize)>;
    let list = match coords {
        Some(c) => c,
        None => {
            all = point
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.numel()).map(move |k| (i, k)))
                .collect();
            &all
        }
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_input: 0, worst_coord: 0, checked: 0 };
    let mut pt = point.to_vec();
    for &(i, k) in list {
        let x0 = pt[i].data()[k];
        pt[i].data_mut()[k] = x0 + fd_step;
        let (tp, _, op) = eval(&pt)?;
        let fp = tp.value(op).data()[0];
        pt[i].data_mut()[k] = x0 - fd_step;
        let (tm, _, om) = eval(&pt)?;
        let fm = tm.value(om).data()[0];
        pt[i].data_mut()[k] = x0;
        let a = analytic[i].data()[k];
        if !fp.is_finite() || !fm.is_finite() || !a.is_finite() {
            return Err(DiffError::NonFinite { input: i, coord: k });
        }
        let numeric = (fp - fm) / (2.0 * fd_step);
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_input = i;
            report.worst_coord = k;
        }
        report.checked += 1;
    }
    Ok(report)
}
