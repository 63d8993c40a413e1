//! Central finite-difference gradient checking.

use super::{backward, ParamStore, Tape, Var};
use crate::error::Result;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest per-parameter relative error.
    pub max_rel_err: f64,
    /// Parameter attaining `max_rel_err`.
    pub worst: String,
    pub checked_coords: usize,
}

/// Norms below this are compared absolutely rather than relatively.
const NORM_FLOOR: f64 = 1e-3;

/// Checks `d f / d param` for every parameter in `store`.
///
/// The relative error of one parameter is `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖, 1e-3)`.
/// At most `max_coords` coordinates per parameter are probed (evenly strided);
/// the tape gradient is compared only on those coordinates.
pub fn check<F>(store: &ParamStore<f64>, h: f64, max_coords: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&Tape<f64>, &ParamStore<f64>) -> Result<Var<f64>>,
{
    let mut analytic = store.clone();
    analytic.zero_grad();
    let tape = Tape::new();
    let loss = f(&tape, &analytic)?;
    backward(&tape, &loss, &mut analytic)?;
    drop(tape);

    let mut probe = store.clone();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: String::new(),
        checked_coords: 0,
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::disabled();
        Ok(f(&tape, s)?.value().data()[0])
    };
    for idx in 0..probe.len() {
        let (name, numel) = {
            let (n, p) = probe.param_at(idx);
            (n.to_string(), p.value().numel())
        };
        let stride = numel.div_ceil(max_coords.max(1));
        let tape_grad = analytic.grad(&name)?.data().to_vec();
        let (mut diff2, mut a2, mut b2) = (0.0, 0.0, 0.0);
        for c in (0..numel).step_by(stride) {
            let orig = probe.param_at(idx).1.value().data()[c];
            probe.param_at_mut(idx).1.value_mut().data_mut()[c] = orig + h;
            let up = eval(&probe)?;
            probe.param_at_mut(idx).1.value_mut().data_mut()[c] = orig - h;
            let down = eval(&probe)?;
            probe.param_at_mut(idx).1.value_mut().data_mut()[c] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = tape_grad[c];
            diff2 += (g - fd) * (g - fd);
            a2 += g * g;
            b2 += fd * fd;
            report.checked_coords += 1;
        }
        let rel = diff2.sqrt() / a2.sqrt().max(b2.sqrt()).max(NORM_FLOOR);
        if rel > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = rel;
            report.worst = name;
        }
    }
    Ok(report)
}
