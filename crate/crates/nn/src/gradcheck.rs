//! Central finite-difference gradient checks.

use crate::{ParamStore, Result, Tape, Var};

/// Per-parameter comparison of analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the checked entries.
    pub rel_error: f64,
}

/// Compares reverse-mode gradients of `loss` with central differences of
/// width `2·step`. `loss` must rebuild the same computation on a fresh tape
/// every call (freeze any randomness). At most `max_per_param` evenly spaced
/// entries of each parameter are perturbed.
pub fn check<F>(store: &mut ParamStore, loss: F, step: f64, max_per_param: usize) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    tape.backward(l)?;
    let analytic = tape.param_grads(store)?;
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(&mut tape, store)?;
        Ok(tape.value(l).data()[0])
    };
    let mut out = Vec::with_capacity(store.len());
    for id in 0..store.len() {
        let n = store.get(id).len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        let mut checked = 0;
        for j in (0..n).step_by(stride) {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + step;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig - step;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[id][j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
            checked += 1;
        }
        let denom = na.sqrt().max(nn.sqrt());
        let rel_error = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
        out.push(GradCheck { name: store.name(id).to_string(), checked, rel_error });
    }
    Ok(out)
}
