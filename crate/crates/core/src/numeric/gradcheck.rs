use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`,
/// so gradients smaller than the floor are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.failing().next().is_none()
    }

    pub fn failing(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(move |p| !(p.max_rel_error < self.tolerance))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn evaluate<F>(f: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    tape.value(loss)
        .item()
        .ok_or_else(|| Error::shape("grad_check", "function must return a 1x1 value"))
}

/// Compares reverse-mode gradients of `f` against central finite
/// differences for every entry of every parameter in `params`.
///
/// `f` must register parameters through [`Tape::param`] and be a pure
/// function of them; any randomness has to be frozen inside `f`.
pub fn grad_check<F>(f: F, params: &ParamStore, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let base = tape
        .value(loss)
        .item()
        .ok_or_else(|| Error::shape("grad_check", "function must return a 1x1 value"))?;
    let again = evaluate(&f, params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "function is not deterministic: {base} then {again}"
        )));
    }
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        params: Vec::new(),
        tolerance,
    };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let analytic = grads.get(name);
        let mut check = ParamCheck {
            name: name.to_owned(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..value.len() {
            let original = value.values()[i];
            probe.get_mut(name).expect("cloned store").values_mut()[i] = original + step;
            let plus = evaluate(&f, &probe)?;
            probe.get_mut(name).expect("cloned store").values_mut()[i] = original - step;
            let minus = evaluate(&f, &probe)?;
            probe.get_mut(name).expect("cloned store").values_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.map_or(0.0, |g| g.values()[i]);
            let err = relative_error(a, numeric);
            if !(err <= check.max_rel_error) {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
