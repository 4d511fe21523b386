use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest relative disagreement between the tape gradient of a scalar
/// function and central differences with step `epsilon`:
/// `max_i |a_i - cd_i| / max(|a_i|, |cd_i|, 1e-5)`. The floor keeps components
/// below finite-difference resolution from dominating.
///
/// `build` receives a fresh tape and the leaf holding the point and must
/// return the scalar output node.
pub fn grad_check<F>(build: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input(point.clone());
    let out = build(&mut tape, x)?;
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(x, &tape)?;

    let eval = |p: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let x = t.input(p.clone());
        let out = build(&mut t, x)?;
        let v = t.value(out);
        if v.len() != 1 {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        Ok(v.values()[0])
    };

    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + epsilon;
        let up = eval(&probe)?;
        probe.values_mut()[i] = orig - epsilon;
        let down = eval(&probe)?;
        probe.values_mut()[i] = orig;
        let cd = (up - down) / (2.0 * epsilon);
        let a = analytic.values()[i];
        let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-5);
        worst = worst.max(rel);
    }
    Ok(worst)
}
