//! Central finite-difference checking of tape gradients.

use crate::error::AutodiffError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Analytic and numeric gradients of a scalar function, one entry per input.
#[derive(Debug, Clone)]
pub struct GradientComparison {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradientComparison {
    /// Largest per-input relative error `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)`.
    pub fn max_relative_error(&self) -> f64 {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| relative_error(a.data(), n.data()))
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied())
        .max(norm(&mut numeric.iter().copied()))
        .max(1e-6);
    diff / scale
}

/// Differentiates `f` at `inputs` both through the tape and by central
/// differences with step `h`.
///
/// `f` receives the inputs as leaves (tracked for the analytic pass, constant
/// for the numeric passes) and must return a scalar. Stop-gradient outputs
/// are held at their unperturbed values during the numeric passes, so the
/// numeric derivative is that of the function the backward pass actually
/// differentiates.
/// Errors from `f` pass through unchanged.
pub fn compare<F, E>(f: F, inputs: &[Tensor], h: f64) -> std::result::Result<GradientComparison, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let frozen = tape.stop_grad_values().to_vec();
    let analytic = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf is tracked"))
        .collect();

    let eval = |values: &[Tensor]| -> std::result::Result<f64, E> {
        let mut tape = Tape::new();
        tape.replay_stop_grads(frozen.clone());
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).data()[0])
    };
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[i].numel()];
        for (j, g) in grad.iter_mut().enumerate() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x;
            *g = (up - down) / (2.0 * h);
        }
        numeric.push(Tensor::new(inputs[i].shape().to_vec(), grad).map_err(E::from)?);
    }
    Ok(GradientComparison { analytic, numeric })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_passes_and_perturbed_fails() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let f = |t: &mut Tape, v: &[Var]| {
            let e = t.exp(v[0]);
            Ok(t.sum(e))
        };
        let mut cmp = compare::<_, AutodiffError>(f, &[x], 1e-5).unwrap();
        assert!(cmp.max_relative_error() < 1e-8);
        cmp.analytic[0].data_mut()[1] *= 1.01;
        assert!(cmp.max_relative_error() > 1e-4);
    }

    #[test]
    fn straight_through_term_is_seen_by_numeric_pass() {
        // exp(min(x, 1)) + (x - bg(x)) has derivative eˣ + 1 below the clamp
        // and 1 above it once bg is held fixed.
        let x = Tensor::vector(vec![0.2, 1.4]);
        let f = |t: &mut Tape, v: &[Var]| {
            let m = t.min_const(v[0], 1.0);
            let e = t.exp(m);
            let bg = t.stop_grad(v[0]);
            let st = t.sub(v[0], bg)?;
            let y = t.add(e, st)?;
            Ok(t.sum(y))
        };
        let cmp = compare::<_, AutodiffError>(f, &[x], 1e-5).unwrap();
        assert!(cmp.max_relative_error() < 1e-8);
        let g = cmp.numeric[0].data();
        assert!((g[0] - (0.2f64.exp() + 1.0)).abs() < 1e-6);
        assert!((g[1] - 1.0).abs() < 1e-6);
    }
}
