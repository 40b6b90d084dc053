use rand::Rng;
use serde::Serialize;

use super::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{GainError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_pair: (f64, f64),
}

/// Compares analytic gradients of `loss_fn` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` on `samples` random trainable coordinates (all of
/// them when `samples` is at least their number).
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
/// `loss_fn` must be deterministic.
///
/// Outputs of `stop_gradient` nodes are held at their values at the base
/// point while perturbing, so the check targets the gradient that
/// stop-gradient defines rather than the derivative of the loss value.
pub fn grad_check<R, F>(
    params: &mut ParamSet,
    h: f64,
    samples: usize,
    rng: &mut R,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    R: Rng,
    F: Fn(&mut Tape) -> Result<Var>,
{
    let eval = |params: &ParamSet, stops: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::with_stop_values(params, stops.to_vec());
        let l = loss_fn(&mut tape)?;
        let v = tape.value(l).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(GainError::Numeric("loss is not finite during gradient check".into()))
        }
    };

    let (analytic, stops) = {
        let mut tape = Tape::new(params);
        let l = loss_fn(&mut tape)?;
        if !tape.value(l).item().is_finite() {
            return Err(GainError::Numeric("loss is not finite during gradient check".into()));
        }
        (tape.backward(l).into_params(), tape.stop_values())
    };

    let coords: Vec<(ParamId, usize)> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| (0..p.value.len()).map(move |i| (id, i)))
        .collect();
    let chosen: Vec<(ParamId, usize)> = if samples >= coords.len() {
        coords
    } else {
        (0..samples).map(|_| coords[rng.gen_range(0..coords.len())]).collect()
    };

    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, worst: None, worst_pair: (0.0, 0.0) };
    for (id, i) in chosen {
        let orig = params.value(id).data()[i];
        params.get_mut(id).value.data_mut()[i] = orig + h;
        let up = eval(params, &stops);
        params.get_mut(id).value.data_mut()[i] = orig - h;
        let down = eval(params, &stops);
        params.get_mut(id).value.data_mut()[i] = orig;
        let numeric = (up? - down?) / (2.0 * h);
        let a = analytic.get(id).map(|g| g.data()[i]).unwrap_or(0.0);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = Some((params.get(id).name.clone(), i));
            report.worst_pair = (a, numeric);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{cross_entropy, kl_pair_loss, Linear, ParamGroup};
    use crate::seed::rng_from;

    #[test]
    fn linear_cross_entropy() {
        let mut rng = rng_from(5);
        let mut ps = ParamSet::new();
        let lin = Linear::new(&mut ps, "lin", ParamGroup::Other, 4, 5, &mut rng).unwrap();
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(3, 4, x).unwrap();
        let report = grad_check(&mut ps, 1e-5, 1000, &mut rng, |tape| {
            let xv = tape.constant(x.clone());
            let logits = lin.forward(tape, xv)?;
            cross_entropy(tape, logits, &[0, 4, 2])
        })
        .unwrap();
        assert_eq!(report.checked, 25);
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn ignored_parameter_has_zero_error() {
        let mut ps = ParamSet::new();
        ps.add("unused", ParamGroup::Other, Tensor::filled(2, 2, 1.0)).unwrap();
        let report = grad_check(&mut ps, 1e-5, 10, &mut rng_from(0), |tape| {
            Ok(tape.constant(Tensor::scalar(3.0)))
        })
        .unwrap();
        assert_eq!(report.max_relative_error, 0.0);
    }

    #[test]
    fn nan_loss_is_numeric_failure() {
        let mut ps = ParamSet::new();
        ps.add("p", ParamGroup::Other, Tensor::scalar(1.0)).unwrap();
        let err = grad_check(&mut ps, 1e-5, 1, &mut rng_from(0), |tape| {
            Ok(tape.constant(Tensor::scalar(f64::NAN)))
        })
        .unwrap_err();
        assert!(matches!(err, GainError::Numeric(_)));
    }

    #[test]
    fn stop_gradient_surrogate_is_checked() {
        let mut rng = rng_from(2);
        let mut ps = ParamSet::new();
        let data = |rng: &mut rand_chacha::ChaCha8Rng| {
            Tensor::matrix(3, 5, (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
        };
        let a = ps.add("a", ParamGroup::Other, data(&mut rng)).unwrap();
        let b = ps.add("b", ParamGroup::Other, data(&mut rng)).unwrap();
        let report = grad_check(&mut ps, 1e-5, usize::MAX, &mut rng, |tape| {
            let (av, bv) = (tape.param(a), tape.param(b));
            kl_pair_loss(tape, av, bv)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}
