use super::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is near zero are compared absolutely.
const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Analytic gradient per checked tensor.
    pub analytic: Vec<Vec<f64>>,
    /// Central-difference gradient per checked tensor.
    pub numeric: Vec<Vec<f64>>,
    pub max_rel_err: f64,
    /// (tensor, coordinate) of the largest error.
    pub worst: Option<(usize, usize)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    fn build(analytic: Vec<Vec<f64>>, numeric: Vec<Vec<f64>>, tolerance: f64) -> Self {
        let mut max_rel_err = 0.0;
        let mut worst = None;
        for (t, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            for (i, (&x, &y)) in a.iter().zip(n).enumerate() {
                let e = relative_error(x, y);
                if e > max_rel_err || worst.is_none() {
                    max_rel_err = e;
                    worst = Some((t, i));
                }
            }
        }
        GradCheckReport {
            analytic,
            numeric,
            max_rel_err,
            worst,
            tolerance,
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("finite-difference step must be > 0, got {step}")))
    }
}

/// Compares reverse-mode gradients of `f` with respect to each input tensor
/// against central finite differences.
pub fn grad_check<F>(inputs: &[Tensor], f: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'static>, &[Var]) -> Result<Var>,
{
    check_step(step)?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::standalone();
        let vars = xs
            .iter()
            .map(|t| g.variable(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let y = f(&mut g, &vars)?;
        Ok(g.scalar(y))
    };

    let mut g = Graph::standalone();
    let vars = inputs
        .iter()
        .map(|t| g.variable(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&mut g, &vars)?;
    let base = g.scalar(root);
    let again = eval(inputs)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic {
            first: base,
            second: again,
        });
    }
    let bp = g.backward(root)?;
    let analytic = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| bp.wrt(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut xs = inputs.to_vec();
    for t in 0..inputs.len() {
        let mut col = Vec::with_capacity(inputs[t].len());
        for i in 0..inputs[t].len() {
            let orig = xs[t].data()[i];
            xs[t].data_mut()[i] = orig + step;
            let plus = eval(&xs)?;
            xs[t].data_mut()[i] = orig - step;
            let minus = eval(&xs)?;
            xs[t].data_mut()[i] = orig;
            col.push((plus - minus) / (2.0 * step));
        }
        numeric.push(col);
    }
    Ok(GradCheckReport::build(analytic, numeric, tolerance))
}

/// Same check for a function of stored parameters, evaluated on eval-mode
/// graphs (no dropout).
pub fn grad_check_params<F>(
    params: &ParamSet,
    ids: &[ParamId],
    f: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<Var>,
{
    check_step(step)?;
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::eval(p);
        let y = f(&mut g)?;
        Ok(g.scalar(y))
    };

    let mut g = Graph::eval(params);
    let root = f(&mut g)?;
    let base = g.scalar(root);
    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic {
            first: base,
            second: again,
        });
    }
    let grads = g.backward(root)?.param_grads();
    let analytic = ids.iter().map(|&id| grads.dense(params, id)).collect();

    let mut work = params.clone();
    let mut numeric = Vec::with_capacity(ids.len());
    for &id in ids {
        let mut col = Vec::with_capacity(params.get(id).len());
        for i in 0..params.get(id).len() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            col.push((plus - minus) / (2.0 * step));
        }
        numeric.push(col);
    }
    Ok(GradCheckReport::build(analytic, numeric, tolerance))
}
