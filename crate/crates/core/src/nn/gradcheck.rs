use super::mlp::{forward_batch, MlpSpec, ParamVector};
use crate::error::{Error, Result};

/// Central-difference estimate of the gradient of `⟨upstream, forward(params)⟩`.
///
/// Only uses forward evaluations, so it serves as an oracle for
/// [`super::backward`].
pub fn finite_diff_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    upstream: &[f64],
    h: f64,
) -> Result<ParamVector> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    params.check(spec)?;
    if upstream.len() != spec.output_dim() {
        return Err(Error::dim("upstream gradient", spec.output_dim(), upstream.len()));
    }
    let objective = |p: &[f64]| -> Result<f64> {
        let out = forward_batch(spec, p, input, 1)?;
        Ok(out.output().iter().zip(upstream).map(|(o, u)| o * u).sum())
    };
    let mut work = params.values.clone();
    let mut grad = Vec::with_capacity(work.len());
    for i in 0..work.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = objective(&work)?;
        work[i] = orig - h;
        let minus = objective(&work)?;
        work[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(ParamVector {
        values: grad,
        spec_hash: params.spec_hash,
    })
}
