use super::tensor::{Real, Tensor};
use super::AutodiffError;

/// Moment accumulators for bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R> {
    pub first_moment: Vec<Tensor<R>>,
    pub second_moment: Vec<Tensor<R>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<R: Real> AdamState<R> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        Self::with_hyper(shapes, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor<R>> = shapes.into_iter().map(Tensor::zeros).collect();
        AdamState {
            second_moment: zeros.clone(),
            first_moment: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One Adam update in place. Nothing is modified when an error is returned.
pub fn adam_step<R: Real>(
    params: &mut [&mut Tensor<R>],
    grads: &[Tensor<R>],
    state: &mut AdamState<R>,
    lr: f64,
) -> Result<(), AutodiffError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(AutodiffError::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(AutodiffError::InvalidArgument(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.first_moment[i].shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(AutodiffError::NonFiniteGradient { index: i });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (R::of(state.beta1), R::of(state.beta2));
    let one = R::one();
    let corr1 = one - b1.powi(t);
    let corr2 = one - b2.powi(t);
    let (lr, eps) = (R::of(lr), R::of(state.eps));

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        let pd = p.data_mut();
        for (((pv, &gv), mv), vv) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / corr1;
            let v_hat = *vv / corr2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
