//! Minimal reverse-mode automatic differentiation.

mod adam;
mod graph;
mod sparse;
mod tensor;

pub use adam::Adam;
pub use graph::{
    attention_forward, bce_value, sigmoid, softmax_in_place, AttentionCache, Graph, Segments, Var, LAYER_NORM_EPS,
    LEAKY_SLOPE, PROB_CLAMP,
};
pub use sparse::SparseRows;
pub use tensor::Tensor;

/// Largest relative error between analytic and central-difference gradients
/// of `f` at `inputs`, with `|a − n| / max(|a|, |n|, floor)` per entry.
pub fn gradient_check<F>(inputs: &[Tensor], eps: f64, floor: f64, f: F) -> crate::Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> crate::Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect::<crate::Result<_>>()?;
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let eval = |xs: &[Tensor]| -> crate::Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect::<crate::Result<_>>()?;
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let orig = t.data()[k];
            xs[ti].data_mut()[k] = orig + eps;
            let up = eval(&xs)?;
            xs[ti].data_mut()[k] = orig - eps;
            let down = eval(&xs)?;
            xs[ti].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti].data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
