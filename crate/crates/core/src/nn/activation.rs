use crate::error::Result;
use crate::nn::tensor::Tensor4;

/// Element-wise `max(x, slope * x)` for `slope` in `[0, 1)`.
pub fn leaky_relu_forward(input: &Tensor4, slope: f64) -> Tensor4 {
    debug_assert!((0.0..1.0).contains(&slope));
    let data = input
        .data()
        .iter()
        .map(|&x| if x > 0.0 { x } else { slope * x })
        .collect();
    Tensor4::from_parts(input.dims(), data)
}

/// Multiplies `upstream` by 1 where the pre-activation `input` is positive, else by `slope`.
pub fn leaky_relu_backward(input: &Tensor4, upstream: &Tensor4, slope: f64) -> Result<Tensor4> {
    input.same_dims(upstream)?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { slope * g })
        .collect();
    Ok(Tensor4::from_parts(input.dims(), data))
}
