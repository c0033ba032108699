use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

pub fn relu_inplace(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient through a ReLU given its *output*; zero where the output is 0.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    output.shape().expect(&grad_out.shape())?;
    let mut g = grad_out.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
        if o <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}
