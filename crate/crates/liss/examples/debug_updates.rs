use liss_tensor::Graph;
use ndarray::{ArrayD, IxDyn};

fn main() {
    // conv2d with all-NaN weights through the real op
    let mut g: Graph<f32> = Graph::new();
    let x = g.constant(ArrayD::from_elem(IxDyn(&[1, 3, 38, 38]), 0.5f32));
    let w = g.constant(ArrayD::from_elem(IxDyn(&[4, 3, 7, 7]), f32::NAN));
    let b = g.constant(ArrayD::zeros(IxDyn(&[4])));
    let y = g.conv2d(x, w, b, 1, 0);
    let nan_count = g.value(y).iter().filter(|v| v.is_nan()).count();
    println!("conv out NaNs: {nan_count}/{}", g.value(y).len());

    // instance_norm2d of an all-NaN input
    let xn = g.constant(ArrayD::from_elem(IxDyn(&[1, 2, 4, 4]), f32::NAN));
    let gamma = g.constant(ArrayD::from_elem(IxDyn(&[2]), 1.0f32));
    let beta = g.constant(ArrayD::zeros(IxDyn(&[2])));
    let z = g.instance_norm2d(xn, gamma, beta, 1e-5);
    let nan_z = g.value(z).iter().filter(|v| v.is_nan()).count();
    println!("IN out NaNs: {nan_z}/{}", g.value(z).len());
}
