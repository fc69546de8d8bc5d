//! Rough cost probe for a desk-scale encoder forward+backward step.

use liss_tensor::Graph;
use ndarray::{ArrayD, IxDyn};
use std::time::Instant;

fn randn(shape: &[usize], seed: &mut u64) -> ArrayD<f32> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        ((*seed >> 33) as f32 / (1u64 << 31) as f32) - 0.5
    })
}

fn main() {
    let mut s = 42u64;
    let base = 16usize;
    let x = randn(&[4, 3, 64, 64], &mut s);
    let w1 = randn(&[base, 3, 7, 7], &mut s);
    let b1 = randn(&[base], &mut s);
    let w2 = randn(&[2 * base, base, 3, 3], &mut s);
    let b2 = randn(&[2 * base], &mut s);
    let w3 = randn(&[4 * base, 2 * base, 3, 3], &mut s);
    let b3 = randn(&[4 * base], &mut s);
    let wr1 = randn(&[4 * base, 4 * base, 3, 3], &mut s);
    let br1 = randn(&[4 * base], &mut s);
    let wr2 = randn(&[4 * base, 4 * base, 3, 3], &mut s);
    let br2 = randn(&[4 * base], &mut s);
    let g1 = randn(&[base], &mut s);
    let g2 = randn(&[2 * base], &mut s);
    let g3 = randn(&[4 * base], &mut s);

    let iters = 20;
    let t0 = Instant::now();
    let mut sink = 0.0f32;
    for _ in 0..iters {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(x.clone());
        let w1v = g.param(w1.clone());
        let b1v = g.param(b1.clone());
        let w2v = g.param(w2.clone());
        let b2v = g.param(b2.clone());
        let w3v = g.param(w3.clone());
        let b3v = g.param(b3.clone());
        let wr1v = g.param(wr1.clone());
        let br1v = g.param(br1.clone());
        let wr2v = g.param(wr2.clone());
        let br2v = g.param(br2.clone());
        let g1v = g.param(g1.clone());
        let g1b = g.param(g1.clone());
        let g2v = g.param(g2.clone());
        let g2b = g.param(g2.clone());
        let g3v = g.param(g3.clone());
        let g3b = g.param(g3.clone());

        let h = g.reflect_pad2d(xv, 3);
        let h = g.conv2d(h, w1v, b1v, 1, 0);
        let h = g.instance_norm2d(h, g1v, g1b, 1e-5);
        let h = g.relu(h);
        let h = g.conv2d(h, w2v, b2v, 2, 1);
        let h = g.instance_norm2d(h, g2v, g2b, 1e-5);
        let h = g.relu(h);
        let h = g.conv2d(h, w3v, b3v, 2, 1);
        let h = g.instance_norm2d(h, g3v, g3b, 1e-5);
        let h = g.relu(h);
        // one residual block
        let p = g.reflect_pad2d(h, 1);
        let r = g.conv2d(p, wr1v, br1v, 1, 0);
        let r = g.relu(r);
        let p2 = g.reflect_pad2d(r, 1);
        let r = g.conv2d(p2, wr2v, br2v, 1, 0);
        let h = g.add(h, r);
        let loss = g.mean_all(h);
        let grads = g.backward(loss);
        sink += grads.get(w1v).unwrap().sum() + g.scalar(loss);
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    println!("encoder(64px, base16, res1, batch4) fwd+bwd: {:.1} ms/iter (sink {sink})", dt * 1e3);
}
