//! Fixtures shared by the benchmarks: networks and batches shaped like the
//! MNIST scenarios' node models.

use rand::Rng;

use ogl_core::nn::{init_network, Activation, LayerSpec, Sample};
use ogl_core::DenseNetwork;

/// Pooled-MNIST node model layout: 196 inputs, one hidden layer, 10 classes.
pub fn node_layers(hidden: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::new(196, hidden, Activation::Relu), LayerSpec::new(hidden, 10, Activation::Softmax)]
}

pub fn node_network(hidden: usize, seed: u64) -> DenseNetwork {
    init_network(&node_layers(hidden), seed).expect("valid layers")
}

/// Random inputs in `[0, 1]` with uniform class labels.
pub fn random_batch(n: usize, dim: usize, classes: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ogl_core::seed::rng(seed);
    (0..n).map(|_| Sample::class((0..dim).map(|_| rng.gen::<f64>()).collect(), rng.gen_range(0..classes))).collect()
}
