//! Central finite-difference audits of analytic gradients.

use advspeech::detector::{detector_layers, DetectorArch, ThirdActivation};
use advspeech::nn::{LayerSpec, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn audit(layers: Vec<LayerSpec>, input_shape: &[usize], seed: u64) {
    audit_every(layers, input_shape, seed, 1, EPS);
}

/// loss = sum_i c_i * out_i with fixed random coefficients; checks every
/// `stride`-th weight and input value.
pub fn audit_every(layers: Vec<LayerSpec>, input_shape: &[usize], seed: u64, stride: usize, eps: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::build(input_shape, layers, seed).unwrap();
    // non-zero biases so relu/pool kinks are not all at zero
    for group in net.params_mut() {
        if let Some(b) = group.get_mut(1) {
            for v in b.values_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let x = random_tensor(input_shape, &mut rng);
    let out_len: usize = net.output_shape().iter().product();
    let coef: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |net: &Network, x: &Tensor| -> f64 {
        net.predict(x)
            .unwrap()
            .values()
            .iter()
            .zip(&coef)
            .map(|(a, b)| a * b)
            .sum()
    };

    let cache = net.forward(&x).unwrap();
    let grads = net
        .backward(&cache, &Tensor::new(net.output_shape().to_vec(), coef.clone()).unwrap())
        .unwrap();

    let mut checked = 0;
    for li in 0..net.params().len() {
        for ti in 0..net.params()[li].len() {
            for vi in (0..net.params()[li][ti].len()).step_by(stride) {
                let orig = net.params()[li][ti].values()[vi];
                net.params_mut()[li][ti].values_mut()[vi] = orig + eps;
                let plus = loss(&net, &x);
                net.params_mut()[li][ti].values_mut()[vi] = orig - eps;
                let minus = loss(&net, &x);
                net.params_mut()[li][ti].values_mut()[vi] = orig;
                let fd = (plus - minus) / (2.0 * eps);
                let an = grads.params[li][ti].values()[vi];
                assert!(
                    rel_err(an, fd) < REL_TOL,
                    "layer {li} tensor {ti} value {vi}: analytic {an} fd {fd}"
                );
                checked += 1;
            }
        }
    }
    for vi in (0..x.len()).step_by(stride) {
        let mut xp = x.clone();
        xp.values_mut()[vi] += eps;
        let mut xm = x.clone();
        xm.values_mut()[vi] -= eps;
        let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * eps);
        let an = grads.input.values()[vi];
        assert!(rel_err(an, fd) < REL_TOL, "input {vi}: analytic {an} fd {fd}");
        checked += 1;
    }
    assert!(checked > 0);
}

pub fn each_layer_kind() {
    let cases: Vec<(Vec<LayerSpec>, Vec<usize>)> = vec![
        (vec![LayerSpec::conv(2, 3, 2)], vec![5, 4, 2]),
        (vec![LayerSpec::pool(2, 2)], vec![6, 5, 2]),
        (vec![LayerSpec::pool(1, 3)], vec![3, 7, 1]),
        (vec![LayerSpec::pool(1, 1)], vec![3, 3, 2]),
        (vec![LayerSpec::dense(4)], vec![6]),
        (vec![LayerSpec::Flatten, LayerSpec::dense(2)], vec![2, 3, 2]),
        (vec![LayerSpec::Relu], vec![10]),
        (vec![LayerSpec::Selu], vec![10]),
        (vec![LayerSpec::Linear], vec![10]),
        (vec![LayerSpec::Softmax], vec![7]),
        // per-row softmax over the channel axis, as in the sequence victim
        (vec![LayerSpec::conv(4, 1, 3), LayerSpec::Softmax], vec![5, 3, 2]),
    ];
    for (i, (layers, shape)) in cases.into_iter().enumerate() {
        audit(layers, &shape, 100 + i as u64);
    }
}

pub fn three_layer_network_8x6() {
    audit(
        vec![
            LayerSpec::conv(3, 2, 2),
            LayerSpec::Relu,
            LayerSpec::pool(1, 2),
            LayerSpec::conv(4, 2, 2),
            LayerSpec::Selu,
            LayerSpec::Flatten,
            LayerSpec::dense(3),
            LayerSpec::Softmax,
        ],
        &[8, 6, 1],
        11,
    );
}

pub fn detector_wiring_t_max_16() {
    // thousands of relu and max-pool kinks: a small step keeps the central
    // difference from straddling one, rounding error stays far below 1e-4
    let eps = 1e-6;
    for act in [ThirdActivation::Linear, ThirdActivation::Selu] {
        let arch = DetectorArch {
            third_activation: act,
            ..DetectorArch::desk()
        };
        audit_every(detector_layers(&arch), &[16, 40, 1], 21, 1, eps);
    }
    // full width: every 53rd value keeps the run short
    audit_every(detector_layers(&DetectorArch::full()), &[16, 40, 1], 22, 53, eps);
}
