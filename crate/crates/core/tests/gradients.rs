//! Central finite-difference audits of every layer's analytic gradient.

mod oracles;

use advspeech::nn::{adam_step, cross_entropy, AdamConfig, AdamState, LayerSpec, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oracles::grad::random_tensor;

#[test]
fn three_layer_network_8x6() {
    oracles::grad::three_layer_network_8x6();
}

#[test]
fn detector_wiring_t_max_16() {
    oracles::grad::detector_wiring_t_max_16();
}

#[test]
fn each_layer_kind() {
    oracles::grad::each_layer_kind();
}

#[test]
fn dense_weight_gradient_is_outer_product() {
    let net = Network::build(&[2], vec![LayerSpec::dense(2)], 3).unwrap();
    let x = Tensor::from_vec(vec![0.5, -2.0]);
    let dy = Tensor::from_vec(vec![1.5, -0.25]);
    let cache = net.forward(&x).unwrap();
    let g = net.backward(&cache, &dy).unwrap();
    assert_eq!(
        g.params[0][0].values(),
        &[1.5 * 0.5, 1.5 * -2.0, -0.25 * 0.5, -0.25 * -2.0]
    );
    assert_eq!(g.params[0][1].values(), dy.values());
    // input gradient = W^T dy
    let w = net.params()[0][0].values();
    let expected = [w[0] * 1.5 + w[2] * -0.25, w[1] * 1.5 + w[3] * -0.25];
    for (a, b) in g.input.values().iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn cross_entropy_logit_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let label = rng.gen_range(0..4);
        let softmax = |z: &[f64]| {
            let mut p = z.to_vec();
            advspeech::nn::softmax_in_place(&mut p);
            p
        };
        let (_, grad) = cross_entropy(&softmax(&logits), label).unwrap();
        for i in 0..4 {
            let mut zp = logits.clone();
            zp[i] += 1e-5;
            let mut zm = logits.clone();
            zm[i] -= 1e-5;
            let fd = (cross_entropy(&softmax(&zp), label).unwrap().0
                - cross_entropy(&softmax(&zm), label).unwrap().0)
                / 2e-5;
            assert!((fd - grad[i]).abs() < 1e-5, "fd {fd} analytic {}", grad[i]);
        }
    }
}

#[test]
fn cross_entropy_closed_forms() {
    assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap().0, 0.0);
    assert!((cross_entropy(&[0.5, 0.5], 1).unwrap().0 - 2f64.ln()).abs() < 1e-12);
    assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let mut net = Network::build(&[1], vec![LayerSpec::dense(1)], 1).unwrap();
    let w0 = net.params()[0][0].values()[0];
    let cfg = AdamConfig::with_lr(0.001);
    let mut state = AdamState::new(&net);

    let zero = net.zero_grads();
    adam_step(&mut net, &zero, &cfg, &mut state).unwrap();
    assert_eq!(net.params()[0][0].values()[0], w0);

    let mut g = net.zero_grads();
    g[0][0].values_mut()[0] = 1.0;
    adam_step(&mut net, &g, &cfg, &mut state).unwrap();
    // second step overall, but the moments only saw one non-zero gradient:
    // m_hat = 0.1/(1-0.81), v_hat = 0.001/(1-0.998001)
    let m_hat = 0.1 / (1.0 - 0.9f64.powi(2));
    let v_hat = 0.001 / (1.0 - 0.999f64.powi(2));
    let expected = w0 - 0.001 * m_hat / (v_hat.sqrt() + 1e-8);
    assert!((net.params()[0][0].values()[0] - expected).abs() < 1e-15);

    let mut fresh = Network::build(&[1], vec![LayerSpec::dense(1)], 1).unwrap();
    let mut state = AdamState::new(&fresh);
    adam_step(&mut fresh, &g, &cfg, &mut state).unwrap();
    let moved = w0 - fresh.params()[0][0].values()[0];
    assert!((moved - 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
}

#[test]
fn adam_rejects_non_finite() {
    let mut net = Network::build(&[2], vec![LayerSpec::dense(1)], 1).unwrap();
    let before = net.clone();
    let mut g = net.zero_grads();
    g[0][0].values_mut()[1] = f64::NAN;
    let mut state = AdamState::new(&net);
    let err = adam_step(&mut net, &g, &AdamConfig::default(), &mut state);
    assert!(matches!(err, Err(advspeech::Error::Divergence(_))));
    assert_eq!(net, before);
}

#[test]
fn build_validates_shapes() {
    assert!(Network::build(&[3, 3, 1], vec![LayerSpec::conv(2, 4, 1)], 0).is_err());
    assert!(Network::build(&[3, 3, 1], vec![LayerSpec::dense(2)], 0).is_err());
    let net = Network::build(&[3, 3, 1], vec![LayerSpec::conv(2, 2, 2)], 0).unwrap();
    assert!(net.forward(&Tensor::zeros(&[3, 4, 1])).is_err());
}

#[test]
fn foreign_cache_is_a_state_error() {
    let a = Network::build(&[4], vec![LayerSpec::dense(3), LayerSpec::Softmax], 0).unwrap();
    let b = Network::build(&[4], vec![LayerSpec::dense(2), LayerSpec::Softmax], 0).unwrap();
    let cache = a.forward(&Tensor::zeros(&[4])).unwrap();
    assert!(matches!(
        b.backward(&cache, &Tensor::zeros(&[2])),
        Err(advspeech::Error::State(_))
    ));
}

#[test]
fn seeded_init_is_reproducible() {
    let layers = vec![LayerSpec::conv(3, 2, 2), LayerSpec::Flatten, LayerSpec::dense(2)];
    let a = Network::build(&[5, 5, 1], layers.clone(), 42).unwrap();
    let b = Network::build(&[5, 5, 1], layers.clone(), 42).unwrap();
    let c = Network::build(&[5, 5, 1], layers, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    // He-uniform bound sqrt(6 / fan_in)
    let limit = (6.0f64 / 4.0).sqrt();
    assert!(a.params()[0][0].values().iter().all(|v| v.abs() <= limit));
}

#[test]
fn softmax_outputs_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Network::build(&[6], vec![LayerSpec::dense(5), LayerSpec::Softmax], 1).unwrap();
    for _ in 0..50 {
        let x = random_tensor(&[6], &mut rng);
        let p = net.predict(&x).unwrap();
        let sum: f64 = p.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(p.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
