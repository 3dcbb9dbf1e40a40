use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voyagecast_nn::gradcheck::{check_layer, GradCheckConfig};
use voyagecast_nn::layers::{
    Attention, BatchNorm, BiLstm, Conv1d, ConvBlock, ConvBranch, Dense, Layer, Lstm, MaxPool,
    Padding, RangeMap, SigmoidHead,
};
use voyagecast_nn::param::Param;
use voyagecast_nn::{Ablation, Model, ModelConfig, Tensor};

const TOL: f64 = 1e-3;
/// Whole networks stack many ReLUs; a step of 1e-4 occasionally straddles a
/// kink, so they are probed with a smaller one.
const NET_EPS: f64 = 1e-5;

fn random(shape: (usize, usize, usize), seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn assert_grads<L: Layer + ?Sized>(name: &str, layer: &mut L, x: &Tensor, train: bool) {
    assert_grads_eps(name, layer, x, train, 1e-4)
}

fn assert_grads_eps<L: Layer + ?Sized>(
    name: &str,
    layer: &mut L,
    x: &Tensor,
    train: bool,
    eps: f64,
) {
    let cfg = GradCheckConfig {
        train,
        eps,
        ..Default::default()
    };
    let r = check_layer(layer, x, cfg);
    assert!(r.checked > 0);
    assert!(
        r.max_rel_error < TOL,
        "{name}: max relative error {} over {} probes at {:?}",
        r.max_rel_error,
        r.checked,
        r.worst
    );
}

#[test]
fn dense_and_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random((2, 4, 5), 2);
    assert_grads(
        "dense",
        &mut Dense::new("d", 5, 3, false, &mut rng),
        &x,
        true,
    );
    assert_grads(
        "dense relu",
        &mut Dense::new("d", 5, 3, true, &mut rng),
        &x,
        true,
    );
}

#[test]
fn conv_plain_and_dilated() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random((2, 9, 3), 4);
    for (k, dil, pad) in [
        (3, 1, Padding::Same),
        (3, 2, Padding::Same),
        (5, 2, Padding::Same),
        (3, 2, Padding::Valid),
    ] {
        let mut c = Conv1d::new("c", 3, 4, k, dil, pad, &mut rng);
        for b in &mut c.b.value {
            *b = rng.random_range(-0.5..0.5);
        }
        assert_grads(&format!("conv k{k} d{dil}"), &mut c, &x, true);
    }
}

#[test]
fn batchnorm_both_modes() {
    let x = random((2, 6, 3), 5);
    let mut bn = BatchNorm::new("bn", 3);
    bn.gamma.value = vec![0.7, 1.3, -0.4];
    bn.beta.value = vec![0.1, -0.2, 0.3];
    assert_grads("batchnorm train", &mut bn, &x, true);
    bn.running_mean = vec![0.2, -0.1, 0.05];
    bn.running_var = vec![0.5, 1.5, 0.9];
    assert_grads("batchnorm eval", &mut bn, &x, false);
}

#[test]
fn batchnorm_maxpool_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random((2, 8, 3), 7);
    let mut branch = ConvBranch {
        conv: Conv1d::new("c", 3, 4, 3, 2, Padding::Same, &mut rng),
        norm: BatchNorm::new("bn", 4),
        pool: MaxPool::new(2),
    };
    assert_grads("conv+bn+pool", &mut branch, &x, true);
    let mut pool = MaxPool::new(3);
    assert_grads("maxpool", &mut pool, &x, true);
}

#[test]
fn conv_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random((2, 9, 4), 9);
    assert_grads(
        "block",
        &mut ConvBlock::new("b", 4, 5, 3, 2, 2, true, &mut rng),
        &x,
        true,
    );
}

#[test]
fn lstm_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random((2, 5, 3), 11);
    assert_grads("lstm", &mut Lstm::new("l", 3, 4, false, &mut rng), &x, true);
    assert_grads(
        "lstm reverse",
        &mut Lstm::new("l", 3, 4, true, &mut rng),
        &x,
        true,
    );
    assert_grads("bilstm", &mut BiLstm::new("bi", 3, 4, &mut rng), &x, true);
}

#[test]
fn attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random((2, 4, 3), 13);
    for omega in [0.0, 0.25, 1.0] {
        assert_grads(
            &format!("attention ω={omega}"),
            &mut Attention::new("a", 3, omega, 5, &mut rng),
            &x,
            true,
        );
    }
}

struct HeadWithRanges(SigmoidHead, RangeMap);

impl Layer for HeadWithRanges {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.0.forward(x, train);
        self.1.forward(&y, train)
    }
    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.1.backward(dy);
        self.0.backward(&d)
    }
    fn params(&self) -> Vec<&Param> {
        self.0.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.0.params_mut()
    }
}

#[test]
fn range_mapped_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random((2, 6, 4), 15);
    let mut head = HeadWithRanges(
        SigmoidHead::new("h", 4, 2, &mut rng),
        RangeMap {
            ranges: vec![(-68.0, 45.0), (-58.0, 50.0)],
        },
    );
    assert_grads("head", &mut head, &x, true);
}

fn toy(ablation: Ablation, features: usize) -> ModelConfig {
    ModelConfig {
        filters: vec![4, 4, 3],
        kernels: vec![3, 3, 3],
        lstm_units: 3,
        encoder_dense: 4,
        dense: vec![5, 4, 3],
        output_steps: 6,
        dropout: 0.0,
        seed: 21,
        ..ModelConfig::full(features, ablation)
    }
}

/// Zero-initialised biases put ReLU units exactly on their kink whenever an
/// upstream layer is silent; move them to a generic point before probing.
fn jitter_biases(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        if p.name.ends_with(".b") || p.name.ends_with(".beta") {
            p.value
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
    }
}

#[test]
fn full_networks() {
    for ablation in Ablation::ALL {
        let mut model = Model::new(toy(ablation, 6)).unwrap();
        jitter_biases(&mut model, 1);
        let x = random((2, 19, 6), 22);
        assert_grads_eps(&format!("model {ablation}"), &mut model, &x, true, NET_EPS);
    }
}

#[test]
fn full_networks_across_seeds() {
    for seed in 0..6 {
        for ablation in [Ablation::C1, Ablation::C4] {
            let mut model = Model::new(ModelConfig {
                seed,
                ..toy(ablation, 6)
            })
            .unwrap();
            jitter_biases(&mut model, seed + 100);
            let x = random((2, 19, 6), seed + 200);
            assert_grads_eps(
                &format!("model {ablation} seed {seed}"),
                &mut model,
                &x,
                seed % 2 == 0,
                NET_EPS,
            );
        }
    }
}

#[test]
fn full_network_inference_mode() {
    let mut model = Model::new(toy(Ablation::C1, 6)).unwrap();
    jitter_biases(&mut model, 2);
    let x = random((2, 19, 6), 23);
    // Give the running statistics non-trivial values first.
    Layer::forward(&mut model, &x, true);
    assert_grads_eps("model C1 eval", &mut model, &x, false, NET_EPS);
}
