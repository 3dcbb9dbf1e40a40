//! Central finite-difference checks of the hand-written reverse passes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{Layer, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Tensor name and flat index of the worst probe.
    pub worst: Option<(String, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// At most this many coordinates are probed per tensor.
    pub max_per_tensor: usize,
    /// Denominator floor so that two near-zero gradients do not count as a
    /// large relative error.
    pub floor: f64,
    pub train: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            max_per_tensor: 24,
            floor: 1e-6,
            train: true,
            seed: 0,
        }
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn probe(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= k {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, k).into_vec();
        v.sort_unstable();
        v
    }
}

/// Compares analytic gradients of `L = Σ y ⊙ R` (fixed random `R`) with
/// respect to the input and every parameter against central differences.
pub fn check_layer<L: Layer + ?Sized>(
    layer: &mut L,
    x: &Tensor,
    cfg: GradCheckConfig,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let y = layer.forward(x, cfg.train);
    let r = y.mapv(|_| rng.random_range(-1.0..1.0));
    let objective = |layer: &mut L, x: &Tensor| (layer.forward(x, cfg.train) * &r).sum();

    layer.params_mut().into_iter().for_each(|p| p.zero_grad());
    layer.forward(x, cfg.train);
    let dx = layer.backward(&r);
    let grads: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut at = None;
    let mut xp = x.as_standard_layout().into_owned();
    for i in probe(x.len(), cfg.max_per_tensor, &mut rng) {
        let orig = x.as_slice().expect("contiguous")[i];
        xp.as_slice_mut().expect("contiguous")[i] = orig + cfg.eps;
        let plus = objective(layer, &xp);
        xp.as_slice_mut().expect("contiguous")[i] = orig - cfg.eps;
        let minus = objective(layer, &xp);
        xp.as_slice_mut().expect("contiguous")[i] = orig;
        let num = (plus - minus) / (2.0 * cfg.eps);
        let ana = dx.as_slice().expect("contiguous")[i];
        let e = relative_error(ana, num, cfg.floor);
        if e > worst {
            worst = e;
            at = Some(("input".to_string(), i));
        }
        checked += 1;
    }
    for (pi, g) in grads.iter().enumerate() {
        for i in probe(g.len(), cfg.max_per_tensor, &mut rng) {
            let orig = layer.params()[pi].value[i];
            layer.params_mut()[pi].value[i] = orig + cfg.eps;
            let plus = objective(layer, x);
            layer.params_mut()[pi].value[i] = orig - cfg.eps;
            let minus = objective(layer, x);
            layer.params_mut()[pi].value[i] = orig;
            let num = (plus - minus) / (2.0 * cfg.eps);
            let e = relative_error(g[i], num, cfg.floor);
            if e > worst {
                worst = e;
                at = Some((layer.params()[pi].name.clone(), i));
            }
            checked += 1;
        }
    }
    GradCheck {
        max_rel_error: worst,
        checked,
        worst: at,
    }
}
