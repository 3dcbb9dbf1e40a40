use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Whether the tensor takes part in the L2 penalty.
    pub regularized: bool,
}

impl Param {
    pub fn filled(name: impl Into<String>, shape: &[usize], v: f64, regularized: bool) -> Self {
        let n = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![v; n],
            grad: vec![0.0; n],
            regularized,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::filled(name, shape, 0.0, false)
    }

    /// Uniform Glorot initialisation, `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng>(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::filled(name, shape, 0.0, true);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut p.value {
            *v = rng.random_range(-limit..limit);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    fn dims2(&self) -> (usize, usize) {
        match self.shape[..] {
            [r, c] => (r, c),
            [c] => (1, c),
            _ => panic!("parameter {} is not a matrix", self.name),
        }
    }

    pub fn mat(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(self.dims2(), &self.value).expect("shape matches storage")
    }

    pub fn grad_mat_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let d = self.dims2();
        ArrayViewMut2::from_shape(d, &mut self.grad).expect("shape matches storage")
    }
}
