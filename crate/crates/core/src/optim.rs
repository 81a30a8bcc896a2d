/// SGD with heavy-ball momentum: `v <- momentum * v + g; p <- p - lr * v`.
///
/// The velocity starts at zero.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64, len: usize) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.velocity.len());
        debug_assert_eq!(grad.len(), self.velocity.len());
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}
