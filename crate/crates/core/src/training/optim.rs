use crate::numerics::{Gradients, ParamStore, Scalar};

/// Nesterov momentum in the gradient-at-current-point form:
///
/// ```text
/// v <- mu v - lr g
/// theta <- theta + mu v - lr g
/// ```
///
/// which tracks the look-ahead iterate of the classical formulation. With
/// `mu = 0` it is plain gradient descent.
#[derive(Clone, Debug)]
pub struct Nesterov<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Nesterov<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr: T::from_f64_lossy(lr),
            momentum: T::from_f64_lossy(momentum),
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self, index: usize) -> Option<&[T]> {
        self.velocity.get(index).and_then(|v| v.as_deref())
    }

    /// Updates every trainable parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        let (lr, mu) = (self.lr, self.momentum);
        for (id, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let v = self.velocity[id.0].get_or_insert_with(|| vec![T::zero(); g.len()]);
            for ((theta, vi), &gi) in p.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vi = mu * *vi - lr * gi;
                *theta = *theta + mu * *vi - lr * gi;
            }
        }
    }
}

/// Rescales `grads` to global norm `max_norm` when it is larger. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(T::from_f64_lossy(max_norm / norm));
    }
    norm
}
