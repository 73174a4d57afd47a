use rand::Rng;

use super::{NumError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Fully connected network with a shared hidden activation and a linear
/// output layer. Parameters are stored as `[w0, b0, w1, b1, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<Tensor>,
}

impl Mlp {
    /// Uniform init in `±1/sqrt(fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.push(Tensor::uniform(&[w[0], w[1]], -bound, bound, rng));
            params.push(Tensor::zeros(&[w[1]]));
        }
        Self { sizes: sizes.to_vec(), activation, params }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// `x: [n, input_dim]` to `[n, output_dim]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, NumError> {
        let layers = vars.len() / 2;
        let mut h = x;
        for (i, wb) in vars.chunks(2).enumerate() {
            let z = tape.matmul(h, wb[0])?;
            h = tape.add_row(z, wb[1])?;
            if i + 1 < layers {
                h = match self.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Forward pass without recording gradients.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NumError> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let input = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, input)?;
        Ok(tape.value(out).clone())
    }

    /// `self <- tau * other + (1 - tau) * self`.
    pub fn polyak_from(&mut self, other: &Mlp, tau: f64) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            p.data_mut().iter_mut().zip(q.data()).for_each(|(a, b)| *a = tau * b + (1.0 - tau) * *a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn predict_matches_manual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(&[2, 3, 1], Activation::Relu, &mut rng);
        let x = [0.3, -0.7];
        let mut h = [0.0; 3];
        for (j, hj) in h.iter_mut().enumerate() {
            *hj = (x[0] * m.params[0].get(0, j) + x[1] * m.params[0].get(1, j) + m.params[1].data()[j]).max(0.0);
        }
        let y: f64 = (0..3).map(|j| h[j] * m.params[2].get(j, 0)).sum::<f64>() + m.params[3].data()[0];
        let got = m.predict(&Tensor::from_rows(&[x.to_vec()]).unwrap()).unwrap();
        assert!((got.data()[0] - y).abs() < 1e-15);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mlp::new(&[3, 5, 2], Activation::Tanh, &mut rng);
        let x0 = vec![0.1, -0.4, 0.8];
        let mut tape = Tape::new();
        let vars = m.bind_frozen(&mut tape);
        let x = tape.leaf(Tensor::new(&[1, 3], x0.clone()).unwrap());
        let y = m.forward(&mut tape, &vars, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let g = tape.backward(loss).unwrap();
        let num = central_difference(&mut |v| m.predict(&Tensor::new(&[1, 3], v.to_vec()).unwrap()).unwrap().sum(), &x0, 1e-5);
        for (a, b) in g.get(x).unwrap().data().iter().zip(&num) {
            assert!(relative_error(*a, *b) < 1e-6);
        }
    }

    #[test]
    fn polyak_one_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = Mlp::new(&[2, 4, 1], Activation::Relu, &mut rng);
        let b = Mlp::new(&[2, 4, 1], Activation::Relu, &mut rng);
        a.polyak_from(&b, 1.0);
        assert_eq!(a, b);
    }
}
