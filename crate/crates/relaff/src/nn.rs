//! Parameter initialization and the linear-layer helper shared by the
//! encoder and the regression head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{add, add_bias, matmul, ParameterStore, Result, Value};

/// Uniform init in +-1/sqrt(fan_in), seeded.
pub fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// A dense layer `x . w + b` with parameters held in a [`ParameterStore`].
pub struct Linear {
    pub weight: Value,
    pub bias: Value,
}

impl Linear {
    /// Register a fresh layer under `name.weight` / `name.bias`.
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Linear> {
        let weight = store.register(
            &format!("{name}.weight"),
            Value::parameter(&[in_dim, out_dim], init_matrix(rng, in_dim, out_dim)),
        )?;
        let bias = store.register(
            &format!("{name}.bias"),
            Value::parameter(&[out_dim], vec![0.0; out_dim]),
        )?;
        Ok(Linear { weight, bias })
    }

    /// Look an existing layer up by name.
    pub fn lookup(store: &ParameterStore, name: &str) -> Result<Linear> {
        Ok(Linear {
            weight: store.get(&format!("{name}.weight"))?,
            bias: store.get(&format!("{name}.bias"))?,
        })
    }

    /// Apply to rank-2 input (rows are samples).
    pub fn forward(&self, x: &Value) -> Result<Value> {
        add_bias(&matmul(x, &self.weight)?, &self.bias)
    }

    /// Apply to a rank-1 input without the bias broadcast.
    pub fn forward_vec(&self, x: &Value) -> Result<Value> {
        let m = matmul(&crate::tensor::reshape(x, &[1, x.len()])?, &self.weight)?;
        let out_dim = self.bias.len();
        add(&crate::tensor::reshape(&m, &[out_dim])?, &self.bias)
    }
}

/// Weight-only projection (no bias), used by the attention maps.
pub struct Projection {
    pub weight: Value,
}

impl Projection {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Projection> {
        let weight = store.register(
            &format!("{name}.weight"),
            Value::parameter(&[in_dim, out_dim], init_matrix(rng, in_dim, out_dim)),
        )?;
        Ok(Projection { weight })
    }

    pub fn lookup(store: &ParameterStore, name: &str) -> Result<Projection> {
        Ok(Projection {
            weight: store.get(&format!("{name}.weight"))?,
        })
    }

    pub fn forward(&self, x: &Value) -> Result<Value> {
        matmul(x, &self.weight)
    }
}
