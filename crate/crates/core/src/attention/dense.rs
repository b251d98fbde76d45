use rand::Rng;

use crate::error::Result;
use crate::tensor::{BoundParams, ParamId, ParamSet, Tape, Tensor, Var};

/// Glorot-uniform `[fan_in, fan_out]` matrix.
pub(crate) fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(&[fan_in, fan_out], data).expect("positive layer dims")
}

/// Affine map `x W + b` on row vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = params.add(format!("{name}.w"), glorot(fan_in, fan_out, rng));
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b }
    }

    /// `x`: `[N, fan_in]` → `[N, fan_out]`.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound.get(self.w))?;
        tape.add_bias(h, bound.get(self.b))
    }
}

/// Stack of dense layers with relu between them and a linear last layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `dims` lists every width, input first: `[in, h1, ..., out]`.
    pub fn init(params: &mut ParamSet, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bound, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}
