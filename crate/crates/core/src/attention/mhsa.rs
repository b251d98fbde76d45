use rand::Rng;

use super::dense::{glorot, Dense};
use super::ops::zero_masked_rows;
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamId, ParamSet, Tape, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Head {
    /// Each `[D, D / h]`.
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
}

/// Row-wise `relu(x W_1 + b_1) W_2 + b_2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ffn {
    pub l1: Dense,
    pub l2: Dense,
}

impl Ffn {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        d_ff: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            l1: Dense::init(params, &format!("{name}.1"), dim, d_ff, rng),
            l2: Dense::init(params, &format!("{name}.2"), d_ff, dim, rng),
        }
    }

    /// `f: [B, T, D]` → `[B, T, D]`.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, f: Var) -> Result<Var> {
        let shape = tape.shape(f).to_vec();
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let x = tape.reshape(f, &[b * t, d])?;
        let h = self.l1.forward(tape, bound, x)?;
        let h = tape.relu(h);
        let y = self.l2.forward(tape, bound, h)?;
        tape.reshape(y, &[b, t, d])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MhsaLayer {
    pub heads: Vec<Head>,
    /// `[D, D]`
    pub w_o: ParamId,
    pub ffn: Ffn,
}

/// Stacked self-attention layers, each followed by a feed-forward block.
/// No residual connections or layer norm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mhsa {
    pub dim: usize,
    pub layers: Vec<MhsaLayer>,
}

impl Mhsa {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        heads: usize,
        d_ff: usize,
        n_layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{heads} heads do not divide dimension {dim}"
            )));
        }
        let dh = dim / heads;
        let layers = (0..n_layers)
            .map(|l| {
                let heads = (0..heads)
                    .map(|i| {
                        let p = format!("{name}.{l}.head{i}");
                        Head {
                            q: params.add(format!("{p}.q"), glorot(dim, dh, rng)),
                            k: params.add(format!("{p}.k"), glorot(dim, dh, rng)),
                            v: params.add(format!("{p}.v"), glorot(dim, dh, rng)),
                        }
                    })
                    .collect();
                MhsaLayer {
                    heads,
                    w_o: params.add(format!("{name}.{l}.w_o"), glorot(dim, dim, rng)),
                    ffn: Ffn::init(params, &format!("{name}.{l}.ffn"), dim, d_ff, rng),
                }
            })
            .collect();
        Ok(Self { dim, layers })
    }

    /// Self-attention of layer `layer`. Padded keys are masked out and padded query rows are zero.
    pub fn mhsa_block(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        f: Var,
        mask: &[bool],
        layer: usize,
    ) -> Result<Var> {
        let shape = tape.shape(f).to_vec();
        if shape.len() != 3 || shape[2] != self.dim || mask.len() != shape[0] * shape[1] {
            return Err(Error::dim("mhsa_block", &shape, &[mask.len()]));
        }
        let lp = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::contract(format!("no self-attention layer {layer}")))?;
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let dh = d / lp.heads.len();
        let key_mask: Vec<bool> = (0..b)
            .flat_map(|bi| {
                let row = &mask[bi * t..(bi + 1) * t];
                (0..t).flat_map(move |_| row.iter().copied())
            })
            .collect();
        let x = tape.reshape(f, &[b * t, d])?;
        let mut heads = Vec::with_capacity(lp.heads.len());
        for h in &lp.heads {
            let mut proj = |w: ParamId| -> Result<Var> {
                let y = tape.matmul(x, bound.get(w))?;
                tape.reshape(y, &[b, t, dh])
            };
            let (q, k, v) = (proj(h.q)?, proj(h.k)?, proj(h.v)?);
            let scores = tape.batch_matmul(q, k, true)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_masked_or_zero(scores, &key_mask)?;
            heads.push(tape.batch_matmul(attn, v, false)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 2)?
        };
        let cat = tape.reshape(cat, &[b * t, d])?;
        let out = tape.matmul(cat, bound.get(lp.w_o))?;
        let out = zero_masked_rows(tape, out, mask)?;
        tape.reshape(out, &[b, t, d])
    }

    pub fn ffn_block(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        f: Var,
        layer: usize,
    ) -> Result<Var> {
        let lp = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::contract(format!("no feed-forward layer {layer}")))?;
        lp.ffn.forward(tape, bound, f)
    }

    /// All layers; padded rows of the result are exactly zero.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        f: Var,
        mask: &[bool],
    ) -> Result<Var> {
        let mut h = f;
        for l in 0..self.layers.len() {
            h = self.mhsa_block(tape, bound, h, mask, l)?;
            h = self.ffn_block(tape, bound, h, l)?;
            h = zero_masked_rows(tape, h, mask)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{grad_check, GradCheckConfig, Tensor};

    fn setup(d: usize, h: usize, seed: u64) -> (ParamSet, Mhsa) {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Mhsa::init(&mut params, "ssm", d, h, 2 * d, 1, &mut rng).unwrap();
        (params, m)
    }

    fn rows(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    fn block(params: &ParamSet, m: &Mhsa, f: &[Vec<f64>], mask: &[bool]) -> Vec<Vec<f64>> {
        let d = f[0].len();
        let mut tape = Tape::new();
        let bound = tape.bind(params);
        let x = tape.constant(Tensor::new(&[1, f.len(), d], f.concat()).unwrap());
        let y = m.mhsa_block(&mut tape, &bound, x, mask, 0).unwrap();
        tape.value(y)
            .data()
            .chunks(d)
            .map(<[f64]>::to_vec)
            .collect()
    }

    fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
        let n = w.shape()[1];
        (0..n)
            .map(|j| x.iter().enumerate().map(|(i, v)| v * w.row(i)[j]).sum())
            .collect()
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            Mhsa::init(&mut params, "x", 5, 2, 10, 1, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_row_is_a_linear_map() {
        let (params, m) = setup(4, 2, 1);
        let x = vec![0.3, -0.7, 1.2, 0.5];
        let got = block(&params, &m, std::slice::from_ref(&x), &[true]);
        let lp = &m.layers[0];
        let cat: Vec<f64> = lp
            .heads
            .iter()
            .flat_map(|h| vec_mat(&x, params.get(h.v)))
            .collect();
        let expect = vec_mat(&cat, params.get(lp.w_o));
        for (a, b) in got[0].iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_query_key_gives_mean_of_values() {
        let (mut params, m) = setup(4, 2, 2);
        for h in &m.layers[0].heads {
            params
                .get_mut(h.q)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
            params
                .get_mut(h.k)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let f = rows(&mut rng, 4, 4);
        let mask = [true, true, true, false];
        let got = block(&params, &m, &f, &mask);
        let lp = &m.layers[0];
        let cat: Vec<f64> = lp
            .heads
            .iter()
            .flat_map(|h| {
                let vs: Vec<Vec<f64>> =
                    f[..3].iter().map(|r| vec_mat(r, params.get(h.v))).collect();
                (0..2)
                    .map(move |j| vs.iter().map(|v| v[j]).sum::<f64>() / 3.0)
                    .collect::<Vec<_>>()
            })
            .collect();
        let expect = vec_mat(&cat, params.get(lp.w_o));
        for row in &got[..3] {
            for (a, b) in row.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(got[3].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn permuting_rows_permutes_output() {
        let (params, m) = setup(4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..20 {
            let f = rows(&mut rng, 5, 4);
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rng);
            let pf: Vec<Vec<f64>> = perm.iter().map(|&i| f[i].clone()).collect();
            let a = block(&params, &m, &f, &[true; 5]);
            let b = block(&params, &m, &pf, &[true; 5]);
            for (k, &i) in perm.iter().enumerate() {
                for (x, y) in b[k].iter().zip(&a[i]) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn padded_rows_are_zero_and_ignored() {
        let (params, m) = setup(4, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let f = rows(&mut rng, 4, 4);
        let mut g = f.clone();
        g[3] = vec![100.0, -3.0, 8.0, 1.0];
        let mask = [true, true, true, false];
        let a = block(&params, &m, &f, &mask);
        let b = block(&params, &m, &g, &mask);
        assert_eq!(a, b);
        assert!(a[3].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_ffn_gives_zero() {
        let (mut params, m) = setup(4, 2, 5);
        let ffn = &m.layers[0].ffn;
        for id in [ffn.l1.w, ffn.l2.w, ffn.l2.b] {
            params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
        params
            .get_mut(ffn.l1.b)
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.3);
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let x = tape.constant(Tensor::full(&[2, 3, 4], 0.7));
        let y = m.ffn_block(&mut tape, &bound, x, 0).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ffn_can_reproduce_its_input() {
        let d = 3;
        let (mut params, m) = setup(d, 1, 6);
        let ffn = &m.layers[0].ffn;
        // relu(x) - relu(-x) == x
        let mut w1 = vec![0.0; d * 2 * d];
        let mut w2 = vec![0.0; 2 * d * d];
        for i in 0..d {
            w1[i * 2 * d + i] = 1.0;
            w1[i * 2 * d + d + i] = -1.0;
            w2[i * d + i] = 1.0;
            w2[(d + i) * d + i] = -1.0;
        }
        params
            .set(ffn.l1.w, Tensor::new(&[d, 2 * d], w1).unwrap())
            .unwrap();
        params
            .set(ffn.l2.w, Tensor::new(&[2 * d, d], w2).unwrap())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let input = Tensor::new(
            &[2, 2, d],
            (0..4 * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let x = tape.constant(input.clone());
        let y = m.ffn_block(&mut tape, &bound, x, 0).unwrap();
        assert_eq!(tape.value(y), &input);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (params, m) = setup(4, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let input = Tensor::new(
            &[2, 3, 4],
            (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mask = [true, true, false, true, true, true];
        let report = grad_check(
            |tape, bound| {
                let x = tape.constant(input.clone());
                let y = m.forward(tape, bound, x, &mask)?;
                let sq = tape.mul(y, y)?;
                tape.sum_all(sq)
            },
            &params,
            &GradCheckConfig {
                tolerance: 1e-5,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(report.pass, "{:?}", report.worst());
    }
}
