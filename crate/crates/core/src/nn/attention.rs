use super::ops;
use super::params::{Gradients, InitRng, Linear, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Multi-head scaled dot-product attention without masking.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionCache {
    q_in: Tensor,
    kv_in: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention probabilities per head, each `[tq, tk]`.
    probs: Vec<Tensor>,
    concat: Tensor,
}

impl AttentionCache {
    pub fn probs(&self) -> &[Tensor] {
        &self.probs
    }
}

/// Columns `h*dh..(h+1)*dh` of a `[t, d]` tensor.
fn head_slice(x: &Tensor, h: usize, dh: usize) -> Tensor {
    let d = x.shape()[1];
    let t = x.shape()[0];
    let mut out = Vec::with_capacity(t * dh);
    for r in 0..t {
        out.extend_from_slice(&x.data()[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    Tensor::new(vec![t, dh], out).expect("head slice")
}

fn head_scatter(dst: &mut Tensor, src: &Tensor, h: usize, dh: usize) {
    let d = dst.shape()[1];
    let t = dst.shape()[0];
    let dd = dst.data_mut();
    for r in 0..t {
        for (o, s) in dd[r * d + h * dh..r * d + (h + 1) * dh]
            .iter_mut()
            .zip(&src.data()[r * dh..(r + 1) * dh])
        {
            *o += s;
        }
    }
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut InitRng, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Invalid(format!(
                "model dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim)?,
            out: Linear::new(store, rng, &format!("{name}.out"), dim, dim)?,
            heads,
            dim,
        })
    }

    /// Queries from `q_in [tq, d]`, keys and values from `kv_in [tk, d]`.
    pub fn forward(&self, store: &ParamStore, q_in: &Tensor, kv_in: &Tensor) -> Result<(Tensor, AttentionCache)> {
        for (x, what) in [(q_in, "attention queries"), (kv_in, "attention keys/values")] {
            if x.rank() != 2 || x.shape()[1] != self.dim || x.shape()[0] == 0 {
                return Err(Error::Shape(format!(
                    "{what}: expected [t, {}], got {:?}",
                    self.dim,
                    x.shape()
                )));
            }
        }
        let q = self.q.forward(store, q_in)?;
        let k = self.k.forward(store, kv_in)?;
        let v = self.v.forward(store, kv_in)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Tensor::zeros(&[q_in.shape()[0], self.dim]);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = (head_slice(&q, h, dh), head_slice(&k, h, dh), head_slice(&v, h, dh));
            let scores = ops::matmul_nt(&qh, &kh)?.scale(scale);
            let p = ops::softmax_rows(&scores)?;
            let oh = ops::matmul(&p, &vh)?;
            head_scatter(&mut concat, &oh, h, dh);
            probs.push(p);
        }
        let y = self.out.forward(store, &concat)?;
        Ok((
            y,
            AttentionCache {
                q_in: q_in.clone(),
                kv_in: kv_in.clone(),
                q,
                k,
                v,
                probs,
                concat,
            },
        ))
    }

    /// Returns `(d q_in, d kv_in)`. For self-attention the caller adds them.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &AttentionCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> (Tensor, Tensor) {
        let dconcat = self.out.backward(store, &cache.concat, dy, grads);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = cache.q.zeros_like();
        let mut dk = cache.k.zeros_like();
        let mut dv = cache.v.zeros_like();
        for h in 0..self.heads {
            let (qh, kh, vh) = (
                head_slice(&cache.q, h, dh),
                head_slice(&cache.k, h, dh),
                head_slice(&cache.v, h, dh),
            );
            let doh = head_slice(&dconcat, h, dh);
            let p = &cache.probs[h];
            let dp = ops::matmul_nt(&doh, &vh).expect("dP");
            let dvh = ops::matmul_tn(p, &doh).expect("dV");
            let ds = ops::softmax_rows_backward(p, &dp).scale(scale);
            let dqh = ops::matmul(&ds, &kh).expect("dQ");
            let dkh = ops::matmul_tn(&ds, &qh).expect("dK");
            head_scatter(&mut dq, &dqh, h, dh);
            head_scatter(&mut dk, &dkh, h, dh);
            head_scatter(&mut dv, &dvh, h, dh);
        }
        let dq_in = self.q.backward(store, &cache.q_in, &dq, grads);
        let mut dkv_in = self.k.backward(store, &cache.kv_in, &dk, grads);
        dkv_in.add_assign(&self.v.backward(store, &cache.kv_in, &dv, grads));
        (dq_in, dkv_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::init_rng;

    fn setup(dim: usize, heads: usize) -> (ParamStore, MultiHeadAttention) {
        let mut store = ParamStore::new();
        let mut rng = init_rng(3);
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "att", dim, heads).unwrap();
        (store, mha)
    }

    fn seq(t: usize, d: usize, phase: f64) -> Tensor {
        Tensor::new(
            vec![t, d],
            (0..t * d).map(|i| (i as f64 * 0.37 + phase).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_key_ignores_queries() {
        let (store, mha) = setup(8, 2);
        let kv = seq(1, 8, 0.3);
        let (y1, _) = mha.forward(&store, &seq(3, 8, 0.0), &kv).unwrap();
        let (y2, _) = mha.forward(&store, &seq(3, 8, 5.0), &kv).unwrap();
        // every row equals the projected value pushed through the output layer
        let v = mha.v.forward(&store, &kv).unwrap();
        let expected = mha.out.forward(&store, &v).unwrap();
        for r in 0..3 {
            for (a, b) in y1.row(r).iter().zip(expected.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kv_permutation_invariance() {
        let (store, mha) = setup(8, 4);
        let kv = seq(5, 8, 1.1);
        let perm = [3, 0, 4, 1, 2];
        let mut permuted = Vec::new();
        for &p in &perm {
            permuted.extend_from_slice(kv.row(p));
        }
        let kv_p = Tensor::new(vec![5, 8], permuted).unwrap();
        let q = seq(2, 8, 0.2);
        let (y1, _) = mha.forward(&store, &q, &kv).unwrap();
        let (y2, _) = mha.forward(&store, &q, &kv_p).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut store = ParamStore::new();
        assert!(MultiHeadAttention::new(&mut store, &mut init_rng(0), "a", 10, 4).is_err());
        let (store, mha) = setup(8, 2);
        assert!(mha.forward(&store, &seq(2, 6, 0.0), &seq(2, 8, 0.0)).is_err());
    }

    #[test]
    fn probabilities_are_convex_weights() {
        let (store, mha) = setup(8, 2);
        let (_, cache) = mha.forward(&store, &seq(3, 8, 0.0), &seq(4, 8, 2.0)).unwrap();
        for p in cache.probs() {
            for r in 0..3 {
                assert!(p.row(r).iter().all(|&v| v >= 0.0));
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
