//! Reference decoder block: pre-norm LayerNorm (with bias), causal
//! multi-head attention with QKV-only biases and partial rotary
//! embeddings, and a gated FFN without biases. Generic over the scalar
//! type; all tests run in f64.

use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use super::ModelConfig;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input value")]
    NonFinite,
}

/// (positions x hidden) activation, row-major. Batch is handled by
/// running independent activations; the kernel is a reference, not a
/// throughput path.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation<F> {
    pub positions: usize,
    pub hidden: usize,
    pub values: Vec<F>,
}

impl<F: Float> Activation<F> {
    pub fn zeros(positions: usize, hidden: usize) -> Self {
        Activation {
            positions,
            hidden,
            values: vec![F::zero(); positions * hidden],
        }
    }

    pub fn row(&self, p: usize) -> &[F] {
        &self.values[p * self.hidden..(p + 1) * self.hidden]
    }

    fn row_mut(&mut self, p: usize) -> &mut [F] {
        &mut self.values[p * self.hidden..(p + 1) * self.hidden]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Dense weight matrix, row-major (rows x cols), applied as x * W^T with
/// x a row vector of `cols` inputs producing `rows` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<F>,
}

impl<F: Float> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![F::zero(); rows * cols],
        }
    }

    fn apply(&self, x: &[F], out: &mut [F]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, slot) in out.iter_mut().enumerate() {
            let row = &self.values[r * self.cols..(r + 1) * self.cols];
            let mut acc = F::zero();
            for (w, v) in row.iter().zip(x) {
                acc = acc + *w * *v;
            }
            *slot = acc;
        }
    }
}

/// Affine LayerNorm parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

/// One decoder block's weights. Under the QKV-only bias policy the only
/// projection biases present are q_bias, k_bias, v_bias; norms carry
/// their learned biases; FFN and output projections have none.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<F> {
    pub ln1: NormParams<F>,
    pub w_q: Matrix<F>,
    pub w_k: Matrix<F>,
    pub w_v: Matrix<F>,
    pub q_bias: Vec<F>,
    pub k_bias: Vec<F>,
    pub v_bias: Vec<F>,
    pub w_out: Matrix<F>,
    pub ln2: NormParams<F>,
    pub w_gate: Matrix<F>,
    pub w_up: Matrix<F>,
    pub w_down: Matrix<F>,
}

impl<F: Float> BlockWeights<F> {
    pub fn zeros(c: &ModelConfig) -> Self {
        let h = c.hidden as usize;
        let f = c.ffn_inner as usize;
        let norm = || NormParams {
            weight: vec![F::zero(); h],
            bias: vec![F::zero(); h],
        };
        BlockWeights {
            ln1: norm(),
            w_q: Matrix::zeros(h, h),
            w_k: Matrix::zeros(h, h),
            w_v: Matrix::zeros(h, h),
            q_bias: vec![F::zero(); h],
            k_bias: vec![F::zero(); h],
            v_bias: vec![F::zero(); h],
            w_out: Matrix::zeros(h, h),
            ln2: norm(),
            w_gate: Matrix::zeros(f, h),
            w_up: Matrix::zeros(f, h),
            w_down: Matrix::zeros(h, f),
        }
    }

    pub fn random<R: Rng>(c: &ModelConfig, rng: &mut R) -> Self {
        let mut w = Self::zeros(c);
        let mut fill = |v: &mut Vec<F>| {
            for slot in v.iter_mut() {
                *slot = F::from(rng.gen_range(-0.5..0.5)).unwrap();
            }
        };
        fill(&mut w.ln1.weight);
        fill(&mut w.ln1.bias);
        fill(&mut w.w_q.values);
        fill(&mut w.w_k.values);
        fill(&mut w.w_v.values);
        fill(&mut w.q_bias);
        fill(&mut w.k_bias);
        fill(&mut w.v_bias);
        fill(&mut w.w_out.values);
        fill(&mut w.ln2.weight);
        fill(&mut w.ln2.bias);
        fill(&mut w.w_gate.values);
        fill(&mut w.w_up.values);
        fill(&mut w.w_down.values);
        w
    }

    /// Names of every bias vector present in the container, for auditing
    /// the bias policy.
    pub fn bias_inventory() -> &'static [&'static str] {
        &["ln1.bias", "q_bias", "k_bias", "v_bias", "ln2.bias"]
    }
}

/// LayerNorm over the hidden dim: normalize to zero mean / unit variance
/// (population variance, epsilon-stabilized), then affine.
pub fn layer_norm<F: Float>(x: &[F], params: &NormParams<F>, out: &mut [F]) {
    let n = F::from(x.len()).unwrap();
    let mean = x.iter().fold(F::zero(), |a, &v| a + v) / n;
    let var = x
        .iter()
        .fold(F::zero(), |a, &v| a + (v - mean) * (v - mean))
        / n;
    let eps = F::from(1e-9).unwrap();
    let denom = (var + eps).sqrt();
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = (x[i] - mean) / denom * params.weight[i] + params.bias[i];
    }
}

/// Rotate the first `rotary_dims` dims of a per-head vector pairwise, the
/// pair (2i, 2i+1) by angle position x base^(-2i/rotated). Remaining dims
/// are untouched.
pub fn partial_rope<F: Float>(vec: &mut [F], position: u64, c: &ModelConfig) {
    let rotated = c.rotary_dims() as usize;
    debug_assert!(rotated % 2 == 0 && rotated <= vec.len());
    let base = F::from(c.rotary_base).unwrap();
    let pos = F::from(position).unwrap();
    for i in 0..rotated / 2 {
        let exponent = F::from(2 * i).unwrap() / F::from(rotated).unwrap();
        let theta = pos * base.powf(-exponent);
        let (sin, cos) = theta.sin_cos();
        let (a, b) = (vec[2 * i], vec[2 * i + 1]);
        vec[2 * i] = a * cos - b * sin;
        vec[2 * i + 1] = a * sin + b * cos;
    }
}

/// Pre-norm decoder block:
/// x + Attn(LN1(x)) followed by h + FFN(LN2(h)), with causal masking,
/// partial rotary on q/k, QKV-only biases, and a SiLU-gated FFN.
pub fn block_forward<F: Float>(
    x: &Activation<F>,
    weights: &BlockWeights<F>,
    c: &ModelConfig,
) -> Result<Activation<F>, KernelError> {
    let h = c.hidden as usize;
    if x.hidden != h {
        return Err(KernelError::ShapeMismatch(format!(
            "activation hidden {} vs config {}",
            x.hidden, h
        )));
    }
    if !x.is_finite() {
        return Err(KernelError::NonFinite);
    }
    let positions = x.positions;
    let heads = c.heads as usize;
    let head_dim = c.head_dim() as usize;

    // LN1 then q/k/v projections with biases, rope per head.
    let mut q = vec![F::zero(); positions * h];
    let mut k = vec![F::zero(); positions * h];
    let mut v = vec![F::zero(); positions * h];
    let mut normed = vec![F::zero(); h];
    for p in 0..positions {
        layer_norm(x.row(p), &weights.ln1, &mut normed);
        weights.w_q.apply(&normed, &mut q[p * h..(p + 1) * h]);
        weights.w_k.apply(&normed, &mut k[p * h..(p + 1) * h]);
        weights.w_v.apply(&normed, &mut v[p * h..(p + 1) * h]);
        for i in 0..h {
            q[p * h + i] = q[p * h + i] + weights.q_bias[i];
            k[p * h + i] = k[p * h + i] + weights.k_bias[i];
            v[p * h + i] = v[p * h + i] + weights.v_bias[i];
        }
        for head in 0..heads {
            let s = p * h + head * head_dim;
            partial_rope(&mut q[s..s + head_dim], p as u64, c);
            partial_rope(&mut k[s..s + head_dim], p as u64, c);
        }
    }

    // Causal attention per head, then output projection and residual.
    let scale = F::from(1.0 / (head_dim as f64).sqrt()).unwrap();
    let mut attn_out = Activation::zeros(positions, h);
    let mut context = vec![F::zero(); h];
    let mut projected = vec![F::zero(); h];
    for p in 0..positions {
        for slot in context.iter_mut() {
            *slot = F::zero();
        }
        for head in 0..heads {
            let off = head * head_dim;
            // softmax over positions 0..=p
            let mut logits = Vec::with_capacity(p + 1);
            for j in 0..=p {
                let mut dot = F::zero();
                for d in 0..head_dim {
                    dot = dot + q[p * h + off + d] * k[j * h + off + d];
                }
                logits.push(dot * scale);
            }
            let max = logits.iter().cloned().fold(logits[0], F::max);
            let mut weights_sm: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
            let sum = weights_sm.iter().fold(F::zero(), |a, &w| a + w);
            for w in weights_sm.iter_mut() {
                *w = *w / sum;
            }
            for (j, &w) in weights_sm.iter().enumerate() {
                for d in 0..head_dim {
                    context[off + d] = context[off + d] + w * v[j * h + off + d];
                }
            }
        }
        weights.w_out.apply(&context, &mut projected);
        let row = attn_out.row_mut(p);
        for i in 0..h {
            row[i] = x.row(p)[i] + projected[i];
        }
    }

    // LN2 then gated FFN (SiLU gate, no biases) and residual.
    let f = c.ffn_inner as usize;
    let mut out = Activation::zeros(positions, h);
    let mut gate = vec![F::zero(); f];
    let mut up = vec![F::zero(); f];
    let mut down = vec![F::zero(); h];
    for p in 0..positions {
        layer_norm(attn_out.row(p), &weights.ln2, &mut normed);
        weights.w_gate.apply(&normed, &mut gate);
        weights.w_up.apply(&normed, &mut up);
        for i in 0..f {
            let g = gate[i];
            let silu = g / (F::one() + (-g).exp());
            gate[i] = silu * up[i];
        }
        weights.w_down.apply(&gate, &mut down);
        let row = out.row_mut(p);
        for i in 0..h {
            row[i] = attn_out.row(p)[i] + down[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmodel::{reference_3b_config, BiasPolicy, NormKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn tiny_config(rng: &mut impl Rng) -> ModelConfig {
        let heads = rng.gen_range(1..=4u64);
        let head_dim = 4 * rng.gen_range(1..=2u64); // multiple of 4 so half is even
        ModelConfig {
            hidden: heads * head_dim,
            layers: rng.gen_range(1..=2),
            heads,
            seq_len: 8,
            vocab: 300,
            ffn_inner: rng.gen_range(4..=16),
            rotary_fraction: 0.5,
            rotary_base: 10_000.0,
            tie_embeddings: false,
            norm: NormKind::LayerNormWithBias,
            bias_policy: BiasPolicy::QkvOnly,
        }
    }

    fn random_activation<F: Float>(
        rng: &mut impl Rng,
        positions: usize,
        hidden: usize,
    ) -> Activation<F> {
        let mut a = Activation::zeros(positions, hidden);
        for v in a.values.iter_mut() {
            *v = F::from(rng.gen_range(-1.0..1.0)).unwrap();
        }
        a
    }

    #[test]
    fn rope_at_position_zero_is_identity() {
        let c = reference_3b_config();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let original: Vec<f64> = (0..c.head_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut rotated = original.clone();
        partial_rope(&mut rotated, 0, &c);
        assert_eq!(rotated, original);
    }

    #[test]
    fn rope_leaves_unrotated_dims_untouched() {
        let c = reference_3b_config();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let original: Vec<f64> = (0..c.head_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut rotated = original.clone();
        partial_rope(&mut rotated, 1234, &c);
        assert_eq!(&rotated[20..], &original[20..]);
        assert_ne!(&rotated[..20], &original[..20]);
    }

    #[test]
    fn rope_dot_products_are_shift_invariant() {
        // score(q@p1, k@p2) == score(q@p1+s, k@p2+s), 1e-6 relative.
        let c = reference_3b_config();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..50 {
            let q0: Vec<f64> = (0..c.head_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k0: Vec<f64> = (0..c.head_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p1 = rng.gen_range(0..500u64);
            let p2 = rng.gen_range(0..500u64);
            let shift = rng.gen_range(0..500u64);
            let score = |pq: u64, pk: u64| {
                let (mut q, mut k) = (q0.clone(), k0.clone());
                partial_rope(&mut q, pq, &c);
                partial_rope(&mut k, pk, &c);
                q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>()
            };
            let a = score(p1, p2);
            let b = score(p1 + shift, p2 + shift);
            assert!(
                (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0),
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn layer_norm_is_standardized_before_affine() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let identity = NormParams {
            weight: vec![1.0; 64],
            bias: vec![0.0; 64],
        };
        let mut out = vec![0.0; 64];
        layer_norm(&x, &identity, &mut out);
        let mean: f64 = out.iter().sum::<f64>() / 64.0;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn zero_input_zero_weights_gives_zero_output() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let c = tiny_config(&mut rng);
        let x = Activation::<f64>::zeros(4, c.hidden as usize);
        let w = BlockWeights::zeros(&c);
        let out = block_forward(&x, &w, &c).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causality_perturbation_only_affects_later_positions() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let c = tiny_config(&mut rng);
            let positions = rng.gen_range(2..=8usize);
            let w = BlockWeights::<f64>::random(&c, &mut rng);
            let x = random_activation::<f64>(&mut rng, positions, c.hidden as usize);
            let base = block_forward(&x, &w, &c).unwrap();
            let j = rng.gen_range(0..positions);
            let mut perturbed = x.clone();
            perturbed.values[j * c.hidden as usize] += 0.25;
            let out = block_forward(&perturbed, &w, &c).unwrap();
            for p in 0..positions {
                let changed = base
                    .row(p)
                    .iter()
                    .zip(out.row(p))
                    .any(|(a, b)| (a - b).abs() > 1e-9);
                if p < j {
                    assert!(!changed, "position {p} changed by perturbation at {j}");
                }
                if p == j {
                    assert!(changed, "perturbed position {j} unchanged");
                }
            }
        }
    }

    #[test]
    fn bias_inventory_is_qkv_and_norms_only() {
        let inventory = BlockWeights::<f64>::bias_inventory();
        assert!(inventory.contains(&"q_bias"));
        assert!(inventory.contains(&"k_bias"));
        assert!(inventory.contains(&"v_bias"));
        assert!(!inventory.iter().any(|n| n.contains("ffn") || n.contains("gate")
            || n.contains("up") || n.contains("down") || n.contains("out")));
    }

    #[test]
    fn shape_mismatch_and_non_finite_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let c = tiny_config(&mut rng);
        let w = BlockWeights::<f64>::zeros(&c);
        let bad = Activation::<f64>::zeros(2, c.hidden as usize + 1);
        assert!(block_forward(&bad, &w, &c).is_err());
        let mut nan = Activation::<f64>::zeros(2, c.hidden as usize);
        nan.values[0] = f64::NAN;
        assert!(matches!(block_forward(&nan, &w, &c), Err(KernelError::NonFinite)));
    }
}
