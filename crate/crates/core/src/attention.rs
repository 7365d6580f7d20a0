//! Channel and spatial attention blocks.
//!
//! Two recalibration modules that multiply a feature map by learned gates:
//!
//! * Squeeze-excitation: global average pool to a channel descriptor, a
//!   two-layer bottleneck MLP (no biases), sigmoid, and a per-channel
//!   rescale of the input map.
//! * Convolutional block attention: a channel gate first (the SE-style MLP
//!   applied to both average- and max-pooled descriptors, weights shared,
//!   summed before the sigmoid), then a spatial gate computed from the
//!   channel-refined map (per-pixel average and max across channels,
//!   stacked, convolved with an odd-sized kernel, sigmoid).
//!
//! Each block exists in two forms that execute the same kernel sequence:
//! a pure function over tensors for inference, and a tape builder for
//! training. Their outputs agree bitwise.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{self, PoolMode};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Parameter, Tensor};

/// Squeeze-excitation weights: `w1` is (C/r)×C, `w2` is C×(C/r).
pub struct SeParams<T: Scalar = f32> {
    pub w1: Parameter<T>,
    pub w2: Parameter<T>,
}

impl<T: Scalar> SeParams<T> {
    /// Hidden width of the bottleneck MLP. The reduction ratio is clamped
    /// to the channel count and must then divide it evenly.
    pub fn hidden_dim(channels: usize, reduction: usize) -> Result<usize> {
        if channels == 0 {
            return Err(Error::Config("attention: channel count must be >= 1".into()));
        }
        if reduction == 0 {
            return Err(Error::Config("attention: reduction must be >= 1".into()));
        }
        let r_eff = reduction.min(channels);
        if channels % r_eff != 0 {
            return Err(Error::Config(format!(
                "attention: reduction {} (clamped to {}) does not divide {} channels",
                reduction, r_eff, channels
            )));
        }
        Ok(channels / r_eff)
    }

    /// Randomly initialized weights: `w1` feeds a ReLU so it draws from
    /// N(0, 2/C); `w2` feeds a sigmoid so it draws from N(0, 1/hidden).
    pub fn new<R: Rng>(
        prefix: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = Self::hidden_dim(channels, reduction)?;
        Ok(SeParams {
            w1: Parameter::new(
                format!("{prefix}.w1"),
                Tensor::randn(vec![hidden, channels], 0.0, (2.0 / channels as f64).sqrt(), rng),
            ),
            w2: Parameter::new(
                format!("{prefix}.w2"),
                Tensor::randn(vec![channels, hidden], 0.0, 1.0 / (hidden as f64).sqrt(), rng),
            ),
        })
    }

    /// All-zero weights; the block then scales every channel by exactly 1/2.
    pub fn zeros(prefix: &str, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = Self::hidden_dim(channels, reduction)?;
        Ok(SeParams {
            w1: Parameter::new(format!("{prefix}.w1"), Tensor::zeros(vec![hidden, channels])),
            w2: Parameter::new(format!("{prefix}.w2"), Tensor::zeros(vec![channels, hidden])),
        })
    }
}

/// Convolutional block attention weights. The MLP (`w1`, `w2`) is shared
/// between the average and max channel descriptors; `spatial_w` is a
/// 1×2×k×k conv kernel over the stacked per-pixel statistics.
pub struct CbamParams<T: Scalar = f32> {
    pub w1: Parameter<T>,
    pub w2: Parameter<T>,
    pub spatial_w: Parameter<T>,
    pub spatial_b: Parameter<T>,
}

impl<T: Scalar> CbamParams<T> {
    fn check_kernel(spatial_kernel: usize) -> Result<()> {
        if spatial_kernel == 0 || spatial_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "attention: spatial kernel must be odd, got {}",
                spatial_kernel
            )));
        }
        Ok(())
    }

    pub fn new<R: Rng>(
        prefix: &str,
        channels: usize,
        reduction: usize,
        spatial_kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_kernel(spatial_kernel)?;
        let hidden = SeParams::<T>::hidden_dim(channels, reduction)?;
        let k2 = spatial_kernel * spatial_kernel;
        Ok(CbamParams {
            w1: Parameter::new(
                format!("{prefix}.w1"),
                Tensor::randn(vec![hidden, channels], 0.0, (2.0 / channels as f64).sqrt(), rng),
            ),
            w2: Parameter::new(
                format!("{prefix}.w2"),
                Tensor::randn(vec![channels, hidden], 0.0, 1.0 / (hidden as f64).sqrt(), rng),
            ),
            spatial_w: Parameter::new(
                format!("{prefix}.spatial.weight"),
                Tensor::randn(
                    vec![1, 2, spatial_kernel, spatial_kernel],
                    0.0,
                    1.0 / (2.0 * k2 as f64).sqrt(),
                    rng,
                ),
            ),
            spatial_b: Parameter::new(format!("{prefix}.spatial.bias"), Tensor::zeros(vec![1])),
        })
    }

    /// All-zero weights; the block then scales the map by exactly 1/4.
    pub fn zeros(prefix: &str, channels: usize, reduction: usize, spatial_kernel: usize) -> Result<Self> {
        Self::check_kernel(spatial_kernel)?;
        let hidden = SeParams::<T>::hidden_dim(channels, reduction)?;
        Ok(CbamParams {
            w1: Parameter::new(format!("{prefix}.w1"), Tensor::zeros(vec![hidden, channels])),
            w2: Parameter::new(format!("{prefix}.w2"), Tensor::zeros(vec![channels, hidden])),
            spatial_w: Parameter::new(
                format!("{prefix}.spatial.weight"),
                Tensor::zeros(vec![1, 2, spatial_kernel, spatial_kernel]),
            ),
            spatial_b: Parameter::new(format!("{prefix}.spatial.bias"), Tensor::zeros(vec![1])),
        })
    }
}

// ── Squeeze-excitation ──────────────────────────────────────────────────

/// SE block on raw weight tensors: out_c = f_c · sigmoid(W2·relu(W1·avg(f)))_c.
pub fn se_forward_raw<T: Scalar>(
    f: &Tensor<T>,
    w1: &Tensor<T>,
    w2: &Tensor<T>,
) -> Result<Tensor<T>> {
    let z = ops::global_pool(f, PoolMode::Avg)?;
    let h = ops::relu(&ops::fully_connected(&z, w1, None)?);
    let s = ops::sigmoid(&ops::fully_connected(&h, w2, None)?);
    ops::broadcast_mul(f, &s)
}

/// SE block over a parameter struct.
pub fn se_forward<T: Scalar>(f: &Tensor<T>, p: &SeParams<T>) -> Result<Tensor<T>> {
    se_forward_raw(f, &p.w1.value, &p.w2.value)
}

/// SE block recorded on a tape; `w1`/`w2` are already-registered leaves.
pub fn se_taped<T: Scalar>(
    tape: &mut Tape<T>,
    f: ValueId,
    w1: ValueId,
    w2: ValueId,
) -> Result<ValueId> {
    let z = tape.global_pool(f, PoolMode::Avg)?;
    let h0 = tape.linear(z, w1, None)?;
    let h = tape.relu(h0);
    let s0 = tape.linear(h, w2, None)?;
    let s = tape.sigmoid(s0);
    tape.broadcast_mul(f, s)
}

// ── Convolutional block attention ───────────────────────────────────────

/// Channel gate: sigmoid of the shared MLP applied to the average- and
/// max-pooled descriptors, summed. Returns a length-C vector.
pub fn channel_attention_weights<T: Scalar>(
    f: &Tensor<T>,
    w1: &Tensor<T>,
    w2: &Tensor<T>,
) -> Result<Tensor<T>> {
    let za = ops::global_pool(f, PoolMode::Avg)?;
    let zm = ops::global_pool(f, PoolMode::Max)?;
    let ea = ops::fully_connected(&ops::relu(&ops::fully_connected(&za, w1, None)?), w2, None)?;
    let em = ops::fully_connected(&ops::relu(&ops::fully_connected(&zm, w1, None)?), w2, None)?;
    Ok(ops::sigmoid(&ops::add(&ea, &em)?))
}

/// Spatial gate: per-pixel channel average and max stacked into a 2×H×W
/// map, convolved at stride 1 with same-size padding, then sigmoid.
/// Returns a 1×H×W map.
pub fn spatial_attention_map<T: Scalar>(
    f: &Tensor<T>,
    spatial_w: &Tensor<T>,
    spatial_b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let ca = ops::channel_pool(f, PoolMode::Avg)?;
    let cm = ops::channel_pool(f, PoolMode::Max)?;
    let stacked = ops::concat_channels(&ca, &cm)?;
    let pad = (spatial_w.shape()[2] - 1) / 2;
    Ok(ops::sigmoid(&ops::conv2d(&stacked, spatial_w, Some(spatial_b), 1, pad)?))
}

/// Full block on raw weight tensors: channel gate first, then the spatial
/// gate computed from the channel-refined map.
pub fn cbam_forward_raw<T: Scalar>(
    f: &Tensor<T>,
    w1: &Tensor<T>,
    w2: &Tensor<T>,
    spatial_w: &Tensor<T>,
    spatial_b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = channel_attention_weights(f, w1, w2)?;
    let refined = ops::broadcast_mul(f, &s)?;
    let m = spatial_attention_map(&refined, spatial_w, spatial_b)?;
    ops::broadcast_mul(&refined, &m)
}

/// Full block over a parameter struct.
pub fn cbam_forward<T: Scalar>(f: &Tensor<T>, p: &CbamParams<T>) -> Result<Tensor<T>> {
    cbam_forward_raw(f, &p.w1.value, &p.w2.value, &p.spatial_w.value, &p.spatial_b.value)
}

/// Full block recorded on a tape; weights are already-registered leaves.
pub fn cbam_taped<T: Scalar>(
    tape: &mut Tape<T>,
    f: ValueId,
    w1: ValueId,
    w2: ValueId,
    spatial_w: ValueId,
    spatial_b: ValueId,
) -> Result<ValueId> {
    let za = tape.global_pool(f, PoolMode::Avg)?;
    let zm = tape.global_pool(f, PoolMode::Max)?;
    let ha0 = tape.linear(za, w1, None)?;
    let ha = tape.relu(ha0);
    let ea = tape.linear(ha, w2, None)?;
    let hm0 = tape.linear(zm, w1, None)?;
    let hm = tape.relu(hm0);
    let em = tape.linear(hm, w2, None)?;
    let e = tape.add(ea, em)?;
    let s = tape.sigmoid(e);
    let refined = tape.broadcast_mul(f, s)?;

    let ca = tape.channel_pool(refined, PoolMode::Avg)?;
    let cm = tape.channel_pool(refined, PoolMode::Max)?;
    let stacked = tape.concat_channels(ca, cm)?;
    let pad = (tape.value(spatial_w).shape()[2] - 1) / 2;
    let conv = tape.conv2d(stacked, spatial_w, Some(spatial_b), 1, pad)?;
    let m = tape.sigmoid(conv);
    tape.broadcast_mul(refined, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn se_with(w1: Vec<f64>, w1_shape: Vec<usize>, w2: Vec<f64>, w2_shape: Vec<usize>) -> SeParams<f64> {
        SeParams {
            w1: Parameter::new("se.w1", Tensor::from_vec(w1_shape, w1).unwrap()),
            w2: Parameter::new("se.w2", Tensor::from_vec(w2_shape, w2).unwrap()),
        }
    }

    #[test]
    fn hidden_dim_clamps_then_requires_divisibility() {
        assert_eq!(SeParams::<f32>::hidden_dim(8, 16).unwrap(), 1);
        assert_eq!(SeParams::<f32>::hidden_dim(32, 16).unwrap(), 2);
        assert_eq!(SeParams::<f32>::hidden_dim(4, 4).unwrap(), 1);
        assert!(SeParams::<f32>::hidden_dim(6, 4).is_err());
        assert!(SeParams::<f32>::hidden_dim(8, 0).is_err());
    }

    #[test]
    fn se_constant_single_channel_matches_closed_form() {
        // f = 2 everywhere, identity MLP: gate = sigmoid(2), out = 2*sigmoid(2).
        let f = Tensor::full(vec![1, 2, 2], 2.0f64);
        let p = se_with(vec![1.0], vec![1, 1], vec![1.0], vec![1, 1]);
        let out = se_forward(&f, &p).unwrap();
        let expect = 2.0 * 0.8807970779778823;
        for &v in out.data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn se_zero_weights_halve_the_map_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f: Tensor<f32> = Tensor::rand_uniform(vec![4, 3, 3], -1.0, 1.0, &mut rng);
        let p = SeParams::<f32>::zeros("se", 4, 2).unwrap();
        let out = se_forward(&f, &p).unwrap();
        assert!(out.bits_eq(&ops::scale(&f, 0.5)));
    }

    #[test]
    fn se_gate_is_uniform_within_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f: Tensor<f64> = Tensor::rand_uniform(vec![2, 3, 3], 0.1, 1.0, &mut rng);
        let p = SeParams::<f64>::new("se", 2, 1, &mut rng).unwrap();
        let out = se_forward(&f, &p).unwrap();
        for c in 0..2 {
            let ratios: Vec<f64> = (0..9)
                .map(|i| out.data()[c * 9 + i] / f.data()[c * 9 + i])
                .collect();
            for r in &ratios {
                assert!((r - ratios[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn se_pure_and_taped_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f: Tensor<f32> = Tensor::rand_uniform(vec![8, 4, 4], -1.0, 1.0, &mut rng);
        let p = SeParams::<f32>::new("se", 8, 4, &mut rng).unwrap();
        let pure = se_forward(&f, &p).unwrap();

        let mut tape: Tape<f32> = Tape::new();
        let fi = tape.leaf(f.clone());
        let w1 = tape.leaf(p.w1.value.clone());
        let w2 = tape.leaf(p.w2.value.clone());
        let out = se_taped(&mut tape, fi, w1, w2).unwrap();
        assert!(tape.value(out).bits_eq(&pure));
    }

    #[test]
    fn channel_gate_matches_closed_form_on_constant_channels() {
        // Channels constant at 1 and 3: avg and max descriptors are both
        // [1, 3]; with identity MLP the gate is sigmoid(2*[1, 3]).
        let mut f = vec![1.0f64; 4];
        f.extend_from_slice(&[3.0; 4]);
        let f = Tensor::from_vec(vec![2, 2, 2], f).unwrap();
        let id2 = vec![1.0, 0.0, 0.0, 1.0];
        let w1 = Tensor::from_vec(vec![2, 2], id2.clone()).unwrap();
        let w2 = Tensor::from_vec(vec![2, 2], id2).unwrap();
        let s = channel_attention_weights(&f, &w1, &w2).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((s.data()[0] - sig(2.0)).abs() < 1e-12);
        assert!((s.data()[1] - sig(6.0)).abs() < 1e-12);
    }

    #[test]
    fn spatial_gate_matches_closed_form_with_unit_kernel() {
        // Two channels, constant 0 and 4: per-pixel avg 2, max 4. A 1x1
        // kernel (1.0, 0.5) with zero bias gives sigmoid(1*2 + 0.5*4).
        let mut f = vec![0.0f64; 6];
        f.extend_from_slice(&[4.0; 6]);
        let f = Tensor::from_vec(vec![2, 2, 3], f).unwrap();
        let w = Tensor::from_vec(vec![1, 2, 1, 1], vec![1.0, 0.5]).unwrap();
        let b = Tensor::zeros(vec![1]);
        let m = spatial_attention_map(&f, &w, &b).unwrap();
        assert_eq!(m.shape(), &[1, 2, 3]);
        let expect = 0.9820137900379085; // sigmoid(4)
        for &v in m.data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_gate_preserves_extent_for_default_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f: Tensor<f32> = Tensor::rand_uniform(vec![4, 9, 11], -1.0, 1.0, &mut rng);
        let p = CbamParams::<f32>::new("cbam", 4, 2, 7, &mut rng).unwrap();
        let m = spatial_attention_map(&f, &p.spatial_w.value, &p.spatial_b.value).unwrap();
        assert_eq!(m.shape(), &[1, 9, 11]);
    }

    #[test]
    fn cbam_zero_weights_quarter_the_map_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let f: Tensor<f32> = Tensor::rand_uniform(vec![2, 4, 4], -1.0, 1.0, &mut rng);
        let p = CbamParams::<f32>::zeros("cbam", 2, 1, 3).unwrap();
        let out = cbam_forward(&f, &p).unwrap();
        assert!(out.bits_eq(&ops::scale(&f, 0.25)));
    }

    #[test]
    fn cbam_pure_and_taped_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let f: Tensor<f32> = Tensor::rand_uniform(vec![8, 5, 5], -1.0, 1.0, &mut rng);
        let p = CbamParams::<f32>::new("cbam", 8, 4, 3, &mut rng).unwrap();
        let pure = cbam_forward(&f, &p).unwrap();

        let mut tape: Tape<f32> = Tape::new();
        let fi = tape.leaf(f.clone());
        let ids = [
            tape.leaf(p.w1.value.clone()),
            tape.leaf(p.w2.value.clone()),
            tape.leaf(p.spatial_w.value.clone()),
            tape.leaf(p.spatial_b.value.clone()),
        ];
        let out = cbam_taped(&mut tape, fi, ids[0], ids[1], ids[2], ids[3]).unwrap();
        assert!(tape.value(out).bits_eq(&pure));
    }

    #[test]
    fn cbam_rejects_even_spatial_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        assert!(CbamParams::<f32>::new("cbam", 4, 2, 4, &mut rng).is_err());
        assert!(CbamParams::<f32>::new("cbam", 4, 2, 0, &mut rng).is_err());
    }

    #[test]
    fn parameter_names_carry_the_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = CbamParams::<f32>::new("enc1.cbam", 4, 2, 3, &mut rng).unwrap();
        assert_eq!(p.w1.name, "enc1.cbam.w1");
        assert_eq!(p.spatial_w.name, "enc1.cbam.spatial.weight");
        assert_eq!(p.spatial_b.name, "enc1.cbam.spatial.bias");
    }
}
