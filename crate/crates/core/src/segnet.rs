//! Encoder-decoder segmentation network with optional attention blocks.
//!
//! The encoder runs `depth` stages of two 3x3 conv+ReLU layers followed by
//! a learned 2x2 stride-2 downsampling conv; channel width doubles per
//! stage. A two-conv bottleneck sits underneath. The decoder mirrors the
//! encoder with 2x2 stride-2 transposed convs, joins the matching encoder
//! stage output through a skip connection (channel concatenation by
//! default, elementwise add as an option), and refines with two more
//! conv+ReLU layers. A 1x1 conv plus sigmoid produces a per-pixel
//! foreground probability map.
//!
//! The attention variants insert a squeeze-excitation or convolutional
//! block attention module at the end of every encoder and decoder stage;
//! the attended map is both the skip source and the downsampling input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, CbamParams, SeParams};
use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tape::{Grads, Tape, ValueId};
use crate::tensor::{Parameter, Tensor};

/// Which attention module, if any, the network inserts per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Se,
    Cbam,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "se" => Ok(Variant::Se),
            "cbam" => Ok(Variant::Cbam),
            other => Err(Error::Config(format!(
                "unknown variant '{}' (expected baseline, se, or cbam)",
                other
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Se => "se",
            Variant::Cbam => "cbam",
        }
    }
}

/// How the decoder joins an upsampled map with its encoder skip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipMode {
    Concat,
    Add,
}

impl SkipMode {
    pub fn parse(s: &str) -> Result<SkipMode> {
        match s {
            "concat" => Ok(SkipMode::Concat),
            "add" => Ok(SkipMode::Add),
            other => Err(Error::Config(format!(
                "unknown skip mode '{}' (expected concat or add)",
                other
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SkipMode::Concat => "concat",
            SkipMode::Add => "add",
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone)]
pub struct NetConfig {
    pub variant: Variant,
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub reduction: usize,
    pub spatial_kernel: usize,
    pub skip_mode: SkipMode,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            variant: Variant::Baseline,
            depth: 2,
            base_channels: 8,
            in_channels: 1,
            reduction: 16,
            spatial_kernel: 7,
            skip_mode: SkipMode::Concat,
            init_seed: 0,
        }
    }
}

#[derive(Clone, Copy)]
struct ConvIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy)]
enum AttnIdx {
    None,
    Se { w1: usize, w2: usize },
    Cbam { w1: usize, w2: usize, sw: usize, sb: usize },
}

#[derive(Clone, Copy)]
struct EncIdx {
    conv1: ConvIdx,
    conv2: ConvIdx,
    attn: AttnIdx,
    down: ConvIdx,
}

#[derive(Clone, Copy)]
struct DecIdx {
    up: ConvIdx,
    conv1: ConvIdx,
    conv2: ConvIdx,
    attn: AttnIdx,
}

struct Layout {
    enc: Vec<EncIdx>,
    mid1: ConvIdx,
    mid2: ConvIdx,
    dec: Vec<DecIdx>,
    head: ConvIdx,
}

/// The network: a flat parameter list plus an index layout over it.
pub struct SegNet<T: Scalar = f32> {
    config: NetConfig,
    params: Vec<Parameter<T>>,
    layout: Layout,
}

struct Builder<T: Scalar> {
    params: Vec<Parameter<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn push_pair(&mut self, name: &str, w: Tensor<T>, c_out: usize) -> ConvIdx {
        let wi = self.params.len();
        self.params.push(Parameter::new(format!("{name}.weight"), w));
        self.params.push(Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![c_out])));
        ConvIdx { w: wi, b: wi + 1 }
    }

    /// Standard conv layer. Layers feeding a ReLU draw from N(0, 2/fan_in);
    /// the sigmoid-feeding head draws from N(0, 1/fan_in). Biases start at
    /// zero.
    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, pre_relu: bool) -> ConvIdx {
        let fan_in = (c_in * k * k) as f64;
        let gain = if pre_relu { 2.0 } else { 1.0 };
        let w = Tensor::randn(vec![c_out, c_in, k, k], 0.0, (gain / fan_in).sqrt(), &mut self.rng);
        self.push_pair(name, w, c_out)
    }

    /// Transposed conv layer; with a k=stride kernel each output pixel sees
    /// fan_in = c_in inputs, so the variance rule divides by that.
    fn tconv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> ConvIdx {
        let fan_in = ((c_in * k * k) as f64 / (stride * stride) as f64).max(1.0);
        let w = Tensor::randn(vec![c_in, c_out, k, k], 0.0, (2.0 / fan_in).sqrt(), &mut self.rng);
        self.push_pair(name, w, c_out)
    }

    fn attention(&mut self, stage: &str, channels: usize, cfg: &NetConfig) -> Result<AttnIdx> {
        match cfg.variant {
            Variant::Baseline => Ok(AttnIdx::None),
            Variant::Se => {
                let se = SeParams::new(&format!("{stage}.se"), channels, cfg.reduction, &mut self.rng)?;
                let w1 = self.params.len();
                self.params.push(se.w1);
                self.params.push(se.w2);
                Ok(AttnIdx::Se { w1, w2: w1 + 1 })
            }
            Variant::Cbam => {
                let cb = CbamParams::new(
                    &format!("{stage}.cbam"),
                    channels,
                    cfg.reduction,
                    cfg.spatial_kernel,
                    &mut self.rng,
                )?;
                let w1 = self.params.len();
                self.params.push(cb.w1);
                self.params.push(cb.w2);
                self.params.push(cb.spatial_w);
                self.params.push(cb.spatial_b);
                Ok(AttnIdx::Cbam { w1, w2: w1 + 1, sw: w1 + 2, sb: w1 + 3 })
            }
        }
    }
}

impl<T: Scalar> SegNet<T> {
    /// Construct the network with freshly initialized weights. All random
    /// draws come from one stream seeded by `config.init_seed`, consumed in
    /// a fixed layer order, so equal seeds give bitwise-equal weights.
    pub fn build(config: &NetConfig) -> Result<Self> {
        let config = config.clone();
        if config.depth == 0 {
            return Err(Error::Config("network depth must be >= 1".into()));
        }
        if config.base_channels == 0 {
            return Err(Error::Config("base channel count must be >= 1".into()));
        }
        if config.in_channels == 0 {
            return Err(Error::Config("input channel count must be >= 1".into()));
        }

        let mut b = Builder::<T> {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };
        let level = |i: usize| config.base_channels << i;
        let bottom = config.base_channels << config.depth;

        let mut enc = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let c_in = if i == 0 { config.in_channels } else { level(i - 1) };
            let c = level(i);
            let conv1 = b.conv(&format!("enc{i}.conv1"), c, c_in, 3, true);
            let conv2 = b.conv(&format!("enc{i}.conv2"), c, c, 3, true);
            let attn = b.attention(&format!("enc{i}"), c, &config)?;
            let down = b.conv(&format!("enc{i}.down"), c, c, 2, true);
            enc.push(EncIdx { conv1, conv2, attn, down });
        }

        let mid1 = b.conv("bottleneck.conv1", bottom, level(config.depth - 1), 3, true);
        let mid2 = b.conv("bottleneck.conv2", bottom, bottom, 3, true);

        let mut dec = Vec::with_capacity(config.depth);
        for i in (0..config.depth).rev() {
            let c = level(i);
            let c_above = if i + 1 == config.depth { bottom } else { level(i + 1) };
            let up = b.tconv(&format!("dec{i}.up"), c_above, c, 2, 2);
            let join_in = match config.skip_mode {
                SkipMode::Concat => 2 * c,
                SkipMode::Add => c,
            };
            let conv1 = b.conv(&format!("dec{i}.conv1"), c, join_in, 3, true);
            let conv2 = b.conv(&format!("dec{i}.conv2"), c, c, 3, true);
            let attn = b.attention(&format!("dec{i}"), c, &config)?;
            dec.push(DecIdx { up, conv1, conv2, attn });
        }
        dec.reverse();

        let head = b.conv("head", 1, config.base_channels, 1, false);

        Ok(SegNet {
            config,
            params: b.params,
            layout: Layout { enc, mid1, mid2, dec, head },
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.count()).sum()
    }

    /// Bytes occupied by the learnable scalars.
    pub fn param_bytes(&self) -> usize {
        self.param_count() * T::BYTES
    }

    /// One line per parameter tensor (name, shape, count) plus a total.
    pub fn param_summary(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            out.push_str(&format!(
                "{:<28} {:>14} {:>9}\n",
                p.name,
                format!("{:?}", p.value.shape()),
                p.count()
            ));
        }
        out.push_str(&format!("{:<28} {:>14} {:>9}\n", "total", "", self.param_count()));
        out
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (c, h, w) = x.dims3("segnet forward")?;
        if c != self.config.in_channels {
            return Err(Error::shape(
                "segnet forward",
                format!("input has {} channels, network expects {}", c, self.config.in_channels),
            ));
        }
        let m = 1usize << self.config.depth;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::shape(
                "segnet forward",
                format!("input {}x{} must be a positive multiple of {} in each extent", h, w, m),
            ));
        }
        Ok(())
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.params[i].value
    }

    fn conv_relu(&self, x: &Tensor<T>, c: ConvIdx, stride: usize, padding: usize) -> Result<Tensor<T>> {
        Ok(ops::relu(&ops::conv2d(x, self.val(c.w), Some(self.val(c.b)), stride, padding)?))
    }

    fn attend(&self, f: Tensor<T>, a: AttnIdx) -> Result<Tensor<T>> {
        match a {
            AttnIdx::None => Ok(f),
            AttnIdx::Se { w1, w2 } => attention::se_forward_raw(&f, self.val(w1), self.val(w2)),
            AttnIdx::Cbam { w1, w2, sw, sb } => {
                attention::cbam_forward_raw(&f, self.val(w1), self.val(w2), self.val(sw), self.val(sb))
            }
        }
    }

    /// Inference pass: probabilities in (0, 1), same spatial extent as the
    /// input. Executes the same kernel sequence as the taped pass.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(self.config.depth);
        let mut cur = x.clone();
        for e in &self.layout.enc {
            cur = self.conv_relu(&cur, e.conv1, 1, 1)?;
            cur = self.conv_relu(&cur, e.conv2, 1, 1)?;
            cur = self.attend(cur, e.attn)?;
            skips.push(cur.clone());
            cur = self.conv_relu(&cur, e.down, 2, 0)?;
        }
        cur = self.conv_relu(&cur, self.layout.mid1, 1, 1)?;
        cur = self.conv_relu(&cur, self.layout.mid2, 1, 1)?;
        for i in (0..self.config.depth).rev() {
            let d = &self.layout.dec[i];
            let up = ops::relu(&ops::transposed_conv2d(
                &cur,
                self.val(d.up.w),
                Some(self.val(d.up.b)),
                2,
            )?);
            let joined = match self.config.skip_mode {
                SkipMode::Concat => ops::concat_channels(&skips[i], &up)?,
                SkipMode::Add => ops::add(&skips[i], &up)?,
            };
            cur = self.conv_relu(&joined, d.conv1, 1, 1)?;
            cur = self.conv_relu(&cur, d.conv2, 1, 1)?;
            cur = self.attend(cur, d.attn)?;
        }
        let logits = ops::conv2d(&cur, self.val(self.layout.head.w), Some(self.val(self.layout.head.b)), 1, 0)?;
        Ok(ops::sigmoid(&logits))
    }

    /// Register every parameter as a tape leaf, in parameter order. The
    /// returned ids pair with `forward_taped` and `accumulate_grads`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<ValueId> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    fn conv_relu_taped(
        &self,
        tape: &mut Tape<T>,
        x: ValueId,
        c: ConvIdx,
        binds: &[ValueId],
        stride: usize,
        padding: usize,
    ) -> Result<ValueId> {
        let y = tape.conv2d(x, binds[c.w], Some(binds[c.b]), stride, padding)?;
        Ok(tape.relu(y))
    }

    fn attend_taped(
        &self,
        tape: &mut Tape<T>,
        f: ValueId,
        a: AttnIdx,
        binds: &[ValueId],
    ) -> Result<ValueId> {
        match a {
            AttnIdx::None => Ok(f),
            AttnIdx::Se { w1, w2 } => attention::se_taped(tape, f, binds[w1], binds[w2]),
            AttnIdx::Cbam { w1, w2, sw, sb } => {
                attention::cbam_taped(tape, f, binds[w1], binds[w2], binds[sw], binds[sb])
            }
        }
    }

    /// Training pass recorded on a tape. `x` is an already-registered leaf
    /// and `binds` comes from `bind` on the same tape.
    pub fn forward_taped(
        &self,
        tape: &mut Tape<T>,
        x: ValueId,
        binds: &[ValueId],
    ) -> Result<ValueId> {
        self.check_input(tape.value(x))?;
        let mut skips: Vec<ValueId> = Vec::with_capacity(self.config.depth);
        let mut cur = x;
        for e in &self.layout.enc {
            cur = self.conv_relu_taped(tape, cur, e.conv1, binds, 1, 1)?;
            cur = self.conv_relu_taped(tape, cur, e.conv2, binds, 1, 1)?;
            cur = self.attend_taped(tape, cur, e.attn, binds)?;
            skips.push(cur);
            cur = self.conv_relu_taped(tape, cur, e.down, binds, 2, 0)?;
        }
        cur = self.conv_relu_taped(tape, cur, self.layout.mid1, binds, 1, 1)?;
        cur = self.conv_relu_taped(tape, cur, self.layout.mid2, binds, 1, 1)?;
        for i in (0..self.config.depth).rev() {
            let d = &self.layout.dec[i];
            let up0 = tape.transposed_conv2d(cur, binds[d.up.w], Some(binds[d.up.b]), 2)?;
            let up = tape.relu(up0);
            let joined = match self.config.skip_mode {
                SkipMode::Concat => tape.concat_channels(skips[i], up)?,
                SkipMode::Add => tape.add(skips[i], up)?,
            };
            cur = self.conv_relu_taped(tape, joined, d.conv1, binds, 1, 1)?;
            cur = self.conv_relu_taped(tape, cur, d.conv2, binds, 1, 1)?;
            cur = self.attend_taped(tape, cur, d.attn, binds)?;
        }
        let logits = tape.conv2d(cur, binds[self.layout.head.w], Some(binds[self.layout.head.b]), 1, 0)?;
        Ok(tape.sigmoid(logits))
    }

    /// Move the gradients for the bound parameter leaves into the
    /// parameters' grad buffers (adding to whatever is there).
    pub fn accumulate_grads(&mut self, grads: &mut Grads<T>, binds: &[ValueId]) -> Result<()> {
        for (i, p) in self.params.iter_mut().enumerate() {
            if let Some(g) = grads.take(binds[i]) {
                p.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }

    /// Forward pass followed by thresholding, boundary inclusive:
    /// probability at or above `threshold` becomes 1, below it 0.
    pub fn predict_mask(&self, x: &Tensor<T>, threshold: f64) -> Result<Tensor<T>> {
        let p = self.forward(x)?;
        Ok(p.map(|v| if v.to_f64() >= threshold { T::ONE } else { T::ZERO }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn attn_extra(variant: Variant, c: usize, r: usize, ks: usize) -> usize {
        let hidden = c / r.min(c);
        match variant {
            Variant::Baseline => 0,
            Variant::Se => 2 * hidden * c,
            Variant::Cbam => 2 * hidden * c + 2 * ks * ks + 1,
        }
    }

    /// Independent closed-form parameter count.
    fn expected_count(cfg: &NetConfig) -> usize {
        let level = |i: usize| cfg.base_channels << i;
        let bottom = cfg.base_channels << cfg.depth;
        let mut n = 0;
        for i in 0..cfg.depth {
            let c_in = if i == 0 { cfg.in_channels } else { level(i - 1) };
            let c = level(i);
            n += c * c_in * 9 + c;
            n += c * c * 9 + c;
            n += attn_extra(cfg.variant, c, cfg.reduction, cfg.spatial_kernel);
            n += c * c * 4 + c;
        }
        n += bottom * level(cfg.depth - 1) * 9 + bottom;
        n += bottom * bottom * 9 + bottom;
        for i in 0..cfg.depth {
            let c = level(i);
            let c_above = if i + 1 == cfg.depth { bottom } else { level(i + 1) };
            n += c_above * c * 4 + c;
            let join_in = match cfg.skip_mode {
                SkipMode::Concat => 2 * c,
                SkipMode::Add => c,
            };
            n += c * join_in * 9 + c;
            n += c * c * 9 + c;
            n += attn_extra(cfg.variant, c, cfg.reduction, cfg.spatial_kernel);
        }
        n + cfg.base_channels + 1
    }

    fn cfg(variant: Variant) -> NetConfig {
        NetConfig { variant, ..NetConfig::default() }
    }

    #[test]
    fn parameter_counts_match_the_closed_form() {
        for variant in [Variant::Baseline, Variant::Se, Variant::Cbam] {
            for depth in [1, 2] {
                for skip_mode in [SkipMode::Concat, SkipMode::Add] {
                    let c = NetConfig {
                        variant,
                        depth,
                        base_channels: 8,
                        skip_mode,
                        ..NetConfig::default()
                    };
                    let net: SegNet<f32> = SegNet::build(&c).unwrap();
                    assert_eq!(
                        net.param_count(),
                        expected_count(&c),
                        "variant {:?} depth {} skip {:?}",
                        variant,
                        depth,
                        skip_mode
                    );
                }
            }
        }
    }

    #[test]
    fn depth_one_net_with_unit_bottleneck_mlp_has_known_size() {
        // Hand-counted: depth 1, base 8, reduction 8 puts a 16-weight SE
        // block on each of the two stages; baseline total is 6689.
        let base = NetConfig {
            depth: 1,
            reduction: 8,
            ..NetConfig::default()
        };
        let b: SegNet<f32> = SegNet::build(&base).unwrap();
        assert_eq!(b.param_count(), 6689);
        let s: SegNet<f32> = SegNet::build(&NetConfig { variant: Variant::Se, ..base }).unwrap();
        assert_eq!(s.param_count(), 6721);
    }

    #[test]
    fn forward_maps_extent_and_stays_in_unit_interval() {
        for variant in [Variant::Baseline, Variant::Se, Variant::Cbam] {
            let net: SegNet<f32> = SegNet::build(&cfg(variant)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(20);
            let x = Tensor::rand_uniform(vec![1, 32, 24], -1.0, 1.0, &mut rng);
            let y = net.forward(&x).unwrap();
            assert_eq!(y.shape(), &[1, 32, 24]);
            assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn equal_seeds_build_identical_nets_and_different_seeds_differ() {
        let a: SegNet<f32> = SegNet::build(&cfg(Variant::Cbam)).unwrap();
        let b: SegNet<f32> = SegNet::build(&cfg(Variant::Cbam)).unwrap();
        let c: SegNet<f32> =
            SegNet::build(&NetConfig { init_seed: 1, ..cfg(Variant::Cbam) }).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert!(pa.value.bits_eq(&pb.value), "{} differs across equal seeds", pa.name);
        }
        let same = a
            .params()
            .iter()
            .zip(c.params())
            .all(|(pa, pc)| pa.value.bits_eq(&pc.value));
        assert!(!same, "different seeds produced identical weights");
    }

    #[test]
    fn pure_and_taped_forward_agree_bitwise() {
        for variant in [Variant::Baseline, Variant::Se, Variant::Cbam] {
            let net: SegNet<f32> = SegNet::build(&NetConfig {
                variant,
                depth: 1,
                base_channels: 4,
                reduction: 4,
                spatial_kernel: 3,
                ..NetConfig::default()
            })
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let x = Tensor::rand_uniform(vec![1, 16, 16], -1.0, 1.0, &mut rng);
            let pure = net.forward(&x).unwrap();

            let mut tape: Tape<f32> = Tape::new();
            let binds = net.bind(&mut tape);
            let xi = tape.leaf(x.clone());
            let out = net.forward_taped(&mut tape, xi, &binds).unwrap();
            assert!(tape.value(out).bits_eq(&pure), "variant {:?}", variant);
        }
    }

    #[test]
    fn add_skip_mode_runs_and_shrinks_the_decoder() {
        let concat: SegNet<f32> = SegNet::build(&cfg(Variant::Baseline)).unwrap();
        let add: SegNet<f32> =
            SegNet::build(&NetConfig { skip_mode: SkipMode::Add, ..cfg(Variant::Baseline) })
                .unwrap();
        assert!(add.param_count() < concat.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = Tensor::rand_uniform(vec![1, 16, 16], -1.0, 1.0, &mut rng);
        assert_eq!(add.forward(&x).unwrap().shape(), &[1, 16, 16]);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let net: SegNet<f32> = SegNet::build(&cfg(Variant::Baseline)).unwrap();
        let two_ch = Tensor::zeros(vec![2, 16, 16]);
        assert!(net.forward(&two_ch).is_err());
        let odd = Tensor::zeros(vec![1, 15, 16]);
        assert!(net.forward(&odd).is_err());
        let flat = Tensor::zeros(vec![16, 16]);
        assert!(net.forward(&flat).is_err());
    }

    #[test]
    fn build_rejects_indivisible_attention_widths() {
        let bad = NetConfig {
            variant: Variant::Se,
            base_channels: 6,
            reduction: 4,
            depth: 1,
            ..NetConfig::default()
        };
        assert!(SegNet::<f32>::build(&bad).is_err());
    }

    #[test]
    fn parameter_names_are_unique_and_well_formed() {
        let net: SegNet<f32> = SegNet::build(&cfg(Variant::Cbam)).unwrap();
        let names: Vec<&str> = net.params().iter().map(|p| p.name.as_str()).collect();
        let set: HashSet<&str> = names.iter().copied().collect();
        assert_eq!(set.len(), names.len(), "duplicate parameter names");
        for expected in [
            "enc0.conv1.weight",
            "enc0.cbam.spatial.weight",
            "enc1.down.bias",
            "bottleneck.conv2.weight",
            "dec1.up.weight",
            "dec0.cbam.w2",
            "head.weight",
            "head.bias",
        ] {
            assert!(set.contains(expected), "missing parameter {}", expected);
        }
        assert!(net.param_by_name("enc0.conv1.weight").is_some());
        assert!(net.param_by_name("enc9.conv1.weight").is_none());
    }

    #[test]
    fn gradients_reach_every_parameter() {
        let net: SegNet<f64> = SegNet::build(&NetConfig {
            variant: Variant::Cbam,
            depth: 1,
            base_channels: 4,
            reduction: 2,
            spatial_kernel: 3,
            init_seed: 7,
            ..NetConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = Tensor::rand_uniform(vec![1, 8, 8], -1.0, 1.0, &mut rng);

        let mut tape: Tape<f64> = Tape::new();
        let binds = net.bind(&mut tape);
        let xi = tape.leaf(x);
        let out = net.forward_taped(&mut tape, xi, &binds).unwrap();
        let loss = tape.sum(out);
        let grads = tape.backward(loss).unwrap();
        for (i, p) in net.params().iter().enumerate() {
            let g = grads.get(binds[i]).unwrap_or_else(|| panic!("no gradient for {}", p.name));
            assert!(g.all_finite(), "non-finite gradient for {}", p.name);
        }
        let head = net.param_index("head.weight").unwrap();
        assert!(grads.get(binds[head]).unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn predict_mask_is_binary() {
        let net: SegNet<f32> = SegNet::build(&cfg(Variant::Se)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let x = Tensor::rand_uniform(vec![1, 16, 16], -1.0, 1.0, &mut rng);
        let m = net.predict_mask(&x, 0.5).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
