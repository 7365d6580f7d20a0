//! Run configuration: an INI-style file merged with command-line flags.
//!
//! The file holds `key = value` lines under `[net]`, `[train]`,
//! `[augment]`, and `[paths]` sections, with `#` comments and blank lines
//! ignored. Unknown keys, malformed lines, and out-of-range values are
//! hard errors carrying the 1-based line number. Flags always override
//! file values, and every key's default appears in the subcommand help.

use std::fs;
use std::path::{Path, PathBuf};

use vmseg_core::datapipe::augment::AugmentConfig;
use vmseg_core::trainer::{Optimizer, TrainConfig};
use vmseg_core::{NetConfig, SkipMode, Variant};

/// Everything a subcommand may need: network shape, training schedule,
/// augmentation policy, and file locations.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub resize_height: Option<usize>,
    pub resize_width: Option<usize>,
    momentum: f64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    optimizer_kind: OptimizerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OptimizerKind {
    Sgd,
    Adam,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            net: NetConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            manifest: None,
            checkpoint: None,
            out_dir: PathBuf::from("."),
            resize_height: None,
            resize_width: None,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            optimizer_kind: OptimizerKind::Sgd,
        }
    }
}

impl RunConfig {
    /// Combined dataset resize target, if configured.
    pub fn resize(&self) -> Result<Option<(usize, usize)>, String> {
        match (self.resize_height, self.resize_width) {
            (None, None) => Ok(None),
            (Some(h), Some(w)) => Ok(Some((h, w))),
            (Some(_), None) => Err("resize_height is set but resize_width is not".into()),
            (None, Some(_)) => Err("resize_width is set but resize_height is not".into()),
        }
    }

    /// Resolved checkpoint path: the configured one, or `model.ckpt` under
    /// the output directory.
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    fn rebuild_optimizer(&mut self) {
        self.train.optimizer = match self.optimizer_kind {
            OptimizerKind::Sgd => Optimizer::Sgd { momentum: self.momentum },
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
        };
    }
}

fn fail(line: usize, msg: impl AsRef<str>) -> String {
    format!("config line {}: {}", line, msg.as_ref())
}

fn parse_u64(line: usize, key: &str, value: &str) -> Result<u64, String> {
    value
        .parse()
        .map_err(|_| fail(line, format!("{key} expects a non-negative integer, got `{value}`")))
}

fn parse_usize(line: usize, key: &str, value: &str) -> Result<usize, String> {
    value
        .parse()
        .map_err(|_| fail(line, format!("{key} expects a non-negative integer, got `{value}`")))
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64, String> {
    let v: f64 = value
        .parse()
        .map_err(|_| fail(line, format!("{key} expects a number, got `{value}`")))?;
    if !v.is_finite() {
        return Err(fail(line, format!("{key} must be finite, got `{value}`")));
    }
    Ok(v)
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(fail(line, format!("{key} expects `true` or `false`, got `{value}`"))),
    }
}

fn parse_positive(line: usize, key: &str, value: &str) -> Result<usize, String> {
    let v = parse_usize(line, key, value)?;
    if v == 0 {
        return Err(fail(line, format!("{key} must be at least 1")));
    }
    Ok(v)
}

fn parse_unit_open(line: usize, key: &str, value: &str) -> Result<f64, String> {
    let v = parse_f64(line, key, value)?;
    if !(v > 0.0 && v < 1.0) {
        return Err(fail(line, format!("{key} must lie strictly between 0 and 1, got {value}")));
    }
    Ok(v)
}

/// Parse a configuration file into a [`RunConfig`] over the defaults.
pub fn parse_config(path: &Path) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {}", path.display(), e))?;
    let mut cfg = RunConfig::default();
    let mut section: Option<&str> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| fail(line_no, "unterminated section header"))?
                .trim();
            section = match name {
                "net" => Some("net"),
                "train" => Some("train"),
                "augment" => Some("augment"),
                "paths" => Some("paths"),
                _ => {
                    return Err(fail(
                        line_no,
                        format!("unknown section `[{name}]` (expected net, train, augment, paths)"),
                    ))
                }
            };
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(fail(line_no, format!("expected `key = value`, got `{line}`")));
        };
        let key = key.trim();
        let value = value.trim();
        let Some(section) = section else {
            return Err(fail(line_no, format!("key `{key}` appears before any section header")));
        };
        apply_key(&mut cfg, section, key, value, line_no)?;
    }
    cfg.rebuild_optimizer();
    Ok(cfg)
}

fn apply_key(
    cfg: &mut RunConfig,
    section: &str,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), String> {
    match (section, key) {
        ("net", "variant") => {
            cfg.net.variant = Variant::parse(value).map_err(|e| fail(line, e.to_string()))?;
        }
        ("net", "depth") => cfg.net.depth = parse_positive(line, key, value)?,
        ("net", "base_channels") => cfg.net.base_channels = parse_positive(line, key, value)?,
        ("net", "in_channels") => cfg.net.in_channels = parse_positive(line, key, value)?,
        ("net", "reduction") => cfg.net.reduction = parse_positive(line, key, value)?,
        ("net", "spatial_kernel") => {
            let v = parse_positive(line, key, value)?;
            if v % 2 == 0 {
                return Err(fail(line, format!("{key} must be odd, got {v}")));
            }
            cfg.net.spatial_kernel = v;
        }
        ("net", "skip_mode") => {
            cfg.net.skip_mode = SkipMode::parse(value).map_err(|e| fail(line, e.to_string()))?;
        }
        ("net", "init_seed") => cfg.net.init_seed = parse_u64(line, key, value)?,

        ("train", "epochs") => cfg.train.epochs = parse_usize(line, key, value)?,
        ("train", "batch_size") => cfg.train.batch_size = parse_positive(line, key, value)?,
        ("train", "learning_rate") => {
            let v = parse_f64(line, key, value)?;
            if v <= 0.0 {
                return Err(fail(line, format!("{key} must be positive, got {value}")));
            }
            cfg.train.learning_rate = v;
        }
        ("train", "lambda_bce") => {
            let v = parse_f64(line, key, value)?;
            if v < 0.0 {
                return Err(fail(line, format!("{key} must be non-negative, got {value}")));
            }
            cfg.train.lambda_bce = v;
        }
        ("train", "lambda_dice") => {
            let v = parse_f64(line, key, value)?;
            if v < 0.0 {
                return Err(fail(line, format!("{key} must be non-negative, got {value}")));
            }
            cfg.train.lambda_dice = v;
        }
        ("train", "optimizer") => {
            cfg.optimizer_kind = match value {
                "sgd" => OptimizerKind::Sgd,
                "adam" => OptimizerKind::Adam,
                _ => {
                    return Err(fail(line, format!("{key} expects `sgd` or `adam`, got `{value}`")))
                }
            };
        }
        ("train", "momentum") => {
            let v = parse_f64(line, key, value)?;
            if !(0.0..1.0).contains(&v) {
                return Err(fail(line, format!("{key} must lie in [0, 1), got {value}")));
            }
            cfg.momentum = v;
        }
        ("train", "adam_beta1") => cfg.adam_beta1 = parse_unit_open(line, key, value)?,
        ("train", "adam_beta2") => cfg.adam_beta2 = parse_unit_open(line, key, value)?,
        ("train", "adam_eps") => {
            let v = parse_f64(line, key, value)?;
            if v <= 0.0 {
                return Err(fail(line, format!("{key} must be positive, got {value}")));
            }
            cfg.adam_eps = v;
        }
        ("train", "step_interval") => cfg.train.step_interval = parse_usize(line, key, value)?,
        ("train", "step_factor") => cfg.train.step_factor = parse_unit_open(line, key, value)?,
        ("train", "plateau_patience") => {
            cfg.train.plateau_patience = parse_usize(line, key, value)?;
        }
        ("train", "plateau_factor") => {
            cfg.train.plateau_factor = parse_unit_open(line, key, value)?;
        }
        ("train", "min_lr") => {
            let v = parse_f64(line, key, value)?;
            if v < 0.0 {
                return Err(fail(line, format!("{key} must be non-negative, got {value}")));
            }
            cfg.train.min_lr = v;
        }
        ("train", "shuffle_seed") => cfg.train.shuffle_seed = parse_u64(line, key, value)?,
        ("train", "threshold") => cfg.train.threshold = parse_unit_open(line, key, value)?,
        ("train", "stop_at_train_iou") => {
            cfg.train.stop_at_train_iou = if value == "none" {
                None
            } else {
                let v = parse_f64(line, key, value)?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(fail(
                        line,
                        format!("{key} must lie in (0, 1] or be `none`, got {value}"),
                    ));
                }
                Some(v)
            };
        }
        ("train", "resize_height") => {
            cfg.resize_height =
                if value == "none" { None } else { Some(parse_positive(line, key, value)?) };
        }
        ("train", "resize_width") => {
            cfg.resize_width =
                if value == "none" { None } else { Some(parse_positive(line, key, value)?) };
        }

        ("augment", "enabled") => cfg.augment.enabled = parse_bool(line, key, value)?,
        ("augment", "rotate") => cfg.augment.rotate = parse_bool(line, key, value)?,
        ("augment", "rotation_min") => cfg.augment.rotation_min = parse_f64(line, key, value)?,
        ("augment", "rotation_max") => cfg.augment.rotation_max = parse_f64(line, key, value)?,
        ("augment", "scale") => cfg.augment.scale = parse_bool(line, key, value)?,
        ("augment", "scale_min") => cfg.augment.scale_min = parse_f64(line, key, value)?,
        ("augment", "scale_max") => cfg.augment.scale_max = parse_f64(line, key, value)?,
        ("augment", "elastic") => cfg.augment.elastic = parse_bool(line, key, value)?,
        ("augment", "elastic_alpha") => cfg.augment.elastic_alpha = parse_f64(line, key, value)?,
        ("augment", "elastic_sigma") => cfg.augment.elastic_sigma = parse_f64(line, key, value)?,
        ("augment", "smooth") => cfg.augment.smooth = parse_bool(line, key, value)?,
        ("augment", "smooth_sigma") => cfg.augment.smooth_sigma = parse_f64(line, key, value)?,
        ("augment", "smooth_radius") => cfg.augment.smooth_radius = parse_usize(line, key, value)?,
        ("augment", "hflip") => cfg.augment.hflip = parse_bool(line, key, value)?,
        ("augment", "vflip") => cfg.augment.vflip = parse_bool(line, key, value)?,
        ("augment", "seed") => cfg.augment.seed = parse_u64(line, key, value)?,

        ("paths", "manifest") => cfg.manifest = Some(PathBuf::from(value)),
        ("paths", "checkpoint") => cfg.checkpoint = Some(PathBuf::from(value)),
        ("paths", "out_dir") => cfg.out_dir = PathBuf::from(value),

        _ => return Err(fail(line, format!("unknown key `{key}` in [{section}]"))),
    }
    Ok(())
}

/// Flag values mirrored over every configuration key; `None` leaves the
/// file (or default) value in place. Help strings carry each key's home
/// section and default so `--help` documents the whole configuration
/// surface.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// [net] variant = baseline; network flavor: baseline, se, cbam
    #[arg(long, value_name = "NAME")]
    pub variant: Option<String>,
    /// [net] depth = 2; encoder stages before the bottleneck
    #[arg(long, value_name = "N")]
    pub depth: Option<usize>,
    /// [net] base_channels = 8; channels of the first encoder stage
    #[arg(long, value_name = "N")]
    pub base_channels: Option<usize>,
    /// [net] in_channels = 1; channels of the input image
    #[arg(long, value_name = "N")]
    pub in_channels: Option<usize>,
    /// [net] reduction = 16; attention bottleneck ratio (clamped to C)
    #[arg(long, value_name = "N")]
    pub reduction: Option<usize>,
    /// [net] spatial_kernel = 7; odd kernel extent of spatial attention
    #[arg(long, value_name = "N")]
    pub spatial_kernel: Option<usize>,
    /// [net] skip_mode = concat; skip junction: concat or add
    #[arg(long, value_name = "NAME")]
    pub skip_mode: Option<String>,
    /// [net] init_seed = 0; weight initialization seed
    #[arg(long, value_name = "SEED")]
    pub init_seed: Option<u64>,

    /// [train] epochs = 50; passes over the training set
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// [train] batch_size = 4; samples per gradient step
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// [train] learning_rate = 0.1; initial step size
    #[arg(long, value_name = "X")]
    pub learning_rate: Option<f64>,
    /// [train] lambda_bce = 1; cross-entropy weight in the loss
    #[arg(long, value_name = "X")]
    pub lambda_bce: Option<f64>,
    /// [train] lambda_dice = 1; Dice weight in the loss
    #[arg(long, value_name = "X")]
    pub lambda_dice: Option<f64>,
    /// [train] optimizer = sgd; parameter update rule: sgd or adam
    #[arg(long, value_name = "NAME")]
    pub optimizer: Option<String>,
    /// [train] momentum = 0.9; SGD velocity decay
    #[arg(long, value_name = "X")]
    pub momentum: Option<f64>,
    /// [train] adam_beta1 = 0.9; Adam first-moment decay
    #[arg(long, value_name = "X")]
    pub adam_beta1: Option<f64>,
    /// [train] adam_beta2 = 0.999; Adam second-moment decay
    #[arg(long, value_name = "X")]
    pub adam_beta2: Option<f64>,
    /// [train] adam_eps = 1e-8; Adam denominator floor
    #[arg(long, value_name = "X")]
    pub adam_eps: Option<f64>,
    /// [train] step_interval = 20; epochs between stepwise decays (0 off)
    #[arg(long, value_name = "N")]
    pub step_interval: Option<usize>,
    /// [train] step_factor = 0.5; stepwise decay multiplier
    #[arg(long, value_name = "X")]
    pub step_factor: Option<f64>,
    /// [train] plateau_patience = 5; stale epochs before plateau decay
    #[arg(long, value_name = "N")]
    pub plateau_patience: Option<usize>,
    /// [train] plateau_factor = 0.1; plateau decay multiplier
    #[arg(long, value_name = "X")]
    pub plateau_factor: Option<f64>,
    /// [train] min_lr = 1e-6; learning-rate floor
    #[arg(long, value_name = "X")]
    pub min_lr: Option<f64>,
    /// [train] shuffle_seed = 0; batch shuffling seed
    #[arg(long, value_name = "SEED")]
    pub shuffle_seed: Option<u64>,
    /// [train] threshold = 0.5; mask binarization cutoff
    #[arg(long, value_name = "X")]
    pub threshold: Option<f64>,
    /// [train] stop_at_train_iou = none; stop once training IoU reaches X
    #[arg(long, value_name = "X")]
    pub stop_at_train_iou: Option<f64>,
    /// [train] resize_height = none; resample dataset rows to this height
    #[arg(long, value_name = "N")]
    pub resize_height: Option<usize>,
    /// [train] resize_width = none; resample dataset rows to this width
    #[arg(long, value_name = "N")]
    pub resize_width: Option<usize>,

    /// [augment] enabled = false; augment training samples
    #[arg(long, value_name = "BOOL")]
    pub aug_enabled: Option<bool>,
    /// [augment] rotate = true; random rotation on
    #[arg(long, value_name = "BOOL")]
    pub aug_rotate: Option<bool>,
    /// [augment] rotation_min = -15; rotation lower bound, degrees
    #[arg(long, value_name = "X")]
    pub aug_rotation_min: Option<f64>,
    /// [augment] rotation_max = 15; rotation upper bound, degrees
    #[arg(long, value_name = "X")]
    pub aug_rotation_max: Option<f64>,
    /// [augment] scale = true; random zoom on
    #[arg(long, value_name = "BOOL")]
    pub aug_scale: Option<bool>,
    /// [augment] scale_min = 0.9; zoom lower bound
    #[arg(long, value_name = "X")]
    pub aug_scale_min: Option<f64>,
    /// [augment] scale_max = 1.1; zoom upper bound
    #[arg(long, value_name = "X")]
    pub aug_scale_max: Option<f64>,
    /// [augment] elastic = false; elastic deformation on
    #[arg(long, value_name = "BOOL")]
    pub aug_elastic: Option<bool>,
    /// [augment] elastic_alpha = 8; displacement magnitude, pixels
    #[arg(long, value_name = "X")]
    pub aug_elastic_alpha: Option<f64>,
    /// [augment] elastic_sigma = 4; displacement smoothing sigma
    #[arg(long, value_name = "X")]
    pub aug_elastic_sigma: Option<f64>,
    /// [augment] smooth = false; image smoothing on
    #[arg(long, value_name = "BOOL")]
    pub aug_smooth: Option<bool>,
    /// [augment] smooth_sigma = 1; smoothing kernel sigma
    #[arg(long, value_name = "X")]
    pub aug_smooth_sigma: Option<f64>,
    /// [augment] smooth_radius = 2; smoothing kernel radius
    #[arg(long, value_name = "N")]
    pub aug_smooth_radius: Option<usize>,
    /// [augment] hflip = true; random horizontal flip on
    #[arg(long, value_name = "BOOL")]
    pub aug_hflip: Option<bool>,
    /// [augment] vflip = false; random vertical flip on
    #[arg(long, value_name = "BOOL")]
    pub aug_vflip: Option<bool>,
    /// [augment] seed = 0; augmentation stream seed
    #[arg(long, value_name = "SEED")]
    pub aug_seed: Option<u64>,

    /// [paths] manifest; dataset manifest CSV
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// [paths] checkpoint = <out_dir>/model.ckpt; parameter file
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// [paths] out_dir = .; directory for produced artifacts
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

macro_rules! override_field {
    ($cfg:expr, $src:expr) => {
        if let Some(v) = $src.clone() {
            $cfg = v;
        }
    };
}

/// Apply flag overrides on top of a parsed configuration.
pub fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) -> Result<(), String> {
    if let Some(v) = &o.variant {
        cfg.net.variant = Variant::parse(v).map_err(|e| format!("--variant: {e}"))?;
    }
    override_field!(cfg.net.depth, o.depth);
    override_field!(cfg.net.base_channels, o.base_channels);
    override_field!(cfg.net.in_channels, o.in_channels);
    override_field!(cfg.net.reduction, o.reduction);
    override_field!(cfg.net.spatial_kernel, o.spatial_kernel);
    if let Some(v) = &o.skip_mode {
        cfg.net.skip_mode = SkipMode::parse(v).map_err(|e| format!("--skip-mode: {e}"))?;
    }
    override_field!(cfg.net.init_seed, o.init_seed);

    override_field!(cfg.train.epochs, o.epochs);
    override_field!(cfg.train.batch_size, o.batch_size);
    override_field!(cfg.train.learning_rate, o.learning_rate);
    override_field!(cfg.train.lambda_bce, o.lambda_bce);
    override_field!(cfg.train.lambda_dice, o.lambda_dice);
    if let Some(v) = &o.optimizer {
        cfg.optimizer_kind = match v.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::Adam,
            _ => return Err(format!("--optimizer expects `sgd` or `adam`, got `{v}`")),
        };
    }
    override_field!(cfg.momentum, o.momentum);
    override_field!(cfg.adam_beta1, o.adam_beta1);
    override_field!(cfg.adam_beta2, o.adam_beta2);
    override_field!(cfg.adam_eps, o.adam_eps);
    override_field!(cfg.train.step_interval, o.step_interval);
    override_field!(cfg.train.step_factor, o.step_factor);
    override_field!(cfg.train.plateau_patience, o.plateau_patience);
    override_field!(cfg.train.plateau_factor, o.plateau_factor);
    override_field!(cfg.train.min_lr, o.min_lr);
    override_field!(cfg.train.shuffle_seed, o.shuffle_seed);
    override_field!(cfg.train.threshold, o.threshold);
    if let Some(v) = o.stop_at_train_iou {
        cfg.train.stop_at_train_iou = Some(v);
    }
    if let Some(v) = o.resize_height {
        cfg.resize_height = Some(v);
    }
    if let Some(v) = o.resize_width {
        cfg.resize_width = Some(v);
    }

    override_field!(cfg.augment.enabled, o.aug_enabled);
    override_field!(cfg.augment.rotate, o.aug_rotate);
    override_field!(cfg.augment.rotation_min, o.aug_rotation_min);
    override_field!(cfg.augment.rotation_max, o.aug_rotation_max);
    override_field!(cfg.augment.scale, o.aug_scale);
    override_field!(cfg.augment.scale_min, o.aug_scale_min);
    override_field!(cfg.augment.scale_max, o.aug_scale_max);
    override_field!(cfg.augment.elastic, o.aug_elastic);
    override_field!(cfg.augment.elastic_alpha, o.aug_elastic_alpha);
    override_field!(cfg.augment.elastic_sigma, o.aug_elastic_sigma);
    override_field!(cfg.augment.smooth, o.aug_smooth);
    override_field!(cfg.augment.smooth_sigma, o.aug_smooth_sigma);
    override_field!(cfg.augment.smooth_radius, o.aug_smooth_radius);
    override_field!(cfg.augment.hflip, o.aug_hflip);
    override_field!(cfg.augment.vflip, o.aug_vflip);
    override_field!(cfg.augment.seed, o.aug_seed);

    if let Some(v) = &o.manifest {
        cfg.manifest = Some(v.clone());
    }
    if let Some(v) = &o.checkpoint {
        cfg.checkpoint = Some(v.clone());
    }
    if let Some(v) = &o.out_dir {
        cfg.out_dir = v.clone();
    }

    cfg.rebuild_optimizer();
    Ok(())
}

/// Load the config file and fold the flags over it.
pub fn load_run_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, String> {
    let mut cfg = parse_config(path)?;
    apply_overrides(&mut cfg, overrides)?;
    Ok(cfg)
}
