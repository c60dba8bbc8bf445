//! Encode configuration: flags take precedence over the config file, which
//! takes precedence over built-in defaults. The resolved configuration is
//! printed at startup and written to the encoder log.

use super::CliError;
use crate::attrcodec::AttrTrainConfig;
use crate::dynamic::{BezierConfig, DynamicMode, EncoderSettings};
use crate::geomcodec::GeomTrainConfig;
use crate::neuralnet::{Activation, NetworkArch};
use crate::pointcloud::VoxelTransform;
use clap::Args;
use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

#[derive(Args, Debug, Default)]
pub struct EncodeOptions {
    /// Input PLY file(s), one per frame in order
    #[arg(short, long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output stream file
    #[arg(short, long)]
    pub output: PathBuf,
    /// Plain key-value config file (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Coding mode: static | intra | residual | curve | 4d
    #[arg(long)]
    pub mode: Option<String>,
    /// Grid resolution bits (N)
    #[arg(short = 'n', long)]
    pub resolution_bits: Option<u8>,
    /// Cube partition bits (M)
    #[arg(short = 'm', long)]
    pub cube_bits: Option<u8>,
    /// L1 regularization strength (rate control; applied to both networks)
    #[arg(long)]
    pub l1_weight: Option<f64>,
    /// Occupancy-network training steps
    #[arg(long)]
    pub geom_steps: Option<u64>,
    /// Color-network training steps
    #[arg(long)]
    pub attr_steps: Option<u64>,
    /// Multiplier on both step counts (e.g. 0.25 for the quarter budget)
    #[arg(long)]
    pub steps_scale: Option<f64>,
    /// Training batch size in voxels
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Target occupied fraction among geometry training samples
    #[arg(long)]
    pub occupied_ratio: Option<f64>,
    /// Focal-loss focusing exponent
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    /// Initial learning rate
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Adam decoupled weight decay
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Quantization step for geometry parameters
    #[arg(long)]
    pub geom_step_size: Option<f64>,
    /// Quantization step for attribute parameters
    #[arg(long)]
    pub attr_step_size: Option<f64>,
    /// Residual blocks in the occupancy network
    #[arg(long)]
    pub geom_blocks: Option<usize>,
    /// Residual blocks in the color network
    #[arg(long)]
    pub attr_blocks: Option<usize>,
    /// Hidden width between residual blocks
    #[arg(long)]
    pub inter_width: Option<usize>,
    /// Hidden width inside residual blocks
    #[arg(long)]
    pub intra_width: Option<usize>,
    /// Spatial positional-encoding levels
    #[arg(long)]
    pub posenc_levels: Option<usize>,
    /// Temporal positional-encoding levels (4d mode)
    #[arg(long)]
    pub temporal_levels: Option<usize>,
    /// Sine activation frequency in the color network
    #[arg(long)]
    pub sine_frequency: Option<f64>,
    /// Disable layer normalization (ablation)
    #[arg(long)]
    pub no_layer_norm: bool,
    /// Frames per group for dynamic modes
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Bezier control points (curve mode)
    #[arg(long)]
    pub control_points: Option<usize>,
    /// Golden-section contractions for threshold tuning
    #[arg(long)]
    pub threshold_steps: Option<u32>,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Skip attribute coding even when colors are present
    #[arg(long)]
    pub geometry_only: bool,
    /// Residual mode: random initialization per frame instead of the
    /// previous frame's decoded parameters
    #[arg(long)]
    pub fresh_init: bool,
}

pub struct ResolvedEncode {
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub resolution_bits: u8,
    pub group_size: usize,
    pub workers: usize,
    pub settings: EncoderSettings,
    pub mode_name: String,
}

impl fmt::Display for ResolvedEncode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.settings;
        writeln!(f, "mode {}", self.mode_name)?;
        writeln!(
            f,
            "resolution_bits {} cube_bits {}",
            self.resolution_bits, s.cube_bits
        )?;
        writeln!(f, "seed {}", s.seed)?;
        writeln!(
            f,
            "geometry: blocks {} inter {} intra {} levels {} steps {} batch {} l1 {} step_size {}",
            s.geom_arch.residual_blocks,
            s.geom_arch.inter_width,
            s.geom_arch.intra_width,
            s.geom_arch.posenc_levels_spatial,
            s.geom.steps,
            s.geom.batch_size,
            s.geom.l1_weight,
            s.geom_step
        )?;
        writeln!(
            f,
            "attributes: blocks {} inter {} intra {} levels {} steps {} batch {} l1 {} step_size {} sine {}",
            s.attr_arch.residual_blocks,
            s.attr_arch.inter_width,
            s.attr_arch.intra_width,
            s.attr_arch.posenc_levels_spatial,
            s.attr.steps,
            s.attr.batch_size,
            s.attr.l1_weight,
            s.attr_step,
            s.attr_arch.sine_frequency
        )?;
        writeln!(
            f,
            "occupied_ratio {} focal_gamma {} learning_rate {} weight_decay {} layer_norm {}",
            s.geom.occupied_ratio,
            s.geom.focal_gamma,
            s.geom.learning_rate,
            s.geom.weight_decay,
            s.geom_arch.layer_norm
        )?;
        writeln!(
            f,
            "temporal_levels {} group_size {} threshold_steps {} workers {}",
            s.temporal_levels, self.group_size, s.threshold_steps, self.workers
        )?;
        write!(
            f,
            "geometry_only {} fresh_init {}",
            s.geometry_only, s.fresh_init
        )
    }
}

fn parse_config_file(path: &PathBuf) -> Result<HashMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Input(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(
            key.trim().replace('-', "_").to_lowercase(),
            value.trim().to_string(),
        );
    }
    Ok(map)
}

fn from_config<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::Input(format!("config key {key}: bad value '{raw}'"))),
    }
}

macro_rules! resolve_field {
    ($args:expr, $cfg:expr, $field:ident, $default:expr) => {
        match $args.$field {
            Some(v) => v,
            None => from_config(&$cfg, stringify!($field))?.unwrap_or($default),
        }
    };
}

pub fn resolve(args: &EncodeOptions) -> Result<ResolvedEncode, CliError> {
    let cfg = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => HashMap::new(),
    };

    let mode_name = match &args.mode {
        Some(m) => m.clone(),
        None => from_config::<String>(&cfg, "mode")?.unwrap_or_else(|| "static".into()),
    };
    let control_points = resolve_field!(args, cfg, control_points, 3);
    let mode = match mode_name.as_str() {
        "static" | "intra" => DynamicMode::Intra,
        "residual" => DynamicMode::Residual,
        "curve" => DynamicMode::Curve(BezierConfig { control_points }),
        "4d" | "fourd" => DynamicMode::FourD,
        other => return Err(CliError::Input(format!("unknown mode '{other}'"))),
    };

    let resolution_bits = resolve_field!(args, cfg, resolution_bits, 10);
    let cube_bits = resolve_field!(args, cfg, cube_bits, 5);
    let l1_weight = resolve_field!(args, cfg, l1_weight, 1.0);
    let steps_scale = resolve_field!(args, cfg, steps_scale, 1.0);
    if steps_scale <= 0.0 {
        return Err(CliError::Input("steps_scale must be positive".into()));
    }
    let geom_steps = resolve_field!(args, cfg, geom_steps, 1_200_000);
    let attr_steps = resolve_field!(args, cfg, attr_steps, 800_000);
    let batch_size = resolve_field!(args, cfg, batch_size, 4096);
    let occupied_ratio = resolve_field!(args, cfg, occupied_ratio, 0.5);
    let focal_gamma = resolve_field!(args, cfg, focal_gamma, 2.0);
    let learning_rate = resolve_field!(args, cfg, learning_rate, 1e-3);
    let weight_decay = resolve_field!(args, cfg, weight_decay, 1e-4);
    let geom_step_size = resolve_field!(args, cfg, geom_step_size, 1.0 / 1024.0);
    let attr_step_size = resolve_field!(args, cfg, attr_step_size, 1.0 / 4096.0);
    let geom_blocks = resolve_field!(args, cfg, geom_blocks, 2);
    let attr_blocks = resolve_field!(args, cfg, attr_blocks, 3);
    let inter_width = resolve_field!(args, cfg, inter_width, 512);
    let intra_width = resolve_field!(args, cfg, intra_width, 128);
    let posenc_levels = resolve_field!(args, cfg, posenc_levels, 12);
    let temporal_levels = resolve_field!(args, cfg, temporal_levels, 4);
    let sine_frequency = resolve_field!(args, cfg, sine_frequency, 64.0);
    let group_size = resolve_field!(args, cfg, group_size, 32);
    let threshold_steps = resolve_field!(args, cfg, threshold_steps, 30);
    let seed = resolve_field!(args, cfg, seed, 0);
    let workers = match args.workers {
        Some(w) => w,
        None => from_config(&cfg, "workers")?.unwrap_or(0),
    };
    let layer_norm = if args.no_layer_norm {
        false
    } else {
        !from_config::<bool>(&cfg, "no_layer_norm")?.unwrap_or(false)
    };
    let geometry_only =
        args.geometry_only || from_config::<bool>(&cfg, "geometry_only")?.unwrap_or(false);
    let fresh_init = args.fresh_init || from_config::<bool>(&cfg, "fresh_init")?.unwrap_or(false);

    let scale_steps = |steps: u64| ((steps as f64 * steps_scale).round() as u64).max(1);

    let geom_arch = NetworkArch {
        input_dim: 3,
        posenc_levels_spatial: posenc_levels,
        posenc_levels_temporal: 0,
        residual_blocks: geom_blocks,
        inter_width,
        intra_width,
        output_dim: 1,
        core_activation: Activation::Relu,
        sine_frequency,
        layer_norm,
    };
    let attr_arch = NetworkArch {
        residual_blocks: attr_blocks,
        output_dim: 3,
        core_activation: Activation::Sine,
        ..geom_arch.clone()
    };

    let settings = EncoderSettings {
        mode,
        cube_bits,
        seed,
        geom: GeomTrainConfig {
            l1_weight,
            steps: scale_steps(geom_steps),
            batch_size,
            occupied_ratio,
            focal_gamma,
            seed,
            learning_rate,
            lr_decay: 0.1,
            weight_decay,
        },
        attr: AttrTrainConfig {
            l1_weight,
            steps: scale_steps(attr_steps),
            batch_size,
            seed,
            learning_rate,
            lr_decay: 0.1,
            weight_decay,
        },
        geom_arch,
        attr_arch,
        temporal_levels,
        geom_step: geom_step_size,
        attr_step: attr_step_size,
        threshold_steps,
        geometry_only,
        fresh_init,
        transform: VoxelTransform::identity(),
    };

    Ok(ResolvedEncode {
        inputs: args.input.clone(),
        output: args.output.clone(),
        resolution_bits,
        group_size,
        workers,
        settings,
        mode_name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_args() -> EncodeOptions {
        EncodeOptions {
            input: vec![PathBuf::from("in.ply")],
            output: PathBuf::from("out.vxс"),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_match_documented_values() {
        let r = resolve(&base_args()).unwrap();
        assert_eq!(r.resolution_bits, 10);
        assert_eq!(r.settings.cube_bits, 5);
        assert_eq!(r.settings.geom.steps, 1_200_000);
        assert_eq!(r.settings.attr.steps, 800_000);
        assert_eq!(r.settings.geom.batch_size, 4096);
        assert_eq!(r.settings.geom.occupied_ratio, 0.5);
        assert_eq!(r.settings.geom.focal_gamma, 2.0);
        assert_eq!(r.settings.geom.learning_rate, 1e-3);
        assert_eq!(r.settings.geom.weight_decay, 1e-4);
        assert_eq!(r.settings.geom_step, 1.0 / 1024.0);
        assert_eq!(r.settings.attr_step, 1.0 / 4096.0);
        assert_eq!(r.settings.geom_arch.residual_blocks, 2);
        assert_eq!(r.settings.attr_arch.residual_blocks, 3);
        assert_eq!(r.settings.geom_arch.inter_width, 512);
        assert_eq!(r.settings.geom_arch.intra_width, 128);
        assert_eq!(r.settings.geom_arch.posenc_levels_spatial, 12);
        assert_eq!(r.settings.temporal_levels, 4);
        assert_eq!(r.settings.attr_arch.sine_frequency, 64.0);
        assert!(r.settings.geom_arch.layer_norm);
        assert_eq!(r.group_size, 32);
        assert_eq!(r.settings.threshold_steps, 30);
        assert_eq!(r.settings.seed, 0);
    }

    #[test]
    fn steps_scale_shrinks_both_budgets() {
        let args = EncodeOptions {
            steps_scale: Some(0.25),
            ..base_args()
        };
        let r = resolve(&args).unwrap();
        assert_eq!(r.settings.geom.steps, 300_000);
        assert_eq!(r.settings.attr.steps, 200_000);
    }

    #[test]
    fn flags_override_config_file_which_overrides_defaults() {
        let dir = std::env::temp_dir().join(format!("voxcfg{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("encode.cfg");
        std::fs::write(&path, "l1-weight = 20\nseed = 7\n# comment\ncube_bits = 4\n").unwrap();
        let args = EncodeOptions {
            config: Some(path),
            seed: Some(9),
            ..base_args()
        };
        let r = resolve(&args).unwrap();
        assert_eq!(r.settings.geom.l1_weight, 20.0); // from config
        assert_eq!(r.settings.cube_bits, 4); // from config
        assert_eq!(r.settings.seed, 9); // flag wins
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_mode_is_rejected() {
        let args = EncodeOptions {
            mode: Some("zigzag".into()),
            ..base_args()
        };
        assert!(resolve(&args).is_err());
    }
}
