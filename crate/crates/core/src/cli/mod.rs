//! Command-line interface: encode, decode, eval, inspect.
//!
//! Exit codes: 0 success, 2 usage, 3 input error, 4 encode failure,
//! 5 stream corruption.

mod config;

use crate::bitstream::{CodedStream, SectionKind};
use crate::dynamic::{decode_group, encode_group, DecodeError, EncodeError, FrameGroup};
use crate::metrics::{average_metrics, bits_per_point, evaluate_frame, FrameMetrics, Psnr};
use crate::pointcloud::{
    group_transform, parse_ply, voxelize_with, write_ply, write_ply_raw, PlyError, RawCloud,
    VoxelizeError, VoxelizedCloud,
};
use clap::{Args, Parser, Subcommand};
use config::EncodeOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_INPUT: i32 = 3;
pub const EXIT_ENCODE: i32 = 4;
pub const EXIT_STREAM: i32 = 5;

#[derive(Debug)]
enum CliError {
    Input(String),
    Encode(String),
    Stream(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Encode(_) => EXIT_ENCODE,
            CliError::Stream(_) => EXIT_STREAM,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Encode(m) | CliError::Stream(m) => m,
        }
    }
}

impl From<PlyError> for CliError {
    fn from(e: PlyError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<VoxelizeError> for CliError {
    fn from(e: VoxelizeError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EncodeError> for CliError {
    fn from(e: EncodeError) -> Self {
        CliError::Encode(e.to_string())
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        CliError::Stream(e.to_string())
    }
}

impl From<crate::bitstream::StreamError> for CliError {
    fn from(e: crate::bitstream::StreamError) -> Self {
        CliError::Stream(e.to_string())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Parser)]
#[command(
    name = "voxcodec",
    about = "Point cloud codec backed by per-cloud coordinate networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress point cloud frames into a coded stream
    Encode(Box<EncodeOptions>),
    /// Reconstruct PLY frames from a coded stream
    Decode(DecodeArgs),
    /// Measure reconstruction quality and rate
    Eval(EvalArgs),
    /// Print stream header and per-section bit shares
    Inspect(InspectArgs),
}

#[derive(Args)]
struct DecodeArgs {
    /// Coded stream file
    #[arg(short, long)]
    input: PathBuf,
    /// Output PLY path (multi-frame streams write <stem>_NNNN.ply)
    #[arg(short, long)]
    output: PathBuf,
    /// Apply the inverse voxelization transform from the header
    #[arg(long)]
    devoxelize: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Original (reference) PLY file(s), one per frame
    #[arg(long, required = true, num_args = 1..)]
    original: Vec<PathBuf>,
    /// Reconstructed PLY file(s), one per frame
    #[arg(long, num_args = 1.., conflicts_with = "stream")]
    reconstructed: Vec<PathBuf>,
    /// Coded stream to decode and evaluate (also enables bpp)
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Grid resolution bits for the PSNR peak (default: the stream
    /// header's, else the smallest grid holding every coordinate)
    #[arg(short = 'n', long)]
    resolution_bits: Option<u8>,
    /// Report file (plain key-value text)
    #[arg(short, long)]
    output: PathBuf,
    /// Optional CSV with one row per frame plus the average
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Coded stream file
    input: PathBuf,
}

/// Parses arguments from the process environment and runs the command.
/// Returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode(args) => cmd_encode(*args),
        Command::Decode(args) => cmd_decode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn load_frames(paths: &[PathBuf], resolution_bits: u8) -> Result<Vec<VoxelizedCloud>, CliError> {
    let raws: Vec<RawCloud> = paths
        .iter()
        .map(|p| parse_ply(&read_file(p)?).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&RawCloud> = raws.iter().collect();
    let transform = group_transform(&refs, resolution_bits)?;
    raws.iter()
        .map(|r| voxelize_with(r, resolution_bits, &transform).map_err(CliError::from))
        .collect()
}

fn cmd_encode(args: EncodeOptions) -> Result<(), CliError> {
    let resolved = config::resolve(&args)?;
    eprintln!("{resolved}");
    let started = Instant::now();

    // load and voxelize all frames with one shared transform
    let raws: Vec<RawCloud> = resolved
        .inputs
        .iter()
        .map(|p| parse_ply(&read_file(p)?).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&RawCloud> = raws.iter().collect();
    let transform = group_transform(&refs, resolved.resolution_bits)?;
    let frames: Vec<VoxelizedCloud> = raws
        .iter()
        .map(|r| voxelize_with(r, resolved.resolution_bits, &transform).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let original_points: u64 = frames.iter().map(|f| f.len() as u64).sum();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.workers)
        .build()
        .map_err(|e| CliError::Encode(e.to_string()))?;

    // split the sequence into groups; the remainder forms a shorter group
    let mut log = String::new();
    log.push_str(&format!("{resolved}\n"));
    let mut file_bytes = Vec::new();
    for (group_index, chunk) in frames.chunks(resolved.group_size.max(1)).enumerate() {
        let group = FrameGroup::new(chunk.to_vec()).map_err(EncodeError::from)?;
        let mut settings = resolved.settings.clone();
        settings.transform = transform;
        settings.seed = mix_group_seed(resolved.settings.seed, group_index);
        eprintln!(
            "group {group_index}: {} frame(s), {} points",
            group.len(),
            group.total_points()
        );
        let outcome = pool.install(|| encode_group(&group, &settings))?;
        log_group(&mut log, group_index, &group, &outcome);
        file_bytes.extend(outcome.stream.assemble());
    }

    write_file(&resolved.output, &file_bytes)?;
    let wall = started.elapsed().as_secs_f64();
    let bpp = file_bytes.len() as f64 * 8.0 / original_points as f64;
    log.push_str(&format!(
        "total_bytes {}\ntotal_bits {}\noriginal_points {original_points}\nbpp {bpp:.6}\nwall_clock_s {wall:.3}\n",
        file_bytes.len(),
        file_bytes.len() * 8,
    ));
    let log_path = resolved.output.with_extension("log");
    write_file(&log_path, log.as_bytes())?;
    eprintln!(
        "wrote {} ({} bytes, {bpp:.4} bpp) and {}",
        resolved.output.display(),
        file_bytes.len(),
        log_path.display()
    );
    Ok(())
}

fn mix_group_seed(seed: u64, group: usize) -> u64 {
    if group == 0 {
        seed
    } else {
        crate::rng::CounterRng::derive(seed, 0x6772_6f75_7000 + group as u64).next_u64()
    }
}

fn log_group(
    log: &mut String,
    group_index: usize,
    group: &FrameGroup,
    outcome: &crate::dynamic::EncodeOutcome,
) {
    log.push_str(&format!(
        "group {group_index} frames {} mode {}\n",
        group.len(),
        outcome.stream.header.mode
    ));
    for (t, frame) in outcome.frames.iter().enumerate() {
        log.push_str(&format!(
            "group {group_index} frame {t} tau {:.6} reconstructed {} original {}\n",
            frame.threshold,
            frame.reconstruction.len(),
            group.frames()[t].len()
        ));
    }
    for (i, trace) in outcome.geom_traces.iter().enumerate() {
        for (step, loss) in trace {
            log.push_str(&format!(
                "group {group_index} geom {i} step {step} loss {loss:.6e}\n"
            ));
        }
    }
    for (i, trace) in outcome.attr_traces.iter().enumerate() {
        for (step, loss) in trace {
            log.push_str(&format!(
                "group {group_index} attr {i} step {step} loss {loss:.6e}\n"
            ));
        }
    }
    let bytes = outcome.stream.assemble().len();
    let cube = outcome.stream.section_bytes(SectionKind::CubeMap);
    let geom = outcome.stream.section_bytes(SectionKind::GeometryParams);
    let attr = outcome.stream.section_bytes(SectionKind::AttributeParams);
    let thresholds = 2 * outcome.stream.header.frame_count as usize;
    let header = bytes - cube - geom - attr;
    let share = |n: usize| 100.0 * n as f64 / bytes as f64;
    log.push_str(&format!(
        "group {group_index} bytes {bytes} cube_maps {cube} ({:.2}%) geometry {geom} ({:.2}%) attributes {attr} ({:.2}%) header {header} ({:.2}%)\n",
        share(cube),
        share(geom),
        share(attr),
        share(header)
    ));
    log.push_str(&format!(
        "group {group_index} aux_share_percent {:.3}\n",
        share(cube + thresholds)
    ));
}

fn cmd_decode(args: DecodeArgs) -> Result<(), CliError> {
    let data = read_file(&args.input)?;
    let streams = CodedStream::read_sequence(&data)?;
    let mut all_frames = Vec::new();
    for stream in &streams {
        let decoded = decode_group(stream)?;
        for frame in decoded.frames {
            all_frames.push((frame, decoded.transform));
        }
    }
    let many = all_frames.len() > 1;
    for (i, (frame, transform)) in all_frames.iter().enumerate() {
        let path = frame_path(&args.output, i, many);
        let bytes = if args.devoxelize {
            let positions = frame
                .points()
                .iter()
                .map(|p| transform.devoxelize(*p))
                .collect();
            write_ply_raw(&RawCloud {
                positions,
                colors: frame.colors().map(|c| c.to_vec()),
            })
        } else {
            write_ply(frame)
        };
        write_file(&path, &bytes)?;
        eprintln!("wrote {} ({} points)", path.display(), frame.len());
    }
    Ok(())
}

fn frame_path(base: &Path, index: usize, many: bool) -> PathBuf {
    if !many {
        return base.to_path_buf();
    }
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into());
    let ext = base
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ply".into());
    base.with_file_name(format!("{stem}_{index:04}.{ext}"))
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let original_raws: Vec<RawCloud> = args
        .original
        .iter()
        .map(|p| parse_ply(&read_file(p)?).map_err(CliError::from))
        .collect::<Result<_, _>>()?;

    // the PSNR peak is defined by the coding grid: an explicit flag wins,
    // then the stream header, then the smallest grid holding everything
    let (decoded, stream_len) = match &args.stream {
        Some(stream_path) => {
            let data = read_file(stream_path)?;
            let streams = CodedStream::read_sequence(&data)?;
            let mut frames = Vec::new();
            let mut bits = 1u8;
            for s in &streams {
                bits = bits.max(s.header.resolution_bits);
                frames.extend(decode_group(s)?.frames);
            }
            (Some((frames, bits)), Some(data.len()))
        }
        None => (None, None),
    };
    let bits = args
        .resolution_bits
        .or(decoded.as_ref().map(|(_, b)| *b))
        .unwrap_or_else(|| infer_bits(&original_raws));

    let originals: Vec<VoxelizedCloud> = {
        // originals must already be voxel-aligned or share one transform
        let refs: Vec<&RawCloud> = original_raws.iter().collect();
        let transform = group_transform(&refs, bits)?;
        original_raws
            .iter()
            .map(|r| voxelize_with(r, bits, &transform).map_err(CliError::from))
            .collect::<Result<_, _>>()?
    };

    let (reconstructed, bpp) = match decoded {
        Some((frames, _)) => {
            let total_points: usize = originals.iter().map(VoxelizedCloud::len).sum();
            let bpp = bits_per_point(stream_len.unwrap(), total_points)
                .map_err(|e| CliError::Input(e.to_string()))?;
            (frames, Some(bpp))
        }
        None => {
            if args.reconstructed.is_empty() {
                return Err(CliError::Input(
                    "eval needs --reconstructed files or --stream".into(),
                ));
            }
            (load_frames(&args.reconstructed, bits)?, None)
        }
    };

    if reconstructed.len() != originals.len() {
        return Err(CliError::Input(format!(
            "frame count mismatch: {} original vs {} reconstructed",
            originals.len(),
            reconstructed.len()
        )));
    }

    let frames: Vec<FrameMetrics> = reconstructed
        .iter()
        .zip(&originals)
        .map(|(r, o)| evaluate_frame(r, o).map_err(|e| CliError::Input(e.to_string())))
        .collect::<Result<_, _>>()?;
    let average = average_metrics(&frames);

    let mut report = String::new();
    let fmt_opt = |v: &Option<Psnr>| v.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
    for (i, f) in frames.iter().enumerate() {
        report.push_str(&format!(
            "frame{i}.d1_psnr_db {}\nframe{i}.d2_psnr_db {}\nframe{i}.y_psnr_db {}\nframe{i}.yuv_psnr_db {}\nframe{i}.d2_fallback_points {}\n",
            f.d1,
            fmt_opt(&f.d2),
            fmt_opt(&f.y),
            fmt_opt(&f.yuv),
            f.d2_fallback_points
        ));
    }
    report.push_str(&format!(
        "average.d1_psnr_db {}\naverage.d2_psnr_db {}\naverage.y_psnr_db {}\naverage.yuv_psnr_db {}\n",
        average.d1,
        fmt_opt(&average.d2),
        fmt_opt(&average.y),
        fmt_opt(&average.yuv)
    ));
    if let Some(bpp) = bpp {
        report.push_str(&format!("bpp {bpp:.6}\n"));
    }
    write_file(&args.output, report.as_bytes())?;
    eprintln!("wrote {}", args.output.display());

    if let Some(csv_path) = &args.csv {
        let mut csv = String::from("frame,d1_psnr_db,d2_psnr_db,y_psnr_db,yuv_psnr_db,bpp\n");
        for (i, f) in frames.iter().enumerate() {
            csv.push_str(&format!(
                "{i},{},{},{},{},\n",
                f.d1,
                fmt_opt(&f.d2),
                fmt_opt(&f.y),
                fmt_opt(&f.yuv)
            ));
        }
        csv.push_str(&format!(
            "average,{},{},{},{},{}\n",
            average.d1,
            fmt_opt(&average.d2),
            fmt_opt(&average.y),
            fmt_opt(&average.yuv),
            bpp.map(|b| format!("{b:.6}")).unwrap_or_default()
        ));
        write_file(csv_path, csv.as_bytes())?;
        eprintln!("wrote {}", csv_path.display());
    }
    Ok(())
}

/// Smallest grid that holds every coordinate of the given clouds.
fn infer_bits(raws: &[RawCloud]) -> u8 {
    let mut max = 1.0f64;
    for r in raws {
        for p in &r.positions {
            for &c in p {
                max = max.max(c);
            }
        }
    }
    let mut bits = 1u8;
    while ((1u64 << bits) as f64) <= max && bits < 21 {
        bits += 1;
    }
    bits
}

fn cmd_inspect(args: InspectArgs) -> Result<(), CliError> {
    let data = read_file(&args.input)?;
    let streams = CodedStream::read_sequence(&data)?;
    println!(
        "file: {} ({} bytes, {} bits, {} group stream(s))",
        args.input.display(),
        data.len(),
        data.len() * 8,
        streams.len()
    );
    for (gi, stream) in streams.iter().enumerate() {
        let h = &stream.header;
        let bytes = stream.assemble().len();
        println!("group {gi}:");
        println!(
            "  magic {:?} version {}",
            String::from_utf8_lossy(&crate::bitstream::MAGIC),
            crate::bitstream::VERSION
        );
        println!(
            "  mode {} frames {} resolution_bits {} cube_bits {} control_points {}",
            h.mode, h.frame_count, h.resolution_bits, h.cube_bits, h.control_points
        );
        println!(
            "  geometry arch: input {} levels {}/{} blocks {} widths {}/{} act {:?} layer_norm {}",
            h.geom_arch.input_dim,
            h.geom_arch.posenc_levels_spatial,
            h.geom_arch.posenc_levels_temporal,
            h.geom_arch.residual_blocks,
            h.geom_arch.inter_width,
            h.geom_arch.intra_width,
            h.geom_arch.core_activation,
            h.geom_arch.layer_norm
        );
        match &h.attr_arch {
            Some(a) => println!(
                "  attribute arch: input {} levels {}/{} blocks {} widths {}/{} act {:?} layer_norm {}",
                a.input_dim,
                a.posenc_levels_spatial,
                a.posenc_levels_temporal,
                a.residual_blocks,
                a.inter_width,
                a.intra_width,
                a.core_activation,
                a.layer_norm
            ),
            None => println!("  attribute arch: none (geometry only)"),
        }
        println!(
            "  quantization steps: geometry {} attribute {}",
            h.geom_step, h.attr_step
        );
        let taus: Vec<String> = h
            .thresholds
            .iter()
            .map(|&t| format!("{:.5}", crate::bitstream::threshold_from_fixed(t)))
            .collect();
        println!("  thresholds: {}", taus.join(" "));
        let cube = stream.section_bytes(SectionKind::CubeMap);
        let geom = stream.section_bytes(SectionKind::GeometryParams);
        let attr = stream.section_bytes(SectionKind::AttributeParams);
        let header = bytes - cube - geom - attr;
        let share = |n: usize| 100.0 * n as f64 / bytes as f64;
        println!("  sections ({} total):", stream.sections.len());
        for s in &stream.sections {
            println!(
                "    {} index {} {} bytes ({:.2}%)",
                s.kind.label(),
                s.index,
                s.payload.len(),
                share(s.payload.len())
            );
        }
        println!(
            "  totals: cube-maps {cube} ({:.2}%) geometry {geom} ({:.2}%) attributes {attr} ({:.2}%) header+directory {header} ({:.2}%)",
            share(cube),
            share(geom),
            share(attr),
            share(header)
        );
        let aux = cube + 2 * h.frame_count as usize;
        println!(
            "  aux share (cube maps + thresholds): {} bytes ({:.3}%)",
            aux,
            share(aux)
        );
    }
    Ok(())
}
