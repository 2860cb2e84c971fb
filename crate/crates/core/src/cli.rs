//! Command-line surface of the `qrbsa` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    nearest_plane_upsample, read_volume, sparse_section, synth_voronoi, write_png, write_volume, Normal, OrientationVolume,
};
use crate::metrics::{evaluate_volume_with_maps, ipf_z_plane, MetricReport};
use crate::quat::SymmetrySet;
use crate::tensor::{DType, Real};
use crate::train::{super_resolve, Checkpoint, InferOptions, RunConfig, Trainer};
use crate::{io_err, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "qrbsa", version, about = "Quaternion super-resolution of sparsely sectioned EBSD volumes")]
pub struct Cli {
    /// Seed for synthesis and training (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run in 64-bit precision.
    #[arg(long, global = true)]
    pub verify: bool,
    /// Worker threads for plane-parallel work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Voronoi polycrystal.
    Synth(SynthArgs),
    /// Keep every `stride`-th z plane of a volume.
    Section(SectionArgs),
    /// Print a preset run configuration as JSON.
    Config(ConfigArgs),
    Train(TrainArgs),
    Infer(InferArgs),
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// z,y,x
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub grains: usize,
    /// Standard deviation of per-voxel orientation noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_deg: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SectionArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub stride: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value = "paper-defaults")]
    pub preset: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named configuration (paper-defaults, desk).
    #[arg(long)]
    pub preset: Option<String>,
    /// Ground-truth volume (overrides the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormalArg {
    X,
    Y,
    Both,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sparsely sectioned input volume.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub normal: NormalArg,
    /// Output QVOL; `both` writes `<stem>_xnormal` and `<stem>_ynormal`.
    #[arg(long)]
    pub out: PathBuf,
    /// Expected scale; refused if the checkpoint differs.
    #[arg(long)]
    pub scale: Option<usize>,
    /// Keep input values on the retained planes.
    #[arg(long)]
    pub copy_retained: bool,
    /// Split planes wider than this along W.
    #[arg(long)]
    pub max_tile_width: Option<usize>,
    /// Skip the IPF PNG export.
    #[arg(long)]
    pub no_png: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    NearestPlane,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "baseline")]
    pub pred: Option<PathBuf>,
    /// Score a baseline built from `--lr` instead of `--pred`.
    #[arg(long, value_enum, requires = "lr", conflicts_with = "pred")]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub lr: Option<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    /// MetricReport JSON.
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for per-plane difference PNGs (default `<report stem>_diff`).
    #[arg(long)]
    pub diff_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_png: bool,
}

/// Runs one command, writing progress lines to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(n) = cli.threads {
        // ignore the error when a pool already exists (repeated in-process calls)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = cli.seed;
    let verify = cli.verify;
    match cli.command {
        Command::Synth(a) => synth(a, seed.unwrap_or(0), out),
        Command::Section(a) => section(a, out),
        Command::Config(a) => {
            let cfg = RunConfig::preset(&a.preset)?;
            writeln!(out, "{}", cfg.to_json()).map_err(io_err("stdout"))
        }
        Command::Train(a) => train(a, seed, verify, out),
        Command::Infer(a) => infer(a, verify, out),
        Command::Eval(a) => eval(a, out),
    }
}

fn say(out: &mut dyn Write, msg: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{msg}").map_err(io_err("stdout"))
}

fn synth(a: SynthArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let dims: [usize; 3] = a
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config(format!("--dims needs z,y,x, got {:?}", a.dims)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vol = synth_voronoi(dims, a.grains, &mut rng, a.noise_deg)?;
    write_volume(&vol, &a.out)?;
    say(out, format_args!("wrote {} ({}x{}x{}, {} grains)", a.out.display(), dims[0], dims[1], dims[2], a.grains))
}

fn section(a: SectionArgs, out: &mut dyn Write) -> Result<()> {
    let vol = read_volume(&a.input)?;
    let lr = sparse_section(&vol, a.stride)?;
    write_volume(&lr, &a.out)?;
    let [z, y, x] = lr.dims();
    say(out, format_args!("wrote {} ({z}x{y}x{x})", a.out.display()))
}

fn train(a: TrainArgs, seed: Option<u64>, verify: bool, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => return Err(Error::Config("train needs --config or --preset".into())),
    };
    if let Some(d) = a.data {
        cfg.data = d;
    }
    if let Some(d) = a.checkpoint_dir {
        cfg.checkpoint_dir = d;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.verify |= verify;
    cfg.validate()?;
    let vol = read_volume(&cfg.data)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    if cfg.verify {
        fit::<f64>(cfg, &vol, resume.as_ref(), out)
    } else {
        fit::<f32>(cfg, &vol, resume.as_ref(), out)
    }
}

fn fit<T: Real>(cfg: RunConfig, vol: &OrientationVolume, resume: Option<&Checkpoint>, out: &mut dyn Write) -> Result<()> {
    let mut t = match resume {
        Some(c) => Trainer::<T>::resume(cfg, vol, c)?,
        None => Trainer::<T>::new(cfg, vol)?,
    };
    let mut echo_err = None;
    t.fit(|r| {
        if echo_err.is_none() {
            echo_err = serde_json::to_string(r).map_err(Error::from).and_then(|s| say(out, s)).err();
        }
    })?;
    if let Some(e) = echo_err {
        return Err(e);
    }
    say(out, format_args!("best validation misorientation {:.4} deg", t.best_val))
}

/// `out` with `_xnormal` / `_ynormal` inserted before the extension.
pub fn suffixed(out: &Path, normal: Normal) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_{}.{}", normal.suffix(), ext.to_string_lossy()),
        None => format!("{stem}_{}", normal.suffix()),
    };
    out.with_file_name(name)
}

/// Directory next to `path` named `<stem><tag>`.
fn sibling_dir(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{tag}"))
}

fn write_ipf_planes(vol: &OrientationVolume, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    use rayon::prelude::*;
    (0..vol.dims()[0])
        .into_par_iter()
        .try_for_each(|z| write_png(&ipf_z_plane(vol, z), dir.join(format!("plane_{z:05}.png"))))?;
    Ok(())
}

fn infer(a: InferArgs, verify: bool, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let scale = ckpt.config.scale;
    if let Some(s) = a.scale.filter(|&s| s != scale) {
        return Err(Error::ConfigMismatch {
            expected: format!("scale {s}"),
            found: format!("checkpoint scale {scale}"),
        });
    }
    let lr = read_volume(&a.input)?;
    let opts = InferOptions {
        max_tile_width: a.max_tile_width,
        copy_retained: a.copy_retained,
    };
    let normals: Vec<Normal> = match a.normal {
        NormalArg::X => vec![Normal::X],
        NormalArg::Y => vec![Normal::Y],
        NormalArg::Both => vec![Normal::X, Normal::Y],
    };
    let wide = verify || ckpt.dtype == DType::F64;
    for &n in &normals {
        let sr = if wide {
            super_resolve(&ckpt.network::<f64>()?, &lr, n, &opts)?
        } else {
            super_resolve(&ckpt.network::<f32>()?, &lr, n, &opts)?
        };
        let path = if normals.len() > 1 { suffixed(&a.out, n) } else { a.out.clone() };
        write_volume(&sr, &path)?;
        if !a.no_png {
            write_ipf_planes(&sr, &sibling_dir(&path, "_ipf"))?;
        }
        let [z, y, x] = sr.dims();
        say(out, format_args!("wrote {} ({z}x{y}x{x})", path.display()))?;
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let truth = read_volume(&a.truth)?;
    let pred = match (a.baseline, &a.pred, &a.lr) {
        (Some(Baseline::NearestPlane), _, Some(lr)) => {
            let lr = read_volume(lr)?;
            let (zt, zl) = (truth.dims()[0], lr.dims()[0]);
            if zl == 0 || zt % zl != 0 {
                return Err(Error::Config(format!("truth z {zt} is not a multiple of input z {zl}")));
            }
            nearest_plane_upsample(&lr, zt / zl)?
        }
        (None, Some(p), _) => read_volume(p)?,
        _ => return Err(Error::Config("eval needs --pred or --baseline with --lr".into())),
    };
    let (report, diffs) = evaluate_volume_with_maps(&pred, &truth, &SymmetrySet::hexagonal())?;
    write_report(&report, &a.report)?;
    if !a.no_png {
        let dir = a.diff_dir.unwrap_or_else(|| sibling_dir(&a.report, "_diff"));
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (z, img) in diffs.iter().enumerate() {
            write_png(img, dir.join(format!("plane_{z:05}.png")))?;
        }
    }
    say(
        out,
        format_args!(
            "psnr {:.3} dB, ssim {:.4}, misorientation {:.4} deg",
            report.psnr_db, report.ssim, report.mean_misorientation_deg
        ),
    )
}

fn write_report(report: &MetricReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_goes_before_extension() {
        assert_eq!(suffixed(Path::new("a/sr.qvol"), Normal::X), PathBuf::from("a/sr_xnormal.qvol"));
        assert_eq!(suffixed(Path::new("sr"), Normal::Y), PathBuf::from("sr_ynormal"));
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["qrbsa", "synth", "--dims", "4,5,6", "--grains", "3", "--out", "v.qvol", "--seed", "9"]).unwrap();
        assert_eq!(cli.seed, Some(9));
        match cli.command {
            Command::Synth(a) => assert_eq!(a.dims, vec![4, 5, 6]),
            other => panic!("{other:?}"),
        }
    }
}
