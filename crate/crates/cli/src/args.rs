use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "deeprare",
    version,
    about = "Rarity-of-deep-features saliency maps and their evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a saliency PNG for each image.
    Saliency(SaliencyArgs),
    /// Score saliency maps against a manifest's ground truth.
    Evaluate(EvaluateArgs),
    /// Generate singleton search arrays and their manifest.
    Synth(SynthArgs),
    /// Project an evaluation report onto a curve.
    Curves(CurvesArgs),
    /// Dump per-layer activations as `.drt` tensors.
    Features(FeaturesArgs),
    /// Write the seeded reference backbone as an ONNX model.
    ExportReference(ExportArgs),
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err(format!("size must be positive, got {s:?}"));
    }
    Ok((w, h))
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// ONNX backbone; without one the seeded reference backbone is used.
    #[arg(long, env = "DEEPRARE_MODEL")]
    pub model: Option<PathBuf>,
    /// Built-in topology name (vgg16, vgg16-reference) or topology JSON file.
    /// Defaults to vgg16 with --model and vgg16-reference without.
    #[arg(long)]
    pub topology: Option<String>,
    /// Working resolution fed to the backbone.
    #[arg(long, value_name = "WxH", value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
    /// Read activations from `<DIR>/<stem>/layer_<index>.drt` instead of running a backbone.
    #[arg(long, value_name = "DIR")]
    pub features_from: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FusionArgs {
    /// Histogram bins per feature map.
    #[arg(long, default_value_t = deeprare::DEFAULT_BIN_COUNT)]
    pub bins: usize,
    /// One weight per layer group, normalized to sum 1.
    #[arg(long, value_delimiter = ',', value_name = "a,b,c,d,e")]
    pub group_weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub face_gain: f64,
    /// Do not add the face channel map.
    #[arg(long)]
    pub no_face: bool,
    /// Final blur in pixels at the fusion resolution (default 4% of its larger side).
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    /// Write every layer and group conspicuity map (.drt and PNG) under DIR.
    #[arg(long, value_name = "DIR")]
    pub dump_conspicuity: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Scanpath fixation budget.
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    /// Inhibition-of-return radius in pixels (default 7% of the image diagonal).
    #[arg(long)]
    pub ior_radius: Option<f64>,
    /// Grow target masks by this many pixels for the scanpath hit test.
    #[arg(long, default_value_t = 0)]
    pub target_dilation: usize,
    /// Seed of the AUC-Borji negative sampler.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub borji_splits: usize,
    /// Fixation density sigma as a fraction of image width, used when a
    /// stimulus has fixations but no density map.
    #[arg(long, default_value_t = 0.035)]
    pub density_sigma: f64,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write each map as a `.drt` tensor.
    #[arg(long)]
    pub drt: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub manifest: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write each saliency map as a PNG under `<out>/maps`.
    #[arg(long)]
    pub save_maps: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FeatureArg {
    Color,
    Orientation,
    Size,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub feature: FeatureArg,
    /// Target/distractor differences to generate (hue or orientation degrees, or size ratio).
    #[arg(long, value_delimiter = ',', required = true)]
    pub differences: Vec<f64>,
    /// Stimuli per difference.
    #[arg(long, default_value_t = 20)]
    pub count: u64,
    /// Seed of the first stimulus; the rest use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "RxC", value_parser = parse_size, default_value = "7x7")]
    pub grid: (usize, usize),
    #[arg(long, default_value_t = 0.5)]
    pub jitter: f64,
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveKind {
    FoundVsBudget,
    GsiVsDifference,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// `report.json` written by `evaluate`.
    pub report: PathBuf,
    #[arg(long, value_enum)]
    pub kind: CurveKind,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG plot path.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value = "features")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = deeprare::features::REFERENCE_SEED)]
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("224x224"), Ok((224, 224)));
        assert_eq!(parse_size("640X480"), Ok((640, 480)));
        assert!(parse_size("0x5").is_err());
        assert!(parse_size("224").is_err());
    }

    #[test]
    fn canonical_flags_parse() {
        let cli = Cli::try_parse_from([
            "deeprare",
            "saliency",
            "a.png",
            "--model",
            "m.onnx",
            "--topology",
            "vgg16",
            "--size",
            "320x240",
            "--bins",
            "9",
            "--group-weights",
            "1,1,1,1,1",
            "--face-gain",
            "0.5",
            "--no-face",
            "--blur-sigma",
            "3",
            "--threads",
            "2",
            "--dump-conspicuity",
            "dc",
            "--out",
            "o",
        ])
        .unwrap();
        let Command::Saliency(a) = cli.command else { panic!() };
        assert_eq!(a.model.size, Some((320, 240)));
        assert_eq!(a.fusion.group_weights, Some(vec![1.0; 5]));
        assert!(a.fusion.no_face);
        let cli = Cli::try_parse_from([
            "deeprare",
            "evaluate",
            "m.json",
            "--budget",
            "50",
            "--ior-radius",
            "12",
            "--seed",
            "4",
            "--features-from",
            "f",
        ])
        .unwrap();
        let Command::Evaluate(e) = cli.command else { panic!() };
        assert_eq!(e.metrics.budget, 50);
        assert_eq!(e.model.features_from, Some(PathBuf::from("f")));
    }
}
