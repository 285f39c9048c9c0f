use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;

use deeprare::dataset::{load_manifest, synthesize, write_dataset, Feature, Stimulus, SynthSpec};
use deeprare::features::{read_feature_dump, reference_vgg16, write_feature_dump, REFERENCE_SEED};
use deeprare::fusion::SaliencyBreakdown;
use deeprare::imageops::{load_rgb, save_gray_png};
use deeprare::metrics::{evaluate, found_vs_budget_curve, gsi_vs_difference, EvalReport, MetricConfig, ScanpathConfig};
use deeprare::tensor::save_tensor;
use deeprare::{FeatureExtractor, FusionConfig, LayerActivations, NetworkTopology, RunConfig, SaliencyEngine, Tensor};

use crate::args::{
    Cli, Command, CurveKind, CurvesArgs, EvaluateArgs, ExportArgs, FeatureArg, FeaturesArgs, FusionArgs, MetricArgs,
    ModelArgs, SaliencyArgs, SynthArgs,
};
use crate::error::{classify, CliError, CliResult, Context};
use crate::svg;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Saliency(a) => cmd_saliency(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Curves(a) => cmd_curves(a),
        Command::Features(a) => cmd_features(a),
        Command::ExportReference(a) => cmd_export(a),
    }
}

/// Where activations come from.
enum Source {
    Backbone(FeatureExtractor),
    Dump(PathBuf),
}

struct Pipeline {
    source: Source,
    engine: SaliencyEngine,
    working_size: (usize, usize),
}

impl Pipeline {
    fn activations(&self, stem: &str, image: &Tensor) -> Result<Vec<LayerActivations>, deeprare::Error> {
        match &self.source {
            Source::Backbone(x) => Ok(x.extract(image, self.working_size)?),
            Source::Dump(dir) => Ok(read_feature_dump(dir, stem, &self.engine.topology)?),
        }
    }

    fn saliency(&self, stem: &str, image: &Tensor) -> Result<SaliencyBreakdown, deeprare::Error> {
        let acts = self.activations(stem, image)?;
        let (_, h, w) = image.dims3()?;
        Ok(self.engine.compute(&acts, (w, h))?)
    }
}

fn thread_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .internal("cannot start worker threads")
}

fn resolve_topology(m: &ModelArgs) -> CliResult<NetworkTopology> {
    let name = m
        .topology
        .clone()
        .unwrap_or_else(|| if m.model.is_some() { "vgg16" } else { "vgg16-reference" }.to_string());
    NetworkTopology::resolve(&name).map_err(|e| classify(e.into()))
}

fn fusion_config(f: &FusionArgs, topology: &NetworkTopology) -> CliResult<FusionConfig> {
    let groups = topology.groups().len();
    let group_weights = match &f.group_weights {
        Some(w) if w.len() != groups => {
            return Err(CliError::usage(format!(
                "--group-weights needs {groups} values for topology {}, got {}",
                topology.name,
                w.len()
            )))
        }
        Some(w) => w.clone(),
        None if groups == 5 => FusionConfig::default().group_weights,
        None => (1..=groups).map(|g| g as f64).collect(),
    };
    let cfg = FusionConfig {
        group_weights,
        face_gain: f.face_gain,
        face_enabled: !f.no_face,
        common_size: None,
        blur_sigma: f.blur_sigma,
    };
    cfg.validate().map_err(CliError::usage)?;
    if f.bins == 0 {
        return Err(CliError::usage("--bins must be at least 1"));
    }
    Ok(cfg)
}

fn build_pipeline(m: &ModelArgs, f: &FusionArgs) -> CliResult<(Pipeline, RunConfig)> {
    let topology = resolve_topology(m)?;
    let fusion = fusion_config(f, &topology)?;
    let working_size = m.size.unwrap_or(topology.input_size);
    let source = match (&m.features_from, &m.model) {
        (Some(dir), _) => {
            if !dir.is_dir() {
                return Err(CliError::Data(anyhow::anyhow!(
                    "feature directory {} does not exist",
                    dir.display()
                )));
            }
            Source::Dump(dir.clone())
        }
        (None, Some(path)) => {
            info!("loading model {}", path.display());
            Source::Backbone(FeatureExtractor::load(path, &topology).map_err(|e| classify(e.into()))?)
        }
        (None, None) => {
            warn!("no --model or DEEPRARE_MODEL given; using the seeded reference backbone (no pretrained weights)");
            if topology.name != "vgg16-reference" {
                warn!("topology {} may not match the reference backbone", topology.name);
            }
            Source::Backbone(
                FeatureExtractor::from_net(reference_vgg16(REFERENCE_SEED), &topology)
                    .map_err(|e| classify(e.into()))?,
            )
        }
    };
    let engine = SaliencyEngine::new(topology.clone(), fusion.clone(), f.bins).map_err(|e| classify(e.into()))?;
    let config = RunConfig {
        model: m.model.clone(),
        topology: topology.name.clone(),
        working_size: Some(working_size),
        bin_count: f.bins,
        fusion,
        features_from: m.features_from.clone(),
        dump_conspicuity: f.dump_conspicuity.clone(),
        threads: m.threads,
        ..RunConfig::default()
    };
    Ok((
        Pipeline {
            source,
            engine,
            working_size,
        },
        config,
    ))
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn unique_stems(paths: &[PathBuf]) -> CliResult<Vec<String>> {
    let stems: Vec<String> = paths.iter().map(|p| stem_of(p)).collect();
    let mut seen = HashSet::new();
    for (s, p) in stems.iter().zip(paths) {
        if s.is_empty() || !seen.insert(s) {
            return Err(CliError::usage(format!(
                "input {} has an empty or duplicate file stem",
                p.display()
            )));
        }
    }
    Ok(stems)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).data(format!("cannot create {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).internal("cannot serialize")?;
    fs::write(path, text + "\n").data(format!("cannot write {}", path.display()))
}

fn dump_conspicuity(dir: &Path, stem: &str, b: &SaliencyBreakdown) -> Result<(), deeprare::Error> {
    let dir = dir.join(stem);
    fs::create_dir_all(&dir)?;
    for (prefix, maps) in [("dlcm", &b.layers), ("dgcm", &b.groups)] {
        for m in maps.iter() {
            let base = dir.join(format!("{prefix}_{}", m.index));
            save_tensor(&m.values, base.with_extension("drt"))?;
            save_gray_png(&m.values, &base.with_extension("png"))?;
        }
    }
    Ok(())
}

fn report_failures(failures: &[(String, String)], noun: &str) -> CliResult<()> {
    if failures.is_empty() {
        return Ok(());
    }
    for (what, err) in failures {
        eprintln!("failed: {what}: {err}");
    }
    Err(CliError::Data(anyhow::anyhow!(
        "{} of the {noun} failed",
        failures.len()
    )))
}

fn cmd_saliency(a: SaliencyArgs) -> CliResult<()> {
    let (pipeline, config) = build_pipeline(&a.model, &a.fusion)?;
    let stems = unique_stems(&a.images)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("run_config.json"), &config)?;
    let pool = thread_pool(a.model.threads)?;
    let results: Vec<Result<(), String>> = pool.install(|| {
        a.images
            .par_iter()
            .zip(&stems)
            .map(|(path, stem)| {
                let image = load_rgb(path).map_err(|e| format!("cannot read image: {e}"))?;
                let b = pipeline.saliency(stem, &image).map_err(|e| e.to_string())?;
                let sal = b.saliency.values();
                save_gray_png(sal, &a.out.join(format!("{stem}.png"))).map_err(|e| e.to_string())?;
                if a.drt {
                    save_tensor(sal, a.out.join(format!("{stem}.drt"))).map_err(|e| e.to_string())?;
                }
                if let Some(dir) = &a.fusion.dump_conspicuity {
                    dump_conspicuity(dir, stem, &b).map_err(|e| e.to_string())?;
                }
                Ok(())
            })
            .collect()
    });
    let failures: Vec<(String, String)> = a
        .images
        .iter()
        .zip(results)
        .filter_map(|(p, r)| r.err().map(|e| (p.display().to_string(), e)))
        .collect();
    println!(
        "wrote {} saliency maps to {}",
        a.images.len() - failures.len(),
        a.out.display()
    );
    report_failures(&failures, "images")
}

fn cmd_features(a: FeaturesArgs) -> CliResult<()> {
    if a.model.features_from.is_some() {
        return Err(CliError::usage(
            "--features-from cannot be combined with the features command",
        ));
    }
    let fusion = FusionArgs {
        bins: deeprare::DEFAULT_BIN_COUNT,
        group_weights: None,
        face_gain: 1.0,
        no_face: false,
        blur_sigma: None,
        dump_conspicuity: None,
    };
    let (pipeline, config) = build_pipeline(&a.model, &fusion)?;
    let stems = unique_stems(&a.images)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("run_config.json"), &config)?;
    let pool = thread_pool(a.model.threads)?;
    let results: Vec<Result<(), String>> = pool.install(|| {
        a.images
            .par_iter()
            .zip(&stems)
            .map(|(path, stem)| {
                let image = load_rgb(path).map_err(|e| format!("cannot read image: {e}"))?;
                let acts = pipeline.activations(stem, &image).map_err(|e| e.to_string())?;
                write_feature_dump(&a.out, stem, &acts).map_err(|e| e.to_string())
            })
            .collect()
    });
    let failures: Vec<(String, String)> = a
        .images
        .iter()
        .zip(results)
        .filter_map(|(p, r)| r.err().map(|e| (p.display().to_string(), e)))
        .collect();
    println!(
        "wrote features for {} images to {}",
        a.images.len() - failures.len(),
        a.out.display()
    );
    report_failures(&failures, "images")
}

fn metric_config(m: &MetricArgs) -> CliResult<MetricConfig> {
    if m.budget == 0 {
        return Err(CliError::usage("--budget must be at least 1"));
    }
    if let Some(r) = m.ior_radius {
        if !(r.is_finite() && r > 0.0) {
            return Err(CliError::usage("--ior-radius must be positive"));
        }
    }
    if m.borji_splits == 0 {
        return Err(CliError::usage("--borji-splits must be at least 1"));
    }
    if !(m.density_sigma.is_finite() && m.density_sigma > 0.0) {
        return Err(CliError::usage("--density-sigma must be positive"));
    }
    Ok(MetricConfig {
        borji_splits: m.borji_splits,
        borji_seed: m.seed,
        density_sigma_fraction: m.density_sigma,
        scanpath: ScanpathConfig {
            budget: m.budget,
            ior_radius: m.ior_radius,
            target_dilation: m.target_dilation,
        },
    })
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let metrics = metric_config(&a.metrics)?;
    let (pipeline, mut config) = build_pipeline(&a.model, &a.fusion)?;
    config.metrics = metrics.clone();
    config.out = a.out.clone();
    let manifest = load_manifest(&a.manifest).map_err(|e| classify(e.into()))?;
    create_dir(&a.out)?;
    let maps_dir = a.out.join("maps");
    if a.save_maps {
        create_dir(&maps_dir)?;
    }
    let pool = thread_pool(a.model.threads)?;
    let results: Vec<Result<_, String>> = pool.install(|| {
        (0..manifest.len())
            .into_par_iter()
            .map(|i| {
                let record: Stimulus = manifest.load_record(i).map_err(|e| e.to_string())?;
                let b = pipeline
                    .saliency(&record.id, &record.image)
                    .map_err(|e| format!("stimulus {}: {e}", record.id))?;
                let sal = b.saliency.values();
                if a.save_maps {
                    save_gray_png(sal, &maps_dir.join(format!("{}.png", record.id))).map_err(|e| e.to_string())?;
                }
                if let Some(dir) = &a.fusion.dump_conspicuity {
                    dump_conspicuity(dir, &record.id, &b).map_err(|e| e.to_string())?;
                }
                let density = record.effective_density(metrics.density_sigma_fraction);
                Ok(evaluate(
                    &record.id,
                    &record.attributes,
                    sal,
                    record.ground_truth(density.as_ref()),
                    &metrics,
                ))
            })
            .collect()
    });
    let mut stimuli = Vec::new();
    let mut failures = Vec::new();
    for (entry, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(s) => stimuli.push(s),
            Err(e) => failures.push((entry.id.clone(), e)),
        }
    }
    report_failures(&failures, "stimuli")?;

    let config_json = json!({
        "run": config,
        "manifest": a.manifest,
        "stimuli": manifest.len(),
    });
    let report = EvalReport::new(config_json, stimuli);
    let csv_path = a.out.join("report.csv");
    let file = fs::File::create(&csv_path).data(format!("cannot create {}", csv_path.display()))?;
    report
        .write_csv(file)
        .data(format!("cannot write {}", csv_path.display()))?;
    let json_path = a.out.join("report.json");
    write_json(&json_path, &report)?;
    write_json(&a.out.join("run_config.json"), &config)?;

    let agg = &report.aggregates;
    println!("evaluated {} stimuli", agg.stimuli);
    for (name, m) in &agg.means {
        println!("  {name:<20} {:>10.4}  (n={})", m.mean, m.count);
    }
    if let (Some(f), Some(k)) = (agg.found_fraction, agg.mean_fixations) {
        println!("  found within budget  {f:>10.4}\n  mean fixations       {k:>10.4}");
    }
    println!("report: {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let feature = match a.feature {
        FeatureArg::Color => Feature::Color,
        FeatureArg::Orientation => Feature::Orientation,
        FeatureArg::Size => Feature::Size,
    };
    if a.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let mut specs = Vec::new();
    for &d in &a.differences {
        for i in 0..a.count {
            let mut spec = SynthSpec::new(feature, d, a.seed + i);
            spec.grid = a.grid;
            spec.jitter = a.jitter;
            spec.validate().map_err(CliError::usage)?;
            specs.push(spec);
        }
    }
    let stimuli = specs
        .par_iter()
        .map(synthesize)
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::usage)?;
    create_dir(&a.out)?;
    let manifest = write_dataset(&a.out, &stimuli).map_err(|e| classify(e.into()))?;
    write_json(&a.out.join("synth_specs.json"), &specs)?;
    println!("wrote {} stimuli; manifest {}", stimuli.len(), manifest.display());
    Ok(())
}

fn write_csv<T: serde::Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let ctx = || format!("cannot write {}", path.display());
    let mut w = csv::Writer::from_path(path).data(ctx())?;
    w.write_record(header).data(ctx())?;
    for row in rows {
        w.serialize(row).data(ctx())?;
    }
    w.flush().data(ctx())
}

fn cmd_curves(a: CurvesArgs) -> CliResult<()> {
    let file = fs::File::open(&a.report).data(format!("cannot open {}", a.report.display()))?;
    let report =
        EvalReport::read_json(std::io::BufReader::new(file)).data(format!("cannot parse {}", a.report.display()))?;
    match a.kind {
        CurveKind::FoundVsBudget => {
            let paths: Vec<_> = report.stimuli.iter().filter_map(|s| s.scanpath.as_ref()).collect();
            if paths.is_empty() {
                return Err(CliError::Data(anyhow::anyhow!(
                    "report has no scanpath results (no target masks)"
                )));
            }
            let budget = paths.iter().map(|p| p.budget).max().unwrap_or(1);
            let found: Vec<Option<usize>> = paths.iter().map(|p| p.fixations_to_target).collect();
            let curve = found_vs_budget_curve(&found, &(1..=budget).collect::<Vec<_>>());
            write_csv(&a.out, &["budget", "fraction_found"], curve.iter().copied())?;
            if let Some(svg_path) = &a.svg {
                let points: Vec<(f64, f64)> = curve.iter().map(|&(b, f)| (b as f64, f)).collect();
                let doc = svg::line_plot(
                    "Targets found vs. fixation budget",
                    "fixations",
                    "fraction found",
                    &BTreeMap::from([("found".to_string(), points)]),
                );
                fs::write(svg_path, doc).data(format!("cannot write {}", svg_path.display()))?;
            }
            println!("wrote {} budget rows to {}", curve.len(), a.out.display());
        }
        CurveKind::GsiVsDifference => {
            let points = gsi_vs_difference(&report);
            if points.is_empty() {
                return Err(CliError::Data(anyhow::anyhow!(
                    "report has no stimuli with feature/difference attributes and a GSI value"
                )));
            }
            write_csv(
                &a.out,
                &["feature", "difference", "mean_gsi", "count"],
                points.iter().map(|p| (&p.feature, p.difference, p.mean_gsi, p.count)),
            )?;
            if let Some(svg_path) = &a.svg {
                let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
                for p in &points {
                    series
                        .entry(p.feature.clone())
                        .or_default()
                        .push((p.difference, p.mean_gsi));
                }
                let doc = svg::line_plot("GSI vs. target/distractor difference", "difference", "GSI", &series);
                fs::write(svg_path, doc).data(format!("cannot write {}", svg_path.display()))?;
            }
            println!("wrote {} difference rows to {}", points.len(), a.out.display());
        }
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> CliResult<()> {
    let model = reference_vgg16(a.seed).to_onnx(concat!("deeprare ", env!("CARGO_PKG_VERSION")));
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&a.out, model.encode_bytes()).data(format!("cannot write {}", a.out.display()))?;
    println!("wrote reference backbone (seed {}) to {}", a.seed, a.out.display());
    Ok(())
}
