//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p deeprare --test acceptance -- --nocapture` (the
//! target has no libtest harness, so output is always shown).
//!
//! Environment:
//! - `DEEPRARE_MODEL`: ONNX backbone. Without it the seeded reference
//!   backbone is used and the pop-out criteria (4-6) are reported but do
//!   not fail the run, since that network has no learned features.
//! - `DEEPRARE_TOPOLOGY`: topology for `DEEPRARE_MODEL` (default `vgg16`).
//! - `DEEPRARE_MIT1003`: manifest of a fixation dataset for criterion 8.

use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use deeprare::dataset::{load_manifest, synthesize, Feature, Stimulus, SynthSpec};
use deeprare::features::{NetworkTopology, REFERENCE_SEED};
use deeprare::fusion::fuse_weighted;
use deeprare::metrics::{
    auc_borji, auc_judd, borji_negative_samples, cc, evaluate, gsi, kl, msr, nss, scanpath, sim, Aggregates,
    FixationSet, MetricConfig, ScanpathConfig,
};
use deeprare::rarity::{channel_rarity, rarity_of_slice};
use deeprare::{
    DeepRare, FeatureExtractor, FusionConfig, LayerActivations, SaliencyBreakdown, Tensor, DEFAULT_BIN_COUNT,
};

// Tolerances and thresholds.
const C1_MAPS: usize = 1000;
const C1_BUDGET: Duration = Duration::from_secs(10);
const C2_INSTANCES: usize = 200;
const C2_AUC_TOL: f64 = 1e-9;
const C2_TOL: f64 = 1e-6;
const C4_PER_FEATURE: u64 = 20;
const C4_COLOR_HIT: f64 = 0.80;
const C4_ORIENT_HIT: f64 = 0.60;
const C4_SIZE_HIT: f64 = 0.60;
const C4_MSR_B: f64 = 0.70;
const C5_FIXATIONS: usize = 15;
const C5_FOUND: f64 = 0.70;
const C5_BUDGET: Duration = Duration::from_secs(300);
const C6_SPEARMAN: f64 = 0.8;
const C6_COLOR_SWEEP: [f64; 7] = [15.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0];
const C6_SEEDS: u64 = 4;
const C7_BUDGET: Duration = Duration::from_secs(2);
const C8_AUC_JUDD: f64 = 0.86;
const C8_AUC_TOL: f64 = 0.05;

struct Outcome {
    id: u32,
    title: &'static str,
    pass: Option<bool>,
    blocking: bool,
    detail: String,
}

impl Outcome {
    fn line(&self) -> String {
        let status = match (self.pass, self.blocking) {
            (None, _) => "SKIP",
            (Some(true), _) => "PASS",
            (Some(false), true) => "FAIL",
            (Some(false), false) => "FAIL (non-blocking)",
        };
        format!("[{status}] {}. {}: {}", self.id, self.title, self.detail)
    }
}

fn main() -> ExitCode {
    let model = Model::from_env();
    println!("acceptance: backbone = {}", model.describe);
    let mut outcomes = vec![criterion_1(), criterion_2(), criterion_3(&model.pipeline)];
    let popout = PopoutRun::new(&model.pipeline);
    outcomes.push(criterion_4(&popout, model.real));
    outcomes.push(criterion_5(&popout, model.real));
    outcomes.push(criterion_6(&popout, model.real));
    outcomes.push(criterion_7(&model.pipeline));
    outcomes.push(criterion_8(&model));
    for o in &outcomes {
        println!("{}", o.line());
    }
    let blocking_failures = outcomes.iter().filter(|o| o.blocking && o.pass == Some(false)).count();
    println!(
        "acceptance: {} passed, {} failed ({} blocking), {} skipped",
        outcomes.iter().filter(|o| o.pass == Some(true)).count(),
        outcomes.iter().filter(|o| o.pass == Some(false)).count(),
        blocking_failures,
        outcomes.iter().filter(|o| o.pass.is_none()).count()
    );
    if blocking_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

struct Model {
    pipeline: DeepRare,
    real: bool,
    describe: String,
}

impl Model {
    fn from_env() -> Self {
        match std::env::var_os("DEEPRARE_MODEL") {
            Some(path) => {
                let topo_name = std::env::var("DEEPRARE_TOPOLOGY").unwrap_or_else(|_| "vgg16".into());
                let topology = NetworkTopology::resolve(&topo_name).expect("DEEPRARE_TOPOLOGY resolves");
                let extractor = FeatureExtractor::load(&path, &topology).expect("DEEPRARE_MODEL loads");
                let pipeline = DeepRare::new(extractor, FusionConfig::default(), DEFAULT_BIN_COUNT, None)
                    .expect("default configuration is valid");
                Self {
                    pipeline,
                    real: true,
                    describe: format!("{} ({topo_name})", PathBuf::from(path).display()),
                }
            }
            None => Self {
                pipeline: DeepRare::reference(),
                real: false,
                describe: format!("seeded reference VGG16 (seed {REFERENCE_SEED}, no pretrained weights)"),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// 1. Rarity against a brute-force per-pixel oracle.

/// Per-pixel rarity by direct definition: count the pixels sharing this
/// pixel's bin by scanning the whole map.
fn rarity_oracle(values: &[f32], bins: usize) -> Vec<f32> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if lo == hi {
        return vec![0.0; values.len()];
    }
    let bin = |v: f32| -> i64 {
        let k = ((v as f64 - lo as f64) / (hi as f64 - lo as f64) * bins as f64).floor() as i64;
        k.clamp(0, bins as i64 - 1)
    };
    let n = values.len();
    values
        .iter()
        .map(|&v| {
            let b = bin(v);
            let same = values.iter().filter(|&&u| bin(u) == b).count();
            let p = same as f64 / n as f64;
            (-p.ln()) as f32
        })
        .collect()
}

fn random_map(rng: &mut ChaCha8Rng) -> Tensor {
    let h = rng.random_range(4..=32);
    let w = rng.random_range(4..=32);
    let kind = rng.random_range(0..4);
    let data: Vec<f32> = match kind {
        // Continuous values.
        0 => (0..h * w).map(|_| rng.random_range(-5.0f32..5.0)).collect(),
        // Few distinct levels, many ties and exact extremes.
        1 => {
            let levels = rng.random_range(1..6);
            (0..h * w).map(|_| rng.random_range(0..levels) as f32 * 0.25).collect()
        }
        // Sparse ReLU-like activations.
        2 => (0..h * w)
            .map(|_| {
                if rng.random_bool(0.8) {
                    0.0
                } else {
                    rng.random_range(0.0f32..3.0)
                }
            })
            .collect(),
        // Constant.
        _ => vec![rng.random_range(-1.0f32..1.0); h * w],
    };
    Tensor::new(vec![h, w], data).expect("shape matches")
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let maps: Vec<(Tensor, usize)> = (0..C1_MAPS)
        .map(|i| (random_map(&mut rng), [1, 2, 11][i % 3]))
        .collect();
    let start = Instant::now();
    let mut mismatches = 0;
    for (map, bins) in &maps {
        let got = channel_rarity(map, *bins).expect("finite map");
        let mut fast = vec![0.0f32; map.len()];
        rarity_of_slice(map.data(), *bins, &mut fast).expect("finite map");
        let want = rarity_oracle(map.data(), *bins);
        let same = |a: &[f32]| a.iter().zip(&want).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same(got.values.data()) || !same(&fast) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        id: 1,
        title: "rarity oracle equivalence",
        pass: Some(mismatches == 0 && elapsed < C1_BUDGET),
        blocking: true,
        detail: format!(
            "{mismatches}/{C1_MAPS} maps differ bitwise (4x4..32x32, bins 1/2/11), {:.2}s (limit {}s)",
            elapsed.as_secs_f64(),
            C1_BUDGET.as_secs()
        ),
    }
}

// ---------------------------------------------------------------------------
// 2. Metrics against direct-formula oracles.

struct Instance {
    sal: Tensor,
    density: Tensor,
    fix: FixationSet,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (h, w) = (rng.random_range(3..=12), rng.random_range(3..=12));
    let levels = rng.random_range(2..20);
    // Quantized saliency produces ties.
    let sal: Vec<f32> = (0..h * w)
        .map(|_| rng.random_range(0..levels) as f32 / levels as f32)
        .collect();
    let density: Vec<f32> = (0..h * w).map(|_| rng.random_range(0.0f32..1.0)).collect();
    let n_fix = rng.random_range(1..(h * w).min(15));
    let points = (0..n_fix)
        .map(|_| (rng.random_range(0..w), rng.random_range(0..h)))
        .collect();
    Instance {
        sal: Tensor::new(vec![h, w], sal).unwrap(),
        density: Tensor::new(vec![h, w], density).unwrap(),
        fix: FixationSet::new(points),
    }
}

fn fixated_pixels(fix: &FixationSet, w: usize) -> Vec<usize> {
    let set: HashSet<usize> = fix.points.iter().map(|&(x, y)| y * w + x).collect();
    set.into_iter().collect()
}

fn oracle_judd(sal: &[f32], fixated: &[usize]) -> f64 {
    let n = sal.len() as f64;
    let nf = fixated.len() as f64;
    let mut thresholds: Vec<f64> = fixated.iter().map(|&i| sal[i] as f64).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut roc = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = fixated.iter().filter(|&&i| sal[i] as f64 >= t).count() as f64;
        let above = sal.iter().filter(|&&v| v as f64 >= t).count() as f64;
        roc.push(((above - tp) / (n - nf), tp / nf));
    }
    roc.push((1.0, 1.0));
    let mut area = 0.0;
    for k in 1..roc.len() {
        area += (roc[k].0 - roc[k - 1].0) * (roc[k].1 + roc[k - 1].1) / 2.0;
    }
    area
}

/// Pairwise Mann-Whitney count.
fn oracle_pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &q in neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn oracle_stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn as_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn oracle_distribution(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().map(|x| x + 1e-12).sum();
    v.iter().map(|x| (x + 1e-12) / total).collect()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let splits = 10;
    let mut worst = [0.0f64; 6];
    let names = ["auc_judd", "auc_borji", "nss", "cc", "kl", "sim"];
    for _ in 0..C2_INSTANCES {
        let inst = random_instance(&mut rng);
        let (h, w) = inst.sal.dims2().unwrap();
        let fixated = fixated_pixels(&inst.fix, w);
        let s = as_f64(&inst.sal);
        let d = as_f64(&inst.density);

        let judd = oracle_judd(inst.sal.data(), &fixated);

        let pos: Vec<f64> = fixated.iter().map(|&i| s[i]).collect();
        let negatives = borji_negative_samples(h * w, pos.len(), splits, 9);
        let borji = negatives
            .iter()
            .map(|idx| oracle_pairwise_auc(&pos, &idx.iter().map(|&i| s[i]).collect::<Vec<_>>()))
            .sum::<f64>()
            / splits as f64;

        let (ms, ss) = oracle_stats(&s);
        let nss_want = pos.iter().map(|v| (v - ms) / ss).sum::<f64>() / pos.len() as f64;

        let (md, sd) = oracle_stats(&d);
        let cov = s.iter().zip(&d).map(|(a, b)| (a - ms) * (b - md)).sum::<f64>() / s.len() as f64;
        let cc_want = cov / (ss * sd);

        let p = oracle_distribution(&d);
        let q = oracle_distribution(&s);
        let kl_want: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        let sim_want: f64 = p.iter().zip(&q).map(|(a, b)| a.min(*b)).sum();

        let got = [
            auc_judd(&inst.sal, &inst.fix).unwrap(),
            auc_borji(&inst.sal, &inst.fix, splits, 9).unwrap(),
            nss(&inst.sal, &inst.fix).unwrap(),
            cc(&inst.sal, &inst.density).unwrap(),
            kl(&inst.density, &inst.sal).unwrap(),
            sim(&inst.sal, &inst.density).unwrap(),
        ];
        let want = [judd, borji, nss_want, cc_want, kl_want, sim_want];
        for k in 0..6 {
            worst[k] = worst[k].max((got[k] - want[k]).abs());
        }
    }
    let pass = worst[0] <= C2_AUC_TOL && worst[1] <= C2_AUC_TOL && worst[2..].iter().all(|&e| e <= C2_TOL);
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        id: 2,
        title: "metric oracle equivalence",
        pass: Some(pass),
        blocking: true,
        detail: format!("{C2_INSTANCES} instances, max |err|: {detail} (limits AUC {C2_AUC_TOL:e}, others {C2_TOL:e})"),
    }
}

// ---------------------------------------------------------------------------
// 3. Zero propagation, ranges, and in-process property sweeps.

fn breakdown_in_range(b: &SaliencyBreakdown) -> bool {
    let ok = |t: &Tensor| t.data().iter().all(|&v| (0.0..=1.0).contains(&v));
    b.layers.iter().all(|m| ok(&m.values)) && b.groups.iter().all(|m| ok(&m.values)) && ok(b.saliency.values())
}

fn criterion_3(pipeline: &DeepRare) -> Outcome {
    let mut failures = Vec::new();

    // Spatially constant activations (one random constant per channel).
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let topo = pipeline.engine().topology.clone();
    let size = [(224usize, 224usize), (112, 112), (56, 56), (28, 28), (14, 14)];
    let acts: Vec<LayerActivations> = topo
        .layers
        .iter()
        .map(|l| {
            let (h, w) = size[(l.group as usize - 1).min(4)];
            let mut data = Vec::with_capacity(l.channels * h * w);
            for _ in 0..l.channels {
                data.extend(std::iter::repeat_n(rng.random_range(0.0f32..4.0), h * w));
            }
            LayerActivations::new(l.index, l.group, Tensor::new(vec![l.channels, h, w], data).unwrap()).unwrap()
        })
        .collect();
    let b = pipeline.engine().compute(&acts, (224, 224)).expect("engine runs");
    if b.saliency.values().data().iter().any(|&v| v != 0.0) {
        failures.push("constant activations gave non-zero saliency".to_string());
    }
    if !breakdown_in_range(&b) {
        failures.push("constant activations left [0,1]".to_string());
    }

    // Uniform image through the full pipeline. Only meaningful for the
    // reference backbone, whose conditioning maps mid-gray to exactly zero.
    if pipeline.engine().topology.name == "vgg16-reference" {
        let gray = Tensor::filled(vec![3, 224, 224], 0.5);
        let b = pipeline.saliency(&gray).expect("pipeline runs");
        if b.saliency.values().data().iter().any(|&v| v != 0.0) {
            failures.push("uniform mid-gray image gave non-zero saliency".to_string());
        }
    }

    // Emitted maps on structured inputs stay in [0,1].
    for feature in [Feature::Color, Feature::Orientation, Feature::Size] {
        let d = match feature {
            Feature::Color => 90.0,
            Feature::Orientation => 45.0,
            Feature::Size => 2.0,
        };
        let s = synthesize(&SynthSpec::new(feature, d, 77)).unwrap();
        let b = pipeline.saliency(&s.image).unwrap();
        if !breakdown_in_range(&b) {
            failures.push(format!("{} maps left [0,1]", s.id));
        }
        let (lo, hi) = b.saliency.values().min_max();
        if lo != 0.0 || hi != 1.0 {
            failures.push(format!("{} saliency spans [{lo}, {hi}], not [0, 1]", s.id));
        }
    }

    // Property sweep: rarity shift invariance and non-negativity, fusion range.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..300 {
        let map = random_map(&mut rng);
        let bins = rng.random_range(1..16);
        let r = channel_rarity(&map, bins).unwrap();
        // Power-of-two shifts are exact in f32 for these magnitudes.
        let shifted = map.map(|v| v + 8.0);
        let rs = channel_rarity(&shifted, bins).unwrap();
        if r.values.data().iter().any(|&v| v < 0.0) || r.values != rs.values {
            failures.push("rarity property violated".into());
            break;
        }
        let other = random_map(&mut rng);
        if other.shape() == map.shape() {
            let fused = fuse_weighted(
                &[&map, &other],
                &[rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)],
            )
            .unwrap();
            if fused.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                failures.push("fusion left [0,1]".into());
                break;
            }
        }
    }

    Outcome {
        id: 3,
        title: "zero propagation and range invariants",
        pass: Some(failures.is_empty()),
        blocking: true,
        detail: if failures.is_empty() {
            "constant activations and uniform input give zero maps; all layer/group/final maps in [0,1]; \
             300-case property sweep clean (proptest suite runs with the unit tests)"
                .into()
        } else {
            failures.join("; ")
        },
    }
}

// ---------------------------------------------------------------------------
// 4-6. Synthetic pop-out runs.

struct PopoutResult {
    id: String,
    feature: Feature,
    difference: f64,
    argmax_hit: bool,
    msr_b: Option<f64>,
    gsi: f64,
    fixations: Option<usize>,
}

struct PopoutRun {
    suite: Vec<PopoutResult>,
    color_sweep: Vec<PopoutResult>,
    suite_time: Duration,
}

fn suite_specs() -> Vec<SynthSpec> {
    let mut specs = Vec::new();
    for seed in 0..C4_PER_FEATURE {
        specs.push(SynthSpec::new(Feature::Color, 180.0, seed));
    }
    for seed in 0..C4_PER_FEATURE {
        specs.push(SynthSpec::new(Feature::Orientation, 90.0, seed));
    }
    // Bigger and smaller targets in equal numbers.
    for seed in 0..C4_PER_FEATURE {
        let ratio = if seed % 2 == 0 { 2.0 } else { 0.5 };
        specs.push(SynthSpec::new(Feature::Size, ratio, seed));
    }
    specs
}

fn run_stimulus(pipeline: &DeepRare, spec: &SynthSpec) -> PopoutResult {
    let s: Stimulus = synthesize(spec).expect("valid spec");
    let b = pipeline.saliency(&s.image).expect("pipeline runs");
    let sal = b.saliency.values();
    let masks = s.masks.as_ref().expect("synthetic stimuli carry masks");
    let argmax = sal
        .data()
        .iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0;
    let path = scanpath(sal, masks, &ScanpathConfig::default()).expect("scanpath runs");
    PopoutResult {
        id: s.id.clone(),
        feature: spec.feature,
        difference: spec.difference,
        argmax_hit: masks.target[argmax],
        msr_b: msr(sal, masks).expect("msr runs").msr_b,
        gsi: gsi(sal, masks).expect("gsi runs"),
        fixations: path.fixations_to_target,
    }
}

impl PopoutRun {
    fn new(pipeline: &DeepRare) -> Self {
        let start = Instant::now();
        let suite: Vec<PopoutResult> = suite_specs().par_iter().map(|s| run_stimulus(pipeline, s)).collect();
        let suite_time = start.elapsed();
        let sweep: Vec<SynthSpec> = C6_COLOR_SWEEP
            .iter()
            .flat_map(|&d| (0..C6_SEEDS).map(move |seed| SynthSpec::new(Feature::Color, d, 100 + seed)))
            .collect();
        let color_sweep = sweep.par_iter().map(|s| run_stimulus(pipeline, s)).collect();
        Self {
            suite,
            color_sweep,
            suite_time,
        }
    }

    fn of(&self, feature: Feature) -> impl Iterator<Item = &PopoutResult> {
        self.suite.iter().filter(move |r| r.feature == feature)
    }
}

fn fraction<'a>(items: impl Iterator<Item = &'a PopoutResult>, pred: impl Fn(&PopoutResult) -> bool) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for r in items {
        n += 1;
        hit += pred(r) as usize;
    }
    hit as f64 / n.max(1) as f64
}

fn non_blocking_note(real: bool) -> &'static str {
    if real {
        ""
    } else {
        " [reference backbone without learned features; blocking only with DEEPRARE_MODEL]"
    }
}

fn criterion_4(run: &PopoutRun, real: bool) -> Outcome {
    let color = fraction(run.of(Feature::Color), |r| r.argmax_hit);
    let orient = fraction(run.of(Feature::Orientation), |r| r.argmax_hit);
    let size = fraction(run.of(Feature::Size), |r| r.argmax_hit);
    let msr_ok = fraction(run.suite.iter(), |r| r.msr_b.is_some_and(|m| m < 1.0));
    let pass = color >= C4_COLOR_HIT && orient >= C4_ORIENT_HIT && size >= C4_SIZE_HIT && msr_ok >= C4_MSR_B;
    let misses: Vec<&str> = run
        .suite
        .iter()
        .filter(|r| !r.argmax_hit)
        .map(|r| r.id.as_str())
        .take(5)
        .collect();
    Outcome {
        id: 4,
        title: "synthetic pop-out",
        pass: Some(pass),
        blocking: real,
        detail: format!(
            "arg-max in target: color {:.0}% (>= {:.0}%), orientation {:.0}% (>= {:.0}%), size {:.0}% (>= {:.0}%); \
             MSR_b < 1 on {:.0}% (>= {:.0}%); first misses {:?}{}",
            color * 100.0,
            C4_COLOR_HIT * 100.0,
            orient * 100.0,
            C4_ORIENT_HIT * 100.0,
            size * 100.0,
            C4_SIZE_HIT * 100.0,
            msr_ok * 100.0,
            C4_MSR_B * 100.0,
            misses,
            non_blocking_note(real)
        ),
    }
}

fn criterion_5(run: &PopoutRun, real: bool) -> Outcome {
    let found = fraction(run.suite.iter(), |r| r.fixations.is_some_and(|k| k <= C5_FIXATIONS));
    let pass = found >= C5_FOUND && run.suite_time < C5_BUDGET;
    let results: Vec<_> = run
        .suite
        .iter()
        .map(|r| deeprare::metrics::ScanpathResult {
            fixations_to_target: r.fixations,
            path: Vec::new(),
            budget: ScanpathConfig::default().budget,
        })
        .collect();
    let mean = deeprare::metrics::mean_fixations(&results).unwrap_or(f64::NAN);
    Outcome {
        id: 5,
        title: "scanpath search",
        pass: Some(pass),
        blocking: real,
        detail: format!(
            "{:.0}% of {} targets found within {C5_FIXATIONS} fixations (>= {:.0}%), mean fixations {mean:.1}; \
             suite {:.1}s (limit {}s){}",
            found * 100.0,
            run.suite.len(),
            C5_FOUND * 100.0,
            run.suite_time.as_secs_f64(),
            C5_BUDGET.as_secs(),
            non_blocking_note(real)
        ),
    }
}

/// Ranks with ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, sx) = oracle_stats(&rx);
    let (my, sy) = oracle_stats(&ry);
    let cov = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / rx.len() as f64;
    cov / (sx * sy)
}

fn mean_gsi<'a>(items: impl Iterator<Item = &'a PopoutResult>) -> f64 {
    let v: Vec<f64> = items.map(|r| r.gsi).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn criterion_6(run: &PopoutRun, real: bool) -> Outcome {
    let curve: Vec<f64> = C6_COLOR_SWEEP
        .iter()
        .map(|&d| mean_gsi(run.color_sweep.iter().filter(|r| r.difference == d)))
        .collect();
    let rho = spearman(&C6_COLOR_SWEEP, &curve);
    let big = mean_gsi(run.of(Feature::Size).filter(|r| r.difference == 2.0));
    let small = mean_gsi(run.of(Feature::Size).filter(|r| r.difference == 0.5));
    let pass = rho >= C6_SPEARMAN && big > small;
    let curve_text = C6_COLOR_SWEEP
        .iter()
        .zip(&curve)
        .map(|(d, g)| format!("{d:.0}:{g:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    Outcome {
        id: 6,
        title: "GSI curve shape",
        pass: Some(pass),
        blocking: real,
        detail: format!(
            "color GSI by hue difference [{curve_text}] Spearman {rho:.3} (>= {C6_SPEARMAN}); \
             size GSI ratio 2 = {big:.3} vs ratio 0.5 = {small:.3} (need >){}",
            non_blocking_note(real)
        ),
    }
}

// ---------------------------------------------------------------------------
// 7. Single-core throughput.

fn criterion_7(pipeline: &DeepRare) -> Outcome {
    let image = synthesize(&SynthSpec::new(Feature::Color, 90.0, 7)).unwrap().image;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let times: Vec<f64> = pool.install(|| {
        // Warm-up run, then the median of three.
        pipeline.saliency(&image).unwrap();
        let mut t: Vec<f64> = (0..3)
            .map(|_| {
                let start = Instant::now();
                pipeline.saliency(&image).unwrap();
                start.elapsed().as_secs_f64()
            })
            .collect();
        t.sort_by(f64::total_cmp);
        t
    });
    let median = times[1];
    Outcome {
        id: 7,
        title: "single-core throughput",
        pass: Some(median < C7_BUDGET.as_secs_f64()),
        blocking: true,
        detail: format!(
            "224x224 end-to-end median {median:.3}s on 1 thread (limit {}s; runs {:.3}/{:.3}/{:.3}s)",
            C7_BUDGET.as_secs(),
            times[0],
            times[1],
            times[2]
        ),
    }
}

// ---------------------------------------------------------------------------
// 8. Fixation-dataset reproduction (needs external data).

fn criterion_8(model: &Model) -> Outcome {
    let manifest = std::env::var_os("DEEPRARE_MIT1003");
    let (Some(manifest), true) = (manifest, model.real) else {
        return Outcome {
            id: 8,
            title: "fixation dataset reproduction",
            pass: None,
            blocking: false,
            detail: "needs DEEPRARE_MIT1003 (manifest) and DEEPRARE_MODEL (pretrained VGG16)".into(),
        };
    };
    let manifest = load_manifest(&PathBuf::from(manifest)).expect("dataset manifest loads");
    let cfg = MetricConfig::default();
    let reports: Vec<_> = (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let s = manifest.load_record(i).expect("record loads");
            let sal = model.pipeline.saliency(&s.image).expect("pipeline runs").saliency;
            let density = s.effective_density(cfg.density_sigma_fraction);
            evaluate(
                &s.id,
                &s.attributes,
                sal.values(),
                s.ground_truth(density.as_ref()),
                &cfg,
            )
        })
        .collect();
    let agg = Aggregates::compute(&reports);
    let mean = |m: &str| agg.means.get(m).map(|e| e.mean).unwrap_or(f64::NAN);
    let judd = mean("auc_judd");
    let close = (judd - C8_AUC_JUDD).abs() <= C8_AUC_TOL;
    Outcome {
        id: 8,
        title: "fixation dataset reproduction",
        pass: Some(close),
        blocking: false,
        detail: format!(
            "{} images: AUC-Judd {judd:.3} (reference {C8_AUC_JUDD} +/- {C8_AUC_TOL}{}), AUC-Borji {:.3}, CC {:.3}, \
             KL {:.3}, NSS {:.3}, SIM {:.3}",
            agg.stimuli,
            if close { "" } else { ", deviation flagged" },
            mean("auc_borji"),
            mean("cc"),
            mean("kl"),
            mean("nss"),
            mean("sim")
        ),
    }
}
