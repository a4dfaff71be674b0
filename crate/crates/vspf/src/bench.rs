//! Synthetic phantom pairs with known gold transforms, and the
//! sampling-rate sweep experiment with failure/mTRE statistics.
//!
//! Phantoms stand in for clinical data: the reference is a smoothed sum of
//! seeded ellipsoids and shells, the moving image is its resampling under a
//! seeded rigid transform with a monotone intensity remap (a stand-in for a
//! second modality, which NMI must be invariant to) plus Gaussian noise.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::TrainingPair;
use crate::registration::{register, RegistrationConfig, SamplerKind};
use crate::rng;
use crate::transform::{apply, RigidMap, RigidParams};
use crate::volume::{gaussian_smooth, Volume};

/// Any VOI error above this is a registration failure (mm).
pub const FAILURE_TRE_MM: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    /// Voxels per axis.
    pub size: usize,
    /// Isotropic spacing in mm.
    pub spacing: f64,
    /// Stream for blob geometry and VOI placement.
    pub structure_seed: u64,
    /// Gold transform bounds: |t| per axis in mm, |r| per axis in radians.
    pub max_translation_mm: f64,
    pub max_rotation_rad: f64,
    /// Gaussian noise added to the moving image.
    pub noise_sigma: f64,
    /// Monotone piecewise-linear intensity map applied to the moving image
    /// (control points (x, y), strictly increasing in both).
    pub remap: Vec<(f64, f64)>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            size: 64,
            spacing: 1.0,
            structure_seed: 0,
            max_translation_mm: 10.0,
            max_rotation_rad: 0.17,
            noise_sigma: 2.0,
            remap: vec![
                (0.0, 0.0),
                (40.0, 95.0),
                (100.0, 135.0),
                (160.0, 215.0),
                (255.0, 255.0),
            ],
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Config(format!("phantom size {} too small", self.size)));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::Config("phantom spacing must be positive".into()));
        }
        if self.max_translation_mm < 0.0 || self.max_rotation_rad < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("phantom bounds and noise must be nonnegative".into()));
        }
        if self.remap.len() < 2 {
            return Err(Error::Config("remap needs at least two control points".into()));
        }
        for w in self.remap.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err(Error::Config(format!(
                    "remap must be strictly increasing, got {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    fn apply_remap(&self, v: f64) -> f64 {
        let pts = &self.remap;
        // Linear extrapolation with the edge segment slopes keeps the map
        // strictly increasing outside the control range.
        let seg = if v <= pts[0].0 {
            (pts[0], pts[1])
        } else if v >= pts[pts.len() - 1].0 {
            (pts[pts.len() - 2], pts[pts.len() - 1])
        } else {
            let idx = pts.partition_point(|p| p.0 <= v);
            (pts[idx - 1], pts[idx])
        };
        let ((x0, y0), (x1, y1)) = seg;
        y0 + (v - x0) * (y1 - y0) / (x1 - x0)
    }
}

fn uniform_in(stream: &mut impl Iterator<Item = f64>, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * stream.next().unwrap()
}

fn unit_stream(seed: u64) -> impl Iterator<Item = f64> {
    (0u64..).map(move |i| rng::unit_f64(seed, i))
}

/// Builds the reference volume: 6-12 seeded ellipsoids and shells with
/// distinct intensities on a dark background, smoothed by 1 mm.
fn build_reference(spec: &PhantomSpec, structure_seed: u64) -> Volume {
    let n = spec.size;
    let half = 0.5 * (n - 1) as f64 * spec.spacing;
    let mut s = unit_stream(structure_seed);
    let count = 6 + (rng::splitmix64(structure_seed) % 7) as usize;
    struct Blob {
        center: [f64; 3],
        inv_axes2: [f64; 3],
        intensity: f64,
        shell: bool,
    }
    let mut blobs = Vec::with_capacity(count);
    for k in 0..count {
        let center = [
            uniform_in(&mut s, -0.55 * half, 0.55 * half),
            uniform_in(&mut s, -0.55 * half, 0.55 * half),
            uniform_in(&mut s, -0.55 * half, 0.55 * half),
        ];
        let mut inv_axes2 = [0.0; 3];
        for a in inv_axes2.iter_mut() {
            let semi = uniform_in(&mut s, 0.1 * half, 0.35 * half);
            *a = 1.0 / (semi * semi);
        }
        blobs.push(Blob {
            center,
            inv_axes2,
            intensity: uniform_in(&mut s, 40.0, 230.0),
            shell: k % 3 == 2,
        });
    }
    let origin = [-half; 3];
    let mut data = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [
                    origin[0] + x as f64 * spec.spacing,
                    origin[1] + y as f64 * spec.spacing,
                    origin[2] + z as f64 * spec.spacing,
                ];
                let mut v: f64 = 0.0;
                for b in &blobs {
                    let q = (p[0] - b.center[0]).powi(2) * b.inv_axes2[0]
                        + (p[1] - b.center[1]).powi(2) * b.inv_axes2[1]
                        + (p[2] - b.center[2]).powi(2) * b.inv_axes2[2];
                    let inside = if b.shell {
                        (0.55..=1.0).contains(&q)
                    } else {
                        q <= 1.0
                    };
                    if inside {
                        v += b.intensity;
                    }
                }
                data.push(v);
            }
        }
    }
    let vol = Volume::new([n; 3], [spec.spacing; 3], origin, data).unwrap();
    gaussian_smooth(&vol, 1.0)
}

/// Generates a phantom pair with a seeded gold transform inside the spec's
/// bounds. Deterministic in (spec, seed).
pub fn make_phantom_pair(spec: &PhantomSpec, seed: u64) -> Result<TrainingPair> {
    let root = rng::mix(spec.structure_seed, seed);
    let gold_stream_seed = rng::mix(root, 2);
    let mut g = unit_stream(gold_stream_seed);
    let t = spec.max_translation_mm;
    let r = spec.max_rotation_rad;
    let gold = RigidParams::new(
        [
            uniform_in(&mut g, -t, t),
            uniform_in(&mut g, -t, t),
            uniform_in(&mut g, -t, t),
        ],
        [
            uniform_in(&mut g, -r, r),
            uniform_in(&mut g, -r, r),
            uniform_in(&mut g, -r, r),
        ],
    );
    make_phantom_pair_with_gold(spec, seed, gold)
}

/// Phantom pair with a caller-supplied gold transform (still seeded for
/// structure, VOIs and noise).
pub fn make_phantom_pair_with_gold(
    spec: &PhantomSpec,
    seed: u64,
    gold: RigidParams,
) -> Result<TrainingPair> {
    spec.validate()?;
    gold.validate()?;
    let root = rng::mix(spec.structure_seed, seed);
    let reference = build_reference(spec, rng::mix(root, 1));

    // Moving image: pull the reference back through the inverse gold map so
    // that registering moving onto reference recovers `gold`, then remap
    // intensities and add noise.
    let gold_map = RigidMap::new(gold, reference.physical_center());
    let mut noise = ChaCha8Rng::seed_from_u64(rng::mix(root, 3));
    let n = spec.size;
    let mut data = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = reference.voxel_center(x, y, z);
                let v = reference
                    .sample_cubic(gold_map.inverse_map_point(p))
                    .unwrap_or(0.0);
                let remapped = spec.apply_remap(v);
                let eps: f64 = StandardNormal.sample(&mut noise);
                data.push(remapped + spec.noise_sigma * eps);
            }
        }
    }
    let moving = Volume::new(
        reference.dims,
        reference.spacing,
        reference.origin,
        data,
    )?;

    // Eight VOI points inside the structured core; with |t| and |r| bounded
    // they always stay inside both volumes under the gold transform.
    let mut v = unit_stream(rng::mix(root, 4));
    let half = 0.5 * (n - 1) as f64 * spec.spacing;
    let box_half = 0.25 * half;
    let mut voi_points = Vec::with_capacity(8);
    for _ in 0..8 {
        voi_points.push([
            uniform_in(&mut v, -box_half, box_half),
            uniform_in(&mut v, -box_half, box_half),
            uniform_in(&mut v, -box_half, box_half),
        ]);
    }

    let pair = TrainingPair {
        reference,
        moving,
        gold,
        voi_points,
    };
    pair.validate()?;
    Ok(pair)
}

/// Per-point distance between gold- and estimate-transformed coordinates.
pub fn tre(gold: &RigidParams, est: &RigidParams, voi_points: &[[f64; 3]]) -> Vec<f64> {
    voi_points
        .iter()
        .map(|&x| {
            let a = apply(gold, x);
            let b = apply(est, x);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Experiment sweep.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub phantom: PhantomSpec,
    pub pairs: usize,
    /// Seed driving phantom generation (pair p uses mix(phantom_seed, p)).
    pub phantom_seed: u64,
    /// Registration seeds; every (sampler, rate, pair) cell runs once per
    /// entry. Mandatory for reproducibility.
    pub trial_seeds: Vec<u64>,
    pub samplers: Vec<SamplerKind>,
    pub rates: Vec<f64>,
    /// Base registration settings (sampler, rate and seed are overridden
    /// per run).
    pub registration: RegistrationConfig,
    /// Worker threads for the sweep; 0 uses the rayon default.
    pub jobs: usize,
    /// Write wall times as zero so repeated runs are byte-identical.
    pub zero_time_in_outputs: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            phantom: PhantomSpec::default(),
            pairs: 10,
            phantom_seed: 1,
            trial_seeds: vec![1, 2, 3],
            samplers: vec![
                SamplerKind::VspfHeuristic,
                SamplerKind::Urs,
                SamplerKind::Gms,
                SamplerKind::Gm,
            ],
            rates: vec![0.001, 0.003, 0.01, 0.05],
            registration: RegistrationConfig::default(),
            jobs: 0,
            zero_time_in_outputs: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub sampler: String,
    pub rate: f64,
    pub pair_id: usize,
    pub seed: u64,
    pub failed: bool,
    /// None when the registration itself threw.
    pub max_tre_mm: Option<f64>,
    pub mean_tre_mm: Option<f64>,
    pub wall_time_s: f64,
    pub tres_mm: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub sampler: String,
    pub rate: f64,
    pub failure_count: usize,
    pub total_runs: usize,
    pub failure_rate: f64,
    /// Mean TRE over all VOIs of the non-failed runs; None when every run
    /// failed.
    pub mtre_mm: Option<f64>,
    pub mean_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: BenchConfig,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

/// Aggregates per-run records into per-(sampler, rate) summaries, keeping
/// the order in which cells first appear.
pub fn summarize(runs: &[RunRecord]) -> Vec<CellSummary> {
    let mut order: Vec<(String, f64)> = Vec::new();
    for r in runs {
        if !order.iter().any(|(s, rt)| *s == r.sampler && *rt == r.rate) {
            order.push((r.sampler.clone(), r.rate));
        }
    }
    order
        .into_iter()
        .map(|(sampler, rate)| {
            let cell: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.sampler == sampler && r.rate == rate)
                .collect();
            let total_runs = cell.len();
            let failure_count = cell.iter().filter(|r| r.failed).count();
            let ok: Vec<&&RunRecord> = cell.iter().filter(|r| !r.failed).collect();
            let mtre_mm = if ok.is_empty() {
                None
            } else {
                let (sum, count) = ok.iter().fold((0.0f64, 0usize), |(s, c), r| {
                    (s + r.tres_mm.iter().sum::<f64>(), c + r.tres_mm.len())
                });
                Some(sum / count as f64)
            };
            let mean_time_s =
                cell.iter().map(|r| r.wall_time_s).sum::<f64>() / total_runs.max(1) as f64;
            CellSummary {
                sampler,
                rate,
                failure_count,
                total_runs,
                failure_rate: failure_count as f64 / total_runs.max(1) as f64,
                mtre_mm,
                mean_time_s,
            }
        })
        .collect()
}

/// Runs the full (sampler, rate, pair, seed) sweep. Individual registration
/// failures (thrown or above the 10 mm criterion) are recorded as data, not
/// errors.
pub fn run_experiment(cfg: &BenchConfig) -> Result<ExperimentReport> {
    if cfg.pairs == 0 {
        return Err(Error::Config("need at least one phantom pair".into()));
    }
    if cfg.trial_seeds.is_empty() {
        return Err(Error::Config("trial_seeds must not be empty".into()));
    }
    cfg.phantom.validate()?;
    cfg.registration.validate()?;

    let pairs: Vec<TrainingPair> = (0..cfg.pairs)
        .map(|p| make_phantom_pair(&cfg.phantom, rng::mix(cfg.phantom_seed, p as u64)))
        .collect::<Result<_>>()?;

    struct RunSpec {
        sampler_idx: usize,
        rate_idx: usize,
        pair_id: usize,
        seed: u64,
    }
    let mut specs = Vec::new();
    for (sampler_idx, _) in cfg.samplers.iter().enumerate() {
        for (rate_idx, _) in cfg.rates.iter().enumerate() {
            for pair_id in 0..cfg.pairs {
                for &seed in &cfg.trial_seeds {
                    specs.push(RunSpec {
                        sampler_idx,
                        rate_idx,
                        pair_id,
                        seed,
                    });
                }
            }
        }
    }

    let execute = |spec: &RunSpec| -> RunRecord {
        let sampler = cfg.samplers[spec.sampler_idx];
        let rate = cfg.rates[spec.rate_idx];
        let pair = &pairs[spec.pair_id];
        let run_seed = rng::mix(
            rng::mix(rng::mix(spec.seed, spec.sampler_idx as u64), spec.rate_idx as u64),
            spec.pair_id as u64,
        );
        let reg_cfg = RegistrationConfig {
            sampler_kind: sampler,
            sampling_rate: rate,
            seed: run_seed,
            ..cfg.registration.clone()
        };
        let started = std::time::Instant::now();
        let outcome = register(&pair.reference, &pair.moving, &reg_cfg);
        let wall = if cfg.zero_time_in_outputs {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        };
        match outcome {
            Ok(result) => {
                let tres = tre(&pair.gold, &result.theta, &pair.voi_points);
                let max = tres.iter().cloned().fold(0.0f64, f64::max);
                let mean = tres.iter().sum::<f64>() / tres.len() as f64;
                RunRecord {
                    sampler: sampler.as_str().to_string(),
                    rate,
                    pair_id: spec.pair_id,
                    seed: spec.seed,
                    failed: max > FAILURE_TRE_MM,
                    max_tre_mm: Some(max),
                    mean_tre_mm: Some(mean),
                    wall_time_s: wall,
                    tres_mm: tres,
                }
            }
            Err(_) => RunRecord {
                sampler: sampler.as_str().to_string(),
                rate,
                pair_id: spec.pair_id,
                seed: spec.seed,
                failed: true,
                max_tre_mm: None,
                mean_tre_mm: None,
                wall_time_s: wall,
                tres_mm: Vec::new(),
            },
        }
    };

    let runs: Vec<RunRecord> = if cfg.jobs == 1 {
        specs.iter().map(execute).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| specs.par_iter().map(execute).collect())
    };

    let cells = summarize(&runs);
    Ok(ExperimentReport {
        config: cfg.clone(),
        runs,
        cells,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentReport {
    /// Per-run CSV: sampler,rate,pair_id,seed,failed,max_tre_mm,mean_tre_mm,wall_time_s
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("sampler,rate,pair_id,seed,failed,max_tre_mm,mean_tre_mm,wall_time_s\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.sampler,
                r.rate,
                r.pair_id,
                r.seed,
                r.failed as u8,
                fmt_opt(r.max_tre_mm),
                fmt_opt(r.mean_tre_mm),
                r.wall_time_s
            );
        }
        out
    }

    /// Aggregate CSV: sampler,rate,failure_rate,mtre_mm,mean_time_s
    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("sampler,rate,failure_rate,mtre_mm,mean_time_s\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.sampler,
                c.rate,
                c.failure_rate,
                fmt_opt(c.mtre_mm),
                c.mean_time_s
            );
        }
        out
    }

    /// Writes runs.csv, aggregate.csv and report.json into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let runs = dir.join("runs.csv");
        std::fs::write(&runs, self.runs_csv()).map_err(|e| Error::io(&runs, e))?;
        let agg = dir.join("aggregate.csv");
        std::fs::write(&agg, self.aggregate_csv()).map_err(|e| Error::io(&agg, e))?;
        let json = dir.join("report.json");
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    pub fn cell(&self, sampler: &str, rate: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.sampler == sampler && c.rate == rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gold bounds shrink with the phantom so VOI points stay inside both
    /// extents under the gold transform.
    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            size: 24,
            max_translation_mm: 4.0,
            max_rotation_rad: 0.1,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn pairs_are_deterministic() {
        let spec = small_spec();
        let a = make_phantom_pair(&spec, 7).unwrap();
        let b = make_phantom_pair(&spec, 7).unwrap();
        assert_eq!(a.reference.data, b.reference.data);
        assert_eq!(a.moving.data, b.moving.data);
        assert_eq!(a.gold, b.gold);
        assert_eq!(a.voi_points, b.voi_points);
        let c = make_phantom_pair(&spec, 8).unwrap();
        assert_ne!(a.gold, c.gold);
    }

    #[test]
    fn identity_bounds_and_zero_noise_reproduce_remapped_reference() {
        let spec = PhantomSpec {
            size: 24,
            max_translation_mm: 0.0,
            max_rotation_rad: 0.0,
            noise_sigma: 0.0,
            ..PhantomSpec::default()
        };
        let pair = make_phantom_pair(&spec, 3).unwrap();
        assert_eq!(pair.gold, RigidParams::default());
        for (m, r) in pair.moving.data.iter().zip(&pair.reference.data) {
            let expect = spec.apply_remap(*r);
            assert!((m - expect).abs() < 1e-6, "{m} vs {expect}");
        }
    }

    #[test]
    fn gold_always_within_bounds() {
        let spec = small_spec();
        for seed in 0..1000u64 {
            let root = rng::mix(spec.structure_seed, seed);
            let mut g = unit_stream(rng::mix(root, 2));
            let t = spec.max_translation_mm;
            let r = spec.max_rotation_rad;
            let gold = RigidParams::new(
                [
                    uniform_in(&mut g, -t, t),
                    uniform_in(&mut g, -t, t),
                    uniform_in(&mut g, -t, t),
                ],
                [
                    uniform_in(&mut g, -r, r),
                    uniform_in(&mut g, -r, r),
                    uniform_in(&mut g, -r, r),
                ],
            );
            for a in 0..3 {
                assert!(gold.t[a].abs() <= t);
                assert!(gold.r[a].abs() <= r);
            }
        }
        // Spot-check that the full constructor uses the same stream.
        let pair = make_phantom_pair(&spec, 123).unwrap();
        for a in 0..3 {
            assert!(pair.gold.t[a].abs() <= spec.max_translation_mm);
            assert!(pair.gold.r[a].abs() <= spec.max_rotation_rad);
        }
    }

    #[test]
    fn tre_examples() {
        let gold = RigidParams::new([1.0, 2.0, 3.0], [0.1, -0.05, 0.2]);
        let points = [[1.0, 2.0, 3.0], [-4.0, 0.5, 2.0]];
        let zeros = tre(&gold, &gold, &points);
        assert!(zeros.iter().all(|&d| d == 0.0));

        let shifted = RigidParams::new(
            [gold.t[0] + 1.0, gold.t[1], gold.t[2]],
            gold.r,
        );
        for d in tre(&gold, &shifted, &points) {
            assert!((d - 1.0).abs() < 1e-12);
        }

        // Independent recomputation oracle.
        let est = RigidParams::new([0.3, -0.2, 0.9], [0.02, 0.07, -0.1]);
        let got = tre(&gold, &est, &points);
        for (i, &x) in points.iter().enumerate() {
            let a = apply(&gold, x);
            let b = apply(&est, x);
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            assert!((got[i] - d).abs() < 1e-12);
        }
    }

    #[test]
    fn summarize_excludes_failures_from_mtre() {
        let mk = |failed: bool, tres: Vec<f64>| RunRecord {
            sampler: "urs".into(),
            rate: 0.01,
            pair_id: 0,
            seed: 0,
            failed,
            max_tre_mm: tres.iter().cloned().fold(None, |m: Option<f64>, v| {
                Some(m.map_or(v, |m| m.max(v)))
            }),
            mean_tre_mm: None,
            wall_time_s: 1.0,
            tres_mm: tres,
        };
        let runs = vec![
            mk(true, vec![15.0, 15.0]),
            mk(false, vec![0.5, 0.5]),
            mk(false, vec![0.5, 0.5]),
        ];
        let cells = summarize(&runs);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].failure_count, 1);
        assert_eq!(cells[0].total_runs, 3);
        assert_eq!(cells[0].mtre_mm, Some(0.5));
    }

    #[test]
    fn aggregates_reproducible_from_runs() {
        let spec = small_spec();
        let cfg = BenchConfig {
            phantom: spec,
            pairs: 2,
            trial_seeds: vec![1],
            samplers: vec![SamplerKind::Urs],
            rates: vec![0.1],
            registration: RegistrationConfig {
                levels: 2,
                ..RegistrationConfig::default()
            },
            jobs: 1,
            zero_time_in_outputs: true,
            ..BenchConfig::default()
        };
        let report = run_experiment(&cfg).unwrap();
        let recomputed = summarize(&report.runs);
        let a = serde_json::to_string(&report.cells).unwrap();
        let b = serde_json::to_string(&recomputed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn experiment_is_byte_deterministic() {
        let cfg = BenchConfig {
            phantom: small_spec(),
            pairs: 2,
            trial_seeds: vec![4, 9],
            samplers: vec![SamplerKind::Urs, SamplerKind::VspfHeuristic],
            rates: vec![0.05],
            registration: RegistrationConfig::default(),
            jobs: 0,
            zero_time_in_outputs: true,
            ..BenchConfig::default()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.runs_csv(), b.runs_csv());
        assert_eq!(a.aggregate_csv(), b.aggregate_csv());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
