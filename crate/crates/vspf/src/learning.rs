//! Hyperparameter learning by empirical target registration error (ETRE):
//! per-level P_h for the uncertainty-driven sampler and per-level beta for
//! the GMS+URS mixture, found by coarse-to-fine exhaustive grid search over
//! seeded Monte-Carlo registration trials.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::registration::{register_to_level, RegistrationConfig, SamplerKind};
use crate::rng;
use crate::transform::{apply, RigidMap, RigidParams};
use crate::volume::Volume;

/// One training image pair with its gold transform and VOI coordinates.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub reference: Volume,
    pub moving: Volume,
    pub gold: RigidParams,
    /// Evaluation coordinates in mm; at least 6.
    pub voi_points: Vec<[f64; 3]>,
}

impl TrainingPair {
    pub fn validate(&self) -> Result<()> {
        if self.voi_points.len() < 6 {
            return Err(Error::InvalidArgument(format!(
                "need at least 6 VOI points, got {}",
                self.voi_points.len()
            )));
        }
        self.gold.validate()?;
        let inside = |vol: &Volume, p: [f64; 3]| -> bool {
            let u = vol.to_voxel_coords(p);
            (0..3).all(|a| u[a] >= 0.0 && u[a] <= (vol.dims[a] - 1) as f64)
        };
        let gold_map = RigidMap::new(self.gold, self.reference.physical_center());
        for &p in &self.voi_points {
            if !inside(&self.reference, p) {
                return Err(Error::InvalidArgument(format!(
                    "VOI point {p:?} outside the reference extent"
                )));
            }
            if !inside(&self.moving, gold_map.map_point(p)) {
                return Err(Error::InvalidArgument(format!(
                    "VOI point {p:?} leaves the moving extent under the gold transform"
                )));
            }
        }
        Ok(())
    }
}

/// Which hyperparameter a schedule holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnedParam {
    Ph,
    Beta,
}

/// Grid-search outcome for one resolution level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedEntry {
    pub level: usize,
    pub value: f64,
    /// Every evaluated (candidate, ETRE) point, in candidate order.
    pub etre_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedSchedule {
    pub param: LearnedParam,
    /// Entries in learning order: coarsest level first.
    pub entries: Vec<LearnedEntry>,
}

impl LearnedSchedule {
    /// Per-level values indexed by level-1, for RegistrationConfig.
    pub fn values_per_level(&self, levels: usize) -> Result<Vec<f64>> {
        let mut out = vec![f64::NAN; levels];
        for e in &self.entries {
            if e.level == 0 || e.level > levels {
                return Err(Error::Config(format!("schedule level {} outside 1..={levels}", e.level)));
            }
            out[e.level - 1] = e.value;
        }
        if out.iter().any(|v| v.is_nan()) {
            return Err(Error::Config("schedule does not cover every level".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

/// Empirical target registration error: mean over pairs and trials of the
/// summed squared distances between gold- and estimate-transformed VOI
/// coordinates (mm^2).
pub fn etre(pairs: &[TrainingPair], estimates: &[Vec<RigidParams>]) -> Result<f64> {
    if pairs.is_empty() || estimates.len() != pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "need estimates for each of the {} pairs, got {}",
            pairs.len(),
            estimates.len()
        )));
    }
    let mut total = 0.0;
    let mut trials = 0usize;
    for (pair, pair_estimates) in pairs.iter().zip(estimates) {
        if pair_estimates.is_empty() {
            return Err(Error::InvalidArgument("a pair has no trials".into()));
        }
        for est in pair_estimates {
            let mut sq = 0.0;
            for &x in &pair.voi_points {
                let a = apply(&pair.gold, x);
                let b = apply(est, x);
                sq += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            }
            total += sq;
            trials += 1;
        }
    }
    Ok(total / trials as f64)
}

/// Candidate grid {step, 2 step, ..., 1}, optionally including 0.
pub fn candidate_grid(grid_step: f64, include_zero: bool) -> Result<Vec<f64>> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step {grid_step} outside (0, 1]")));
    }
    let count = (1.0 / grid_step).round() as usize;
    let mut grid = Vec::with_capacity(count + 1);
    if include_zero {
        grid.push(0.0);
    }
    for k in 1..=count {
        grid.push((k as f64 * grid_step).min(1.0));
    }
    Ok(grid)
}

/// Exhaustive grid search over candidates evaluated with seeded Monte-Carlo
/// registration trials. The runner maps (pair index, trial index, seed,
/// candidate) to a parameter estimate; a thrown run poisons the candidate
/// with ETRE = +inf. Ties resolve toward the smaller candidate.
pub fn grid_search<F>(
    pairs: &[TrainingPair],
    level: usize,
    candidates: &[f64],
    trials: usize,
    master_seed: u64,
    mut runner: F,
) -> Result<LearnedEntry>
where
    F: FnMut(usize, usize, u64, f64) -> Result<RigidParams>,
{
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let mut curve = Vec::with_capacity(candidates.len());
    for (ci, &cand) in candidates.iter().enumerate() {
        let mut estimates: Vec<Vec<RigidParams>> = Vec::with_capacity(pairs.len());
        let mut poisoned = false;
        'pairs: for (pi, _) in pairs.iter().enumerate() {
            let mut per_pair = Vec::with_capacity(trials);
            for trial in 0..trials {
                // Disjoint deterministic streams per (pair, trial, candidate).
                let seed = rng::mix(
                    rng::mix(rng::mix(master_seed, pi as u64), trial as u64),
                    ci as u64,
                );
                match runner(pi, trial, seed, cand) {
                    Ok(est) => per_pair.push(est),
                    Err(_) => {
                        poisoned = true;
                        break 'pairs;
                    }
                }
            }
            estimates.push(per_pair);
        }
        let score = if poisoned {
            f64::INFINITY
        } else {
            etre(pairs, &estimates)?
        };
        curve.push((cand, score));
    }
    let (best_cand, best_score) = curve
        .iter()
        .fold(None::<(f64, f64)>, |best, &(c, s)| match best {
            Some((bc, bs)) if bs <= s => Some((bc, bs)),
            _ => Some((c, s)),
        })
        .unwrap();
    if best_score.is_infinite() {
        return Err(Error::Infeasible("every candidate failed".into()));
    }
    Ok(LearnedEntry {
        level,
        value: best_cand,
        etre_curve: curve,
    })
}

fn learn_level(
    pairs: &[TrainingPair],
    level: usize,
    grid_step: f64,
    trials: usize,
    base_cfg: &RegistrationConfig,
    param: LearnedParam,
    learned_so_far: &[LearnedEntry],
) -> Result<LearnedEntry> {
    for pair in pairs {
        pair.validate()?;
    }
    base_cfg.validate()?;
    let candidates = candidate_grid(grid_step, param == LearnedParam::Beta)?;
    let levels = base_cfg.levels;
    // Per-level vector: coarser levels fixed at already-learned values,
    // this level swept, finer levels never reached (stop at `level`).
    let mut fixed = vec![1.0; levels];
    for e in learned_so_far {
        if e.level > level && e.level <= levels {
            fixed[e.level - 1] = e.value;
        }
    }
    let runner = |pi: usize, _trial: usize, seed: u64, cand: f64| -> Result<RigidParams> {
        let mut values = fixed.clone();
        values[level - 1] = cand;
        let mut cfg = base_cfg.clone();
        cfg.seed = seed;
        match param {
            LearnedParam::Ph => {
                cfg.sampler_kind = SamplerKind::VspfLearned;
                cfg.p_high_per_level = Some(values);
            }
            LearnedParam::Beta => {
                cfg.sampler_kind = SamplerKind::GmsUrs;
                cfg.beta_per_level = Some(values);
            }
        }
        let pair = &pairs[pi];
        Ok(register_to_level(&pair.reference, &pair.moving, &cfg, level)?.theta)
    };
    grid_search(pairs, level, &candidates, trials, base_cfg.seed, runner)
}

/// Learns P_h for one level; coarser levels must already be present in
/// `learned_so_far`.
pub fn learn_ph(
    pairs: &[TrainingPair],
    level: usize,
    grid_step: f64,
    trials: usize,
    base_cfg: &RegistrationConfig,
    learned_so_far: &[LearnedEntry],
) -> Result<LearnedEntry> {
    learn_level(pairs, level, grid_step, trials, base_cfg, LearnedParam::Ph, learned_so_far)
}

/// Learns the GMS+URS mixing weight for one level; candidates include both
/// endpoints 0 (pure URS) and 1 (pure GMS).
pub fn learn_beta(
    pairs: &[TrainingPair],
    level: usize,
    grid_step: f64,
    trials: usize,
    base_cfg: &RegistrationConfig,
    learned_so_far: &[LearnedEntry],
) -> Result<LearnedEntry> {
    learn_level(pairs, level, grid_step, trials, base_cfg, LearnedParam::Beta, learned_so_far)
}

/// Full coarse-to-fine schedule: learns level K first, freezes it, then
/// proceeds toward level 1.
pub fn learn_schedule(
    pairs: &[TrainingPair],
    param: LearnedParam,
    grid_step: f64,
    trials: usize,
    base_cfg: &RegistrationConfig,
) -> Result<LearnedSchedule> {
    let mut entries: Vec<LearnedEntry> = Vec::new();
    for level in (1..=base_cfg.levels).rev() {
        let entry = match param {
            LearnedParam::Ph => learn_ph(pairs, level, grid_step, trials, base_cfg, &entries)?,
            LearnedParam::Beta => learn_beta(pairs, level, grid_step, trials, base_cfg, &entries)?,
        };
        entries.push(entry);
    }
    Ok(LearnedSchedule { param, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{make_phantom_pair, PhantomSpec};

    fn stub_pairs(n: usize) -> Vec<TrainingPair> {
        let spec = PhantomSpec {
            size: 16,
            max_translation_mm: 2.0,
            max_rotation_rad: 0.05,
            ..PhantomSpec::default()
        };
        (0..n)
            .map(|i| make_phantom_pair(&spec, 100 + i as u64).unwrap())
            .collect()
    }

    #[test]
    fn etre_zero_for_gold_estimates() {
        let pairs = stub_pairs(2);
        let estimates: Vec<Vec<RigidParams>> = pairs.iter().map(|p| vec![p.gold]).collect();
        assert_eq!(etre(&pairs, &estimates).unwrap(), 0.0);
    }

    #[test]
    fn etre_unit_shift_sums_points() {
        let pairs = stub_pairs(1);
        let gold = pairs[0].gold;
        let shifted = RigidParams::new([gold.t[0] + 1.0, gold.t[1], gold.t[2]], gold.r);
        let q = etre(&pairs, &[vec![shifted]]).unwrap();
        // 8 VOI points, each displaced exactly 1 mm: sum of squares = 8.
        assert!((q - 8.0).abs() < 1e-9, "{q}");
    }

    #[test]
    fn etre_matches_recomputation_oracle() {
        let pairs = stub_pairs(3);
        let estimates: Vec<Vec<RigidParams>> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                (0..2)
                    .map(|u| {
                        RigidParams::new(
                            [
                                p.gold.t[0] + 0.1 * (i as f64 + 1.0),
                                p.gold.t[1] - 0.05 * u as f64,
                                p.gold.t[2],
                            ],
                            [p.gold.r[0], p.gold.r[1] + 0.01, p.gold.r[2]],
                        )
                    })
                    .collect()
            })
            .collect();
        let got = etre(&pairs, &estimates).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for (p, ests) in pairs.iter().zip(&estimates) {
            for e in ests {
                for &x in &p.voi_points {
                    let a = apply(&p.gold, x);
                    let b = apply(e, x);
                    total += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
                }
                count += 1;
            }
        }
        let oracle = total / count as f64;
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn grid_step_001_yields_100_candidates() {
        assert_eq!(candidate_grid(0.01, false).unwrap().len(), 100);
        assert_eq!(candidate_grid(0.01, true).unwrap().len(), 101);
        let g = candidate_grid(0.01, true).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    /// Stub registration with an error planted to vanish at P_h = 0.30.
    #[test]
    fn grid_search_recovers_planted_optimum() {
        let pairs = stub_pairs(2);
        let candidates = candidate_grid(0.01, false).unwrap();
        let runner = |pi: usize, _trial: usize, seed: u64, cand: f64| -> Result<RigidParams> {
            let gold = pairs[pi].gold;
            let bias = (cand - 0.30).abs();
            // Seeded jitter well below the grid resolution so the argmin is
            // untouched but trials differ.
            let jitter = 1e-4 * (rng::unit_f64(seed, 0) - 0.5);
            Ok(RigidParams::new(
                [gold.t[0] + bias + jitter, gold.t[1], gold.t[2]],
                gold.r,
            ))
        };
        let entry = grid_search(&pairs, 2, &candidates, 3, 99, runner).unwrap();
        assert_eq!(entry.value, 0.30);
        assert_eq!(entry.etre_curve.len(), 100);
        // Learned value minimizes the stored curve.
        let min = entry
            .etre_curve
            .iter()
            .map(|&(_, e)| e)
            .fold(f64::INFINITY, f64::min);
        let at_value = entry
            .etre_curve
            .iter()
            .find(|&&(c, _)| c == entry.value)
            .unwrap()
            .1;
        assert_eq!(min, at_value);
    }

    #[test]
    fn grid_search_ties_take_smaller_candidate() {
        let pairs = stub_pairs(1);
        let runner = |pi: usize, _t: usize, _s: u64, _c: f64| -> Result<RigidParams> {
            Ok(pairs[pi].gold)
        };
        let entry = grid_search(&pairs, 1, &[0.2, 0.4, 0.6], 1, 1, runner).unwrap();
        assert_eq!(entry.value, 0.2);
    }

    #[test]
    fn grid_search_poisons_thrown_candidates() {
        let pairs = stub_pairs(1);
        let runner = |pi: usize, _t: usize, _s: u64, c: f64| -> Result<RigidParams> {
            if c < 0.5 {
                Err(Error::Optimization("boom".into()))
            } else {
                Ok(pairs[pi].gold)
            }
        };
        let entry = grid_search(&pairs, 1, &[0.25, 0.75], 1, 1, runner).unwrap();
        assert_eq!(entry.value, 0.75);
        assert!(entry.etre_curve[0].1.is_infinite());
    }

    #[test]
    fn grid_search_is_deterministic() {
        let pairs = stub_pairs(2);
        let run = || {
            let runner = |pi: usize, _t: usize, seed: u64, cand: f64| -> Result<RigidParams> {
                let gold = pairs[pi].gold;
                let noise = 0.3 * (rng::unit_f64(seed, 1) - 0.5) + (cand - 0.4).powi(2);
                Ok(RigidParams::new(
                    [gold.t[0] + noise, gold.t[1], gold.t[2]],
                    gold.r,
                ))
            };
            grid_search(&pairs, 2, &candidate_grid(0.05, false).unwrap(), 3, 7, runner).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.value, b.value);
        assert_eq!(a.etre_curve, b.etre_curve);
    }

    #[test]
    fn schedule_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let sched = LearnedSchedule {
            param: LearnedParam::Ph,
            entries: vec![
                LearnedEntry {
                    level: 2,
                    value: 0.24,
                    etre_curve: vec![(0.1, 3.0), (0.24, 1.0)],
                },
                LearnedEntry {
                    level: 1,
                    value: 0.6,
                    etre_curve: vec![(0.6, 0.5)],
                },
            ],
        };
        let p = dir.path().join("sched.json");
        sched.save(&p).unwrap();
        let back = LearnedSchedule::load(&p).unwrap();
        assert_eq!(back.param, sched.param);
        assert_eq!(back.entries.len(), 2);
        assert_eq!(back.values_per_level(2).unwrap(), vec![0.6, 0.24]);
    }
}
