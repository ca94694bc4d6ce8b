//! Three-arm formulation comparison: the hand-written ground truth, the
//! formulation produced by a scripted agent session, and a manual
//! formulation missing the RSMA common-rate constraint, each solved by PPO
//! over the same seeds and instance sets.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use formulink_core::formulation::{
    diff, ground_truth, manual_flawed, parse_formulation, FormulationDiff, OptimizationFormulation,
};
use formulink_netsim::env::{KindSet, NetworkInstance};
use formulink_netsim::ppo::{
    enforced_kinds, held_out_set, train_with_kinds, training_pool, SolveReport, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, SCHEMA_VERSION};

/// Required ratio median(iai) / median(real).
pub const IAI_RATIO: f64 = 0.95;
/// Largest allowed ratio median(manual) / median(real).
pub const MANUAL_RATIO: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Real,
    Iai,
    Manual,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Real, Arm::Iai, Arm::Manual];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Real => "real",
            Arm::Iai => "iai",
            Arm::Manual => "manual",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub final_score: f64,
    pub curve: Vec<f64>,
    pub term_counts: BTreeMap<String, u64>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub enforced_kinds: Vec<String>,
    pub runs: Vec<SeedRun>,
    pub median_final_score: f64,
    /// Per-iteration median over seeds of the learning curves.
    pub median_curve: Vec<f64>,
}

impl ArmResult {
    pub fn scores(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_score).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingVerdict {
    /// median(real) ≥ median(iai)
    pub real_ge_iai: bool,
    /// median(iai) ≥ 0.95 · median(real)
    pub iai_near_real: bool,
    /// median(manual) ≤ 0.9 · median(real)
    pub manual_below_real: bool,
    /// 0.95 · median(real) > median(manual)
    pub iai_bound_above_manual: bool,
    pub holds: bool,
}

impl OrderingVerdict {
    pub fn from_medians(real: f64, iai: f64, manual: f64) -> Self {
        let real_ge_iai = real >= iai;
        let iai_near_real = iai >= IAI_RATIO * real;
        let manual_below_real = manual <= MANUAL_RATIO * real;
        let iai_bound_above_manual = IAI_RATIO * real > manual;
        Self {
            real_ge_iai,
            iai_near_real,
            manual_below_real,
            iai_bound_above_manual,
            holds: real_ge_iai && iai_near_real && manual_below_real && iai_bound_above_manual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    pub training_instances: usize,
    pub held_out_instances: usize,
    pub arms: Vec<ArmResult>,
    pub verdict: OrderingVerdict,
    /// Differences of the iai and manual formulations from the real one.
    pub diffs: BTreeMap<Arm, FormulationDiff>,
}

impl ComparisonReport {
    pub fn arm(&self, arm: Arm) -> &ArmResult {
        self.arms
            .iter()
            .find(|a| a.arm == arm)
            .expect("every report has all three arms")
    }

    pub fn median(&self, arm: Arm) -> f64 {
        self.arm(arm).median_final_score
    }
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

type RunKey = (Vec<String>, u64);

/// Trains arms on shared instance sets. Training depends only on the
/// enforced kinds and the seed, so identical pairs are solved once and the
/// result reused.
pub struct Comparator<'a> {
    config: TrainConfig,
    pool: &'a [NetworkInstance],
    held_out: &'a [NetworkInstance],
    cache: Mutex<BTreeMap<RunKey, SolveReport>>,
}

impl Comparator<'static> {
    /// Uses the shared training pool and held-out set.
    pub fn new(config: TrainConfig) -> Self {
        Self::with_instances(config, training_pool(), held_out_set())
    }
}

impl<'a> Comparator<'a> {
    pub fn with_instances(
        config: TrainConfig,
        pool: &'a [NetworkInstance],
        held_out: &'a [NetworkInstance],
    ) -> Self {
        Self {
            config,
            pool,
            held_out,
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Number of distinct trainings performed so far.
    pub fn trainings(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn solve(&self, kinds: &KindSet, seed: u64) -> Result<SolveReport, HarnessError> {
        let key = (kinds.iter().cloned().collect::<Vec<_>>(), seed);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let cfg = TrainConfig {
            seed,
            ..self.config.clone()
        };
        let (report, _) = train_with_kinds(self.pool, self.held_out, kinds, &cfg)?;
        log::info!(
            "trained kinds={:?} seed={seed}: final {:.4} in {:.1}s",
            key.0,
            report.final_score,
            report.wall_time_secs
        );
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, report.clone());
        Ok(report)
    }

    fn arm(
        &self,
        arm: Arm,
        formulation: &OptimizationFormulation,
        seeds: &[u64],
    ) -> Result<ArmResult, HarnessError> {
        let kinds = enforced_kinds(formulation);
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let r = self.solve(&kinds, seed)?;
            runs.push(SeedRun {
                seed,
                final_score: r.final_score,
                curve: r.curve,
                term_counts: r.term_counts,
                wall_time_secs: r.wall_time_secs,
            });
        }
        let finals: Vec<f64> = runs.iter().map(|r| r.final_score).collect();
        let iterations = runs.iter().map(|r| r.curve.len()).min().unwrap_or(0);
        let median_curve = (0..iterations)
            .map(|i| median(&runs.iter().map(|r| r.curve[i]).collect::<Vec<_>>()))
            .collect();
        Ok(ArmResult {
            arm,
            enforced_kinds: kinds.into_iter().collect(),
            median_final_score: median(&finals),
            median_curve,
            runs,
        })
    }

    /// Solves all three arms over `seeds`. `iai_text` is the formulation
    /// text of a finished agent session.
    pub fn compare(
        &self,
        seeds: &[u64],
        iai_text: Option<&str>,
    ) -> Result<ComparisonReport, HarnessError> {
        if seeds.is_empty() {
            return Err(HarnessError::NoSeeds);
        }
        let text = iai_text.ok_or_else(|| {
            HarnessError::FormulationUnavailable("no finished agent session".into())
        })?;
        let iai = parse_formulation(text)?;
        let real = ground_truth();
        let manual = manual_flawed();
        let arms = vec![
            self.arm(Arm::Real, &real, seeds)?,
            self.arm(Arm::Iai, &iai, seeds)?,
            self.arm(Arm::Manual, &manual, seeds)?,
        ];
        let verdict = OrderingVerdict::from_medians(
            arms[0].median_final_score,
            arms[1].median_final_score,
            arms[2].median_final_score,
        );
        let diffs = BTreeMap::from([
            (Arm::Iai, diff(&iai, &real)),
            (Arm::Manual, diff(&manual, &real)),
        ]);
        Ok(ComparisonReport {
            schema_version: SCHEMA_VERSION,
            seeds: seeds.to_vec(),
            config: self.config.clone(),
            training_instances: self.pool.len(),
            held_out_instances: self.held_out.len(),
            arms,
            verdict,
            diffs,
        })
    }
}

/// One-shot comparison on the shared instance sets.
pub fn run_comparison(
    seeds: &[u64],
    config: TrainConfig,
    iai_text: Option<&str>,
) -> Result<ComparisonReport, HarnessError> {
    Comparator::new(config).compare(seeds, iai_text)
}
