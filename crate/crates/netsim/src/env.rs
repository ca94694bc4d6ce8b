//! Channels, rates, harvested energy and energy efficiency.
//!
//! The base station (Nt antennas) sends one common stream and one private
//! stream per user through a direct link and an M-element reflecting
//! surface. Each user splits received power between information decoding
//! (share ρ_k) and harvesting (share 1 − ρ_k), decodes the common stream
//! first and removes it perfectly before decoding its private stream.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

pub const POWER_BUDGET: &str = "power_budget";
pub const QOS_RATE: &str = "qos_rate";
pub const ENERGY_HARVEST: &str = "energy_harvest";
pub const RSMA_COMMON_RATE: &str = "rsma_common_rate";
pub const UNIT_MODULUS: &str = "unit_modulus";
pub const PS_RATIO_RANGE: &str = "ps_ratio_range";

/// Every constraint kind the environment knows, in catalog order.
pub const ALL_KINDS: [&str; 6] = [
    POWER_BUDGET,
    QOS_RATE,
    ENERGY_HARVEST,
    RSMA_COMMON_RATE,
    UNIT_MODULUS,
    PS_RATIO_RANGE,
];

/// Random feasible actions used to calibrate the harvesting floor.
pub const E_MIN_SAMPLES: usize = 1000;
pub const E_MIN_FRACTION: f64 = 0.5;

pub type KindSet = BTreeSet<String>;

pub fn all_kinds() -> KindSet {
    ALL_KINDS.iter().map(|k| k.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub nt: usize,
    pub m: usize,
    pub k: usize,
    /// Antenna noise power σ².
    pub noise_power: f64,
    /// Conversion noise power δ².
    pub conversion_noise: f64,
    /// Harvesting efficiency η.
    pub eh_efficiency: f64,
    /// Amplifier efficiency ξ.
    pub amp_efficiency: f64,
    pub circuit_power: f64,
    pub p_max: f64,
    pub r_min: f64,
    /// Penalty weight μ on constraint violations.
    pub penalty: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            nt: 4,
            m: 8,
            k: 2,
            noise_power: 1e-3,
            conversion_noise: 1e-3,
            eh_efficiency: 0.7,
            amp_efficiency: 0.35,
            circuit_power: 0.5,
            p_max: 1.0,
            r_min: 0.5,
            penalty: 10.0,
        }
    }
}

impl SystemParams {
    /// Length of the raw action vector the solver emits.
    pub fn action_dim(&self) -> usize {
        2 * self.nt * (self.k + 1) + self.k + self.m + self.k
    }

    /// Number of real channel coefficients.
    pub fn observation_dim(&self) -> usize {
        2 * (self.m * self.nt + self.k * self.m + self.k * self.nt)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("action contains a non-finite value in {0}")]
    NonFiniteAction(&'static str),
    #[error("unsupported instance format version {0}")]
    UnsupportedVersion(u32),
    #[error("instance JSON: {0}")]
    Json(String),
}

fn finite(mut v: impl Iterator<Item = f64>) -> bool {
    v.all(f64::is_finite)
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), EnvError> {
    if expected == got {
        Ok(())
    } else {
        Err(EnvError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

/// Row-major complex matrix, serialized as separate real and imaginary
/// arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixRepr", try_from = "MatrixRepr")]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl From<CMatrix> for MatrixRepr {
    fn from(m: CMatrix) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            re: m.data.iter().map(|z| z.re).collect(),
            im: m.data.iter().map(|z| z.im).collect(),
        }
    }
}

impl TryFrom<MatrixRepr> for CMatrix {
    type Error = String;

    fn try_from(r: MatrixRepr) -> Result<Self, String> {
        let n = r.rows * r.cols;
        if r.re.len() != n || r.im.len() != n {
            return Err(format!("{}x{} matrix needs {n} entries", r.rows, r.cols));
        }
        Ok(Self {
            rows: r.rows,
            cols: r.cols,
            data: r.re.into_iter().zip(r.im).map(|(a, b)| Complex64::new(a, b)).collect(),
        })
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| complex_gaussian(rng)).collect(),
        }
    }
}

/// Circularly-symmetric complex Gaussian with unit variance.
pub fn complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkInstance {
    pub version: u32,
    pub seed: u64,
    pub params: SystemParams,
    /// BS to surface, M × Nt.
    pub g: CMatrix,
    /// Surface to user k, K × M.
    pub h_r: CMatrix,
    /// BS to user k, K × Nt.
    pub h_d: CMatrix,
    /// Per-user harvested-energy floor.
    pub e_min: f64,
}

/// Draws only the channel matrices (no harvesting-floor calibration).
pub fn sample_channels(params: &SystemParams, rng: &mut ChaCha8Rng) -> (CMatrix, CMatrix, CMatrix) {
    let g = CMatrix::random(rng, params.m, params.nt);
    let h_r = CMatrix::random(rng, params.k, params.m);
    let h_d = CMatrix::random(rng, params.k, params.nt);
    (g, h_r, h_d)
}

pub fn sample_instance(seed: u64) -> NetworkInstance {
    sample_instance_with(SystemParams::default(), seed)
}

/// Channels from `seed`, then `e_min` set to half the median harvested
/// energy over random feasible actions drawn from the same stream.
pub fn sample_instance_with(params: SystemParams, seed: u64) -> NetworkInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g, h_r, h_d) = sample_channels(&params, &mut rng);
    let mut inst = NetworkInstance {
        version: INSTANCE_FORMAT_VERSION,
        seed,
        params,
        g,
        h_r,
        h_d,
        e_min: 0.0,
    };
    inst.e_min = E_MIN_FRACTION * median_harvest(&inst, &mut rng, E_MIN_SAMPLES);
    inst
}

/// A random feasible action: Gaussian precoders projected onto the power
/// budget, uniform splitting ratios and phases, zero common shares.
pub fn random_feasible_action(params: &SystemParams, rng: &mut ChaCha8Rng) -> Action {
    let mut a = Action {
        w_c: (0..params.nt).map(|_| complex_gaussian(rng)).collect(),
        w: (0..params.k)
            .map(|_| (0..params.nt).map(|_| complex_gaussian(rng)).collect())
            .collect(),
        rho: (0..params.k).map(|_| rng.random::<f64>()).collect(),
        theta: (0..params.m)
            .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
            .collect(),
        c: vec![0.0; params.k],
    };
    project_power(&mut a, params.p_max);
    a
}

fn median_harvest(inst: &NetworkInstance, rng: &mut ChaCha8Rng, samples: usize) -> f64 {
    let mut values = Vec::with_capacity(samples * inst.params.k);
    for _ in 0..samples {
        let a = random_feasible_action(&inst.params, rng);
        let r = evaluate(inst, &a, &KindSet::new()).expect("well-formed random action");
        values.extend(r.harvested);
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl NetworkInstance {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EnvError> {
        let inst: Self = serde_json::from_str(s).map_err(|e| EnvError::Json(e.to_string()))?;
        if inst.version != INSTANCE_FORMAT_VERSION {
            return Err(EnvError::UnsupportedVersion(inst.version));
        }
        let p = &inst.params;
        for (what, m, rows, cols) in [
            ("g", &inst.g, p.m, p.nt),
            ("h_r", &inst.h_r, p.k, p.m),
            ("h_d", &inst.h_d, p.k, p.nt),
        ] {
            check_len(what, rows * cols, m.rows * m.cols)?;
            check_len(what, cols, m.cols)?;
        }
        Ok(inst)
    }

    /// Channel coefficients flattened as (re, im) pairs: G, then h_r, then
    /// h_d, each row-major.
    pub fn channel_reals(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.params.observation_dim());
        for m in [&self.g, &self.h_r, &self.h_d] {
            for z in &m.data {
                out.push(z.re);
                out.push(z.im);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Common-stream precoder.
    pub w_c: Vec<Complex64>,
    /// Private precoders, one per user.
    pub w: Vec<Vec<Complex64>>,
    /// Information-decoding power share per user.
    pub rho: Vec<f64>,
    /// Surface phase shifts.
    pub theta: Vec<f64>,
    /// Common-rate share per user.
    pub c: Vec<f64>,
}

impl Action {
    pub fn transmit_power(&self) -> f64 {
        self.w_c.iter().map(|z| z.norm_sqr()).sum::<f64>()
            + self.w.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>()
    }

    fn check(&self, p: &SystemParams) -> Result<(), EnvError> {
        check_len("w_c", p.nt, self.w_c.len())?;
        check_len("w", p.k, self.w.len())?;
        for w in &self.w {
            check_len("w_k", p.nt, w.len())?;
        }
        check_len("rho", p.k, self.rho.len())?;
        check_len("theta", p.m, self.theta.len())?;
        check_len("c", p.k, self.c.len())?;
        if !finite(self.w_c.iter().chain(self.w.iter().flatten()).flat_map(|z| [z.re, z.im])) {
            return Err(EnvError::NonFiniteAction("precoders"));
        }
        if !finite(self.rho.iter().copied()) {
            return Err(EnvError::NonFiniteAction("rho"));
        }
        if !finite(self.theta.iter().copied()) {
            return Err(EnvError::NonFiniteAction("theta"));
        }
        if !finite(self.c.iter().copied()) {
            return Err(EnvError::NonFiniteAction("c"));
        }
        Ok(())
    }
}

/// Scales every precoder by `sqrt(p_max / P_tx)` when the budget is
/// exceeded.
pub fn project_power(action: &mut Action, p_max: f64) {
    let p = action.transmit_power();
    if p > p_max {
        let s = (p_max / p).sqrt();
        action.w_c.iter_mut().for_each(|z| *z *= s);
        action.w.iter_mut().flatten().for_each(|z| *z *= s);
    }
}

/// Conjugated effective channel rows `a_k = h_kᴴ = h_d,kᴴ + h_r,kᴴ Θ G`,
/// one Nt-vector per user.
pub fn effective_channel_rows(
    inst: &NetworkInstance,
    theta: &[f64],
) -> Result<Vec<Vec<Complex64>>, EnvError> {
    let p = &inst.params;
    check_len("theta", p.m, theta.len())?;
    let phases: Vec<Complex64> = theta.iter().map(|&t| Complex64::from_polar(1.0, t)).collect();
    Ok((0..p.k)
        .map(|k| {
            let mut row: Vec<Complex64> = inst.h_d.row(k).iter().map(|z| z.conj()).collect();
            for (m, phase) in phases.iter().enumerate() {
                let coef = inst.h_r.get(k, m).conj() * phase;
                for (n, r) in row.iter_mut().enumerate() {
                    *r += coef * inst.g.get(m, n);
                }
            }
            row
        })
        .collect())
}

/// Effective channel `h_k` (the conjugate of each row above).
pub fn effective_channel(
    inst: &NetworkInstance,
    theta: &[f64],
) -> Result<Vec<Vec<Complex64>>, EnvError> {
    Ok(effective_channel_rows(inst, theta)?
        .into_iter()
        .map(|r| r.into_iter().map(|z| z.conj()).collect())
        .collect())
}

fn gain(row: &[Complex64], w: &[Complex64]) -> f64 {
    row.iter().zip(w).map(|(a, b)| a * b).sum::<Complex64>().norm_sqr()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub private_rates: Vec<f64>,
    pub common_rates: Vec<f64>,
    /// Σ c_k, the common rate the action claims to deliver.
    pub delivered_common_rate: f64,
    pub received_power: Vec<f64>,
    /// Power routed to the decoder, ρ_k · P_rx,k.
    pub id_power: Vec<f64>,
    /// Power routed to the harvester, (1 − ρ_k) · P_rx,k.
    pub eh_power: Vec<f64>,
    pub harvested: Vec<f64>,
    pub transmit_power: f64,
    pub ee: f64,
    /// Strictly positive violation magnitudes over the full catalog.
    pub violations: BTreeMap<String, f64>,
    /// EE minus the penalty on every violation.
    pub score: f64,
    /// EE minus the penalty on violations of enforced kinds only.
    pub training_score: f64,
}

impl EvalReport {
    /// Penalized EE counting only the given kinds.
    pub fn score_for(&self, kinds: &KindSet, penalty: f64) -> f64 {
        let total: f64 = self
            .violations
            .iter()
            .filter(|(k, _)| kinds.contains(*k))
            .map(|(_, v)| v)
            .sum();
        self.ee - penalty * total
    }
}

/// Evaluates `action` on `inst`. Violations are always computed for every
/// kind; `enforced` only selects the terms in `training_score`.
pub fn evaluate(
    inst: &NetworkInstance,
    action: &Action,
    enforced: &KindSet,
) -> Result<EvalReport, EnvError> {
    let p = &inst.params;
    action.check(p)?;
    let rows = effective_channel_rows(inst, &action.theta)?;
    let k = p.k;
    let mut private_rates = Vec::with_capacity(k);
    let mut common_rates = Vec::with_capacity(k);
    let mut received_power = Vec::with_capacity(k);
    let mut id_power = Vec::with_capacity(k);
    let mut eh_power = Vec::with_capacity(k);
    let mut harvested = Vec::with_capacity(k);
    for (u, row) in rows.iter().enumerate() {
        let rho = action.rho[u];
        let common = gain(row, &action.w_c);
        let private: Vec<f64> = action.w.iter().map(|w| gain(row, w)).collect();
        let all_private: f64 = private.iter().sum();
        let interference = all_private - private[u];
        let sinr_c = rho * common / (rho * (all_private + p.noise_power) + p.conversion_noise);
        let sinr_k = rho * private[u] / (rho * (interference + p.noise_power) + p.conversion_noise);
        common_rates.push((1.0 + sinr_c).log2());
        private_rates.push((1.0 + sinr_k).log2());
        let p_rx = common + all_private;
        received_power.push(p_rx);
        id_power.push(rho * p_rx);
        eh_power.push((1.0 - rho) * p_rx);
        harvested.push(p.eh_efficiency * (1.0 - rho) * p_rx);
    }
    let transmit_power = action.transmit_power();
    let delivered_common_rate: f64 = action.c.iter().sum();
    let sum_rate = delivered_common_rate + private_rates.iter().sum::<f64>();
    let ee = sum_rate / (transmit_power / p.amp_efficiency + p.circuit_power);

    let min_common = common_rates.iter().copied().fold(f64::INFINITY, f64::min);
    let raw = [
        (POWER_BUDGET, (transmit_power - p.p_max).max(0.0)),
        (
            QOS_RATE,
            (0..k)
                .map(|u| (p.r_min - (private_rates[u] + action.c[u])).max(0.0))
                .sum(),
        ),
        (
            ENERGY_HARVEST,
            harvested.iter().map(|e| (inst.e_min - e).max(0.0)).sum(),
        ),
        (
            RSMA_COMMON_RATE,
            if k == 0 {
                0.0
            } else {
                (delivered_common_rate - min_common).max(0.0)
            },
        ),
    ];
    let violations: BTreeMap<String, f64> = raw
        .into_iter()
        .filter(|(_, v)| *v > 0.0)
        .map(|(kind, v)| (kind.to_string(), v))
        .collect();
    let mut report = EvalReport {
        private_rates,
        common_rates,
        delivered_common_rate,
        received_power,
        id_power,
        eh_power,
        harvested,
        transmit_power,
        ee,
        violations,
        score: 0.0,
        training_score: 0.0,
    };
    report.score = report.score_for(&all_kinds(), p.penalty);
    report.training_score = report.score_for(enforced, p.penalty);
    Ok(report)
}
