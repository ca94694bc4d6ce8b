//! Independent evaluator for the network environment written with plain
//! `(re, im)` pairs, plus a random action sampler. Shared by test targets
//! through `#[path]`.
#![allow(dead_code)]

use formulink_netsim::env::{
    all_kinds, evaluate, project_power, Action, CMatrix, NetworkInstance, SystemParams,
};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type C = (f64, f64);

fn mul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn conj(a: C) -> C {
    (a.0, -a.1)
}

pub fn abs2(a: C) -> f64 {
    a.0 * a.0 + a.1 * a.1
}

pub fn pair(z: Complex64) -> C {
    (z.re, z.im)
}

pub struct Reference {
    pub private: Vec<f64>,
    pub common: Vec<f64>,
    pub harvested: Vec<f64>,
    pub ee: f64,
    pub qos: f64,
    pub eh: f64,
    pub rsma: f64,
    pub power: f64,
}

/// Recomputes every quantity from the channel and action entries.
pub fn reference(inst: &NetworkInstance, a: &Action) -> Reference {
    let p = &inst.params;
    let at = |m: &CMatrix, r: usize, c: usize| pair(m.data[r * m.cols + c]);
    let inner = |k: usize, w: &[Complex64]| -> f64 {
        // h_kᴴ w with h_kᴴ = h_d,kᴴ + Σ_m conj(h_r,k,m) e^{jθ_m} G_m,:
        let mut acc = (0.0, 0.0);
        for n in 0..p.nt {
            let mut hn = conj(at(&inst.h_d, k, n));
            for m in 0..p.m {
                let phase = (a.theta[m].cos(), a.theta[m].sin());
                let t = mul(mul(conj(at(&inst.h_r, k, m)), phase), at(&inst.g, m, n));
                hn = (hn.0 + t.0, hn.1 + t.1);
            }
            let term = mul(hn, pair(w[n]));
            acc = (acc.0 + term.0, acc.1 + term.1);
        }
        abs2(acc)
    };
    let mut private = vec![];
    let mut common = vec![];
    let mut harvested = vec![];
    for k in 0..p.k {
        let gc = inner(k, &a.w_c);
        let gp: Vec<f64> = a.w.iter().map(|w| inner(k, w)).collect();
        let total: f64 = gp.iter().sum();
        let rho = a.rho[k];
        let sinr_c = rho * gc / (rho * (total + p.noise_power) + p.conversion_noise);
        let sinr_k = rho * gp[k] / (rho * (total - gp[k] + p.noise_power) + p.conversion_noise);
        common.push((1.0 + sinr_c).log2());
        private.push((1.0 + sinr_k).log2());
        harvested.push(p.eh_efficiency * (1.0 - rho) * (gc + total));
    }
    let ptx: f64 = a
        .w_c
        .iter()
        .chain(a.w.iter().flatten())
        .map(|z| abs2(pair(*z)))
        .sum();
    let sum_c: f64 = a.c.iter().sum();
    let ee = (sum_c + private.iter().sum::<f64>()) / (ptx / p.amp_efficiency + p.circuit_power);
    let qos = (0..p.k).map(|k| (p.r_min - private[k] - a.c[k]).max(0.0)).sum();
    let eh = harvested.iter().map(|e| (inst.e_min - e).max(0.0)).sum();
    let min_c = common.iter().copied().fold(f64::INFINITY, f64::min);
    Reference {
        private,
        common,
        harvested,
        ee,
        qos,
        eh,
        rsma: (sum_c - min_c).max(0.0),
        power: (ptx - p.p_max).max(0.0),
    }
}

pub fn random_action(p: &SystemParams, rng: &mut ChaCha8Rng) -> Action {
    let mut cz = |s: f64| Complex64::new(rng.random_range(-s..s), rng.random_range(-s..s));
    let w_c = (0..p.nt).map(|_| cz(1.0)).collect();
    let w = (0..p.k).map(|_| (0..p.nt).map(|_| cz(1.0)).collect()).collect();
    let mut a = Action {
        w_c,
        w,
        rho: (0..p.k).map(|_| rng.random_range(0.01..0.99)).collect(),
        theta: (0..p.m).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(),
        c: (0..p.k).map(|_| rng.random_range(0.0..2.0)).collect(),
    };
    if rng.random_bool(0.7) {
        project_power(&mut a, p.p_max);
    }
    a
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn assert_close(what: &str, got: f64, want: f64, tol: f64) {
    assert!(
        got == want || rel(got, want) <= tol,
        "{what}: {got} vs reference {want}"
    );
}

pub fn check_against_reference(inst: &NetworkInstance, a: &Action) {
    let r = evaluate(inst, a, &all_kinds()).unwrap();
    let want = reference(inst, a);
    for k in 0..inst.params.k {
        assert_close("R_k", r.private_rates[k], want.private[k], 1e-9);
        assert_close("R_c,k", r.common_rates[k], want.common[k], 1e-9);
        assert_close("E_k", r.harvested[k], want.harvested[k], 1e-9);
    }
    assert_close("EE", r.ee, want.ee, 1e-9);
    let v = |kind: &str| r.violations.get(kind).copied().unwrap_or(0.0);
    assert_close("qos", v("qos_rate"), want.qos, 1e-9);
    assert_close("eh", v("energy_harvest"), want.eh, 1e-9);
    assert_close("rsma", v("rsma_common_rate"), want.rsma, 1e-9);
    assert!((v("power_budget") - want.power).abs() <= 1e-12);
    let expected_score = want.ee - 10.0 * (want.qos + want.eh + want.rsma + want.power);
    assert!((r.score - expected_score).abs() <= 1e-9 * (1.0 + expected_score.abs()));
}

/// Largest relative deviation between the crate evaluator and the reference
/// over rates, harvested energy, EE, violations and score.
pub fn max_deviation(inst: &NetworkInstance, a: &Action) -> f64 {
    let r = evaluate(inst, a, &all_kinds()).unwrap();
    let want = reference(inst, a);
    let d = |got: f64, want: f64| if got == want { 0.0 } else { rel(got, want) };
    let v = |kind: &str| r.violations.get(kind).copied().unwrap_or(0.0);
    let mut worst = d(r.ee, want.ee)
        .max(d(v("qos_rate"), want.qos))
        .max(d(v("energy_harvest"), want.eh))
        .max(d(v("rsma_common_rate"), want.rsma));
    for k in 0..inst.params.k {
        worst = worst
            .max(d(r.private_rates[k], want.private[k]))
            .max(d(r.common_rates[k], want.common[k]))
            .max(d(r.harvested[k], want.harvested[k]));
    }
    let expected_score = want.ee - 10.0 * (want.qos + want.eh + want.rsma + want.power);
    worst.max((r.score - expected_score).abs() / (1.0 + expected_score.abs()))
}
