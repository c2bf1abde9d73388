//! Cross-validation harness: statistical bridges between the simulated
//! process, the generational operator, the stationary formulas and the
//! transport equation. Each check reports its statistic, threshold and
//! verdict; nothing is silent.

use crate::flows::{FlowSolver, Phase};
use crate::grid::{Grid, GridDensity, GridFn};
use crate::model::ModelSpec;
use crate::operator::{power_iterate, KernelOp, PowerIterateOpts};
use crate::pde::{boundary_consistency_check, DelayField, PdeOpts};
use crate::pdmp::{run_ensemble, simulate_generations, trajectory_rng, PdmpState};
use crate::stationary::{mean_resting_time, RestingTime, RestingTimeOpts, StationaryProfile};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Operator(#[from] crate::operator::OperatorError),
    #[error(transparent)]
    Stationary(#[from] crate::stationary::StationaryError),
    #[error(transparent)]
    Pde(#[from] crate::pde::PdeError),
    #[error(transparent)]
    Pdmp(#[from] crate::pdmp::PdmpError),
}

/// Kolmogorov-Smirnov statistic of sorted samples against a CDF.
pub fn ks_statistic_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len();
    let mut worst: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = (i + 1) as f64 / n as f64 - f;
        let lo = f - i as f64 / n as f64;
        worst = worst.max(hi.abs()).max(lo.abs());
    }
    worst
}

/// L1 distance between the empirical bin frequencies of `samples` and the
/// bin masses of a (normalized) grid density, over `bins` uniform bins.
pub fn binned_l1(samples: &[f64], density: &GridFn, bins: usize) -> f64 {
    let m_max = density.grid.m_max;
    let mut emp = vec![0.0; bins];
    let mut total = 0usize;
    for &s in samples {
        if (0.0..=m_max).contains(&s) {
            let b = ((s / m_max * bins as f64).floor() as usize).min(bins - 1);
            emp[b] += 1.0;
            total += 1;
        }
    }
    if total == 0 {
        return 2.0;
    }
    for e in &mut emp {
        *e /= total as f64;
    }
    // bin masses of the density by Simpson on each bin
    let mut mass = vec![0.0; bins];
    for (b, m) in mass.iter_mut().enumerate() {
        let (lo, hi) = (
            m_max * b as f64 / bins as f64,
            m_max * (b + 1) as f64 / bins as f64,
        );
        *m = crate::numeric::adaptive_simpson(|x| density.eval(x), lo, hi, 1e-10);
    }
    let msum: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= msum;
    }
    emp.iter().zip(&mass).map(|(a, b)| (a - b).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowVerdict {
    Pass,
    Fail,
    Skipped,
}

/// One row of the cross-check table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub statistic: Option<f64>,
    pub threshold: f64,
    pub verdict: RowVerdict,
    pub note: String,
}

impl CheckRow {
    fn pass_if(name: &str, statistic: f64, threshold: f64, note: String) -> Self {
        CheckRow {
            name: name.into(),
            statistic: Some(statistic),
            threshold,
            verdict: if statistic < threshold {
                RowVerdict::Pass
            } else {
                RowVerdict::Fail
            },
            note,
        }
    }

    fn skipped(name: &str, threshold: f64, note: &str) -> Self {
        CheckRow {
            name: name.into(),
            statistic: None,
            threshold,
            verdict: RowVerdict::Skipped,
            note: note.into(),
        }
    }
}

/// Harness options. `budget` scales the Monte Carlo sample counts
/// (1.0 = the default sizes); zero skips the statistical rows.
#[derive(Debug, Clone)]
pub struct VerifyOpts {
    pub budget: f64,
    pub master_seed: u64,
    pub grid_n: usize,
    pub pde_dm: f64,
    /// Test hook: warps the transition CDF used by the generational-law
    /// check, `F -> F^(1+warp)`. Injected faults must be caught.
    pub ks_cdf_warp: f64,
}

impl Default for VerifyOpts {
    fn default() -> Self {
        VerifyOpts {
            budget: 1.0,
            master_seed: 7,
            grid_n: 2048,
            pde_dm: 0.01,
            ks_cdf_warp: 0.0,
        }
    }
}

/// Runs the bridge checks for one model. Rows never error; failures are
/// rows with a `Fail` verdict.
pub fn run_verification(spec: &ModelSpec, opts: &VerifyOpts) -> Result<Vec<CheckRow>, VerifyError> {
    let mut rows = Vec::new();
    let solver = Arc::new(FlowSolver::new(spec.clone()));
    let grid = Grid::new(opts.grid_n, spec.m_max);
    let op = KernelOp::new(solver.clone(), grid.clone())?;

    // invariant density (also used by the stationary rows)
    let f0 = GridDensity::uniform(grid.clone(), spec.m_max / 6.0);
    let power = power_iterate(&op, &f0, &PowerIterateOpts::default());
    let fixed = power.fixed_point.clone();

    // 1. generational law: first-generation samples vs the kernel CDF
    let n_gen_samples = (1.0e5 * opts.budget) as usize;
    if n_gen_samples == 0 {
        rows.push(CheckRow::skipped(
            "generational_law_ks",
            0.0,
            "budget is zero",
        ));
    } else {
        let m0 = 0.0;
        let mut samples: Vec<f64> = (0..n_gen_samples)
            .into_par_iter()
            .filter_map(|i| {
                let mut rng = trajectory_rng(opts.master_seed, i as u64);
                simulate_generations(&solver, m0, 1, &mut rng)
                    .ok()
                    .and_then(|c| c.maturities.first().copied())
            })
            .collect();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let warp = 1.0 + opts.ks_cdf_warp;
        let ks = ks_statistic_sorted(&samples, |m| op.transition_cdf(m0, m).powf(warp));
        let bound = 1.358 / (samples.len() as f64).sqrt();
        rows.push(CheckRow::pass_if(
            "generational_law_ks",
            ks,
            bound,
            format!("n = {}, 5% critical value", samples.len()),
        ));
    }

    // 2. fiftieth-generation histogram vs the operator fixed point
    let n_chains = (1.0e5 * opts.budget) as usize;
    match (&fixed, n_chains) {
        (_, 0) => rows.push(CheckRow::skipped(
            "generation50_vs_fixed_point",
            0.0,
            "budget is zero",
        )),
        (None, _) => rows.push(CheckRow::skipped(
            "generation50_vs_fixed_point",
            0.0,
            "no invariant density (operator not stable on this domain)",
        )),
        (Some(fstar), _) => {
            let m50: Vec<f64> = (0..n_chains)
                .into_par_iter()
                .filter_map(|i| {
                    let mut rng = trajectory_rng(opts.master_seed ^ 0x51_51, i as u64);
                    simulate_generations(&solver, 0.0, 50, &mut rng)
                        .ok()
                        .and_then(|c| if c.escaped { None } else { c.maturities.last().copied() })
                })
                .collect();
            let l1 = binned_l1(&m50, &fstar.f, 32);
            let threshold = 0.02 * (1.0e5 / n_chains as f64).sqrt().max(1.0);
            rows.push(CheckRow::pass_if(
                "generation50_vs_fixed_point",
                l1,
                threshold,
                format!("{} chains, 32 bins", m50.len()),
            ));
        }
    }

    // stationary profile (needs T_R)
    let resting_opts = RestingTimeOpts {
        grid_n: opts.grid_n.min(1024),
        ..Default::default()
    };
    let profile = match mean_resting_time(spec, &resting_opts) {
        Ok((rt @ RestingTime::Finite { .. }, f_base)) => {
            Some(StationaryProfile::new(solver.clone(), f_base, rt))
        }
        _ => None,
    };

    // 3. long-run ensemble vs stationary densities
    let n_traj = (2000.0 * opts.budget) as usize;
    match (&profile, n_traj) {
        (_, 0) => rows.push(CheckRow::skipped(
            "ensemble_vs_stationary",
            0.0,
            "budget is zero",
        )),
        (None, _) => rows.push(CheckRow::skipped(
            "ensemble_vs_stationary",
            0.0,
            "no finite mean resting time",
        )),
        (Some(prof), _) => {
            let t_r = prof.resting_time.value().unwrap();
            let tau = spec.tau;
            let burn = 15.0 * (t_r + tau);
            let horizon = burn + 100.0 * (t_r + tau);
            let x0 = PdmpState::newborn(spec.m_p / 2.0);
            let trajs = run_ensemble(
                &solver,
                &x0,
                n_traj,
                horizon,
                Some((t_r + tau) / 3.0),
                opts.master_seed ^ 0xeeee,
            )?;
            let states: Vec<PdmpState> = trajs
                .iter()
                .flat_map(|t| {
                    t.samples
                        .iter()
                        .filter(|(time, _)| *time >= burn)
                        .map(|(_, s)| *s)
                })
                .collect();
            // phase-2 occupancy vs c tau
            let p2 = states
                .iter()
                .filter(|s| s.phase == Phase::Proliferating)
                .count() as f64
                / states.len() as f64;
            let c_tau = prof.c.unwrap() * tau;
            rows.push(CheckRow::pass_if(
                "phase2_occupancy",
                (p2 - c_tau).abs(),
                0.01 / opts.budget.sqrt().min(1.0),
                format!("observed {p2:.4} vs c*tau = {c_tau:.4}"),
            ));
            // resting maturity marginal vs the age-integrated formula
            let resting_m: Vec<f64> = states
                .iter()
                .filter(|s| s.phase == Phase::Resting)
                .map(|s| s.maturity)
                .collect();
            let marginal = prof.marginal_resting();
            let mut marg_density = marginal.clone();
            let mass = marg_density.integral();
            for v in &mut marg_density.values {
                *v /= mass;
            }
            let l1 = binned_l1(&resting_m, &marg_density, 48);
            rows.push(CheckRow::pass_if(
                "resting_maturity_marginal",
                l1,
                0.03 / opts.budget.sqrt().min(1.0),
                format!("{} resting states, 48 bins", resting_m.len()),
            ));
            // proliferating age marginal vs uniform on [0, tau]
            let p2_ages: Vec<f64> = states
                .iter()
                .filter(|s| s.phase == Phase::Proliferating)
                .map(|s| s.age)
                .collect();
            let uniform = GridFn::from_fn(Grid::new(64, tau), |_| 1.0 / tau);
            let l1_age = binned_l1(&p2_ages, &uniform, 16);
            rows.push(CheckRow::pass_if(
                "proliferating_age_uniform",
                l1_age,
                0.02 / opts.budget.sqrt().min(1.0),
                format!("{} proliferating states, 16 bins", p2_ages.len()),
            ));
        }
    }

    // 4. transport equation holds the stationary profile
    match &profile {
        None => rows.push(CheckRow::skipped(
            "pde_stationary_drift",
            1e-3,
            "no finite mean resting time",
        )),
        Some(prof) => {
            let marginal = prof.marginal_resting();
            let mut field = DelayField::new(
                solver.clone(),
                opts.pde_dm,
                &|m| marginal.eval(m),
                None,
                &PdeOpts::default(),
            )?;
            let r0 = field.r.clone();
            field.evolve(10.0, &[])?;
            let drift: f64 = field
                .r
                .iter()
                .zip(&r0)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                * field.dm;
            rows.push(CheckRow::pass_if(
                "pde_stationary_drift",
                drift,
                1e-3,
                format!("dm = {}, 10 time units", opts.pde_dm),
            ));
        }
    }

    // 5. stationary boundary identities
    match &profile {
        None => rows.push(CheckRow::skipped(
            "boundary_consistency",
            1e-6,
            "no finite mean resting time",
        )),
        Some(prof) => {
            let (newborn, entry) = boundary_consistency_check(prof, 400)?;
            rows.push(CheckRow::pass_if(
                "boundary_consistency",
                newborn.max(entry),
                1e-6,
                format!("newborn {newborn:.2e}, phase entry {entry:.2e}"),
            ));
        }
    }

    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn ks_statistic_of_exact_cdf_sample() {
        // deterministic quantile sample has KS ~ 1/(2n)
        let n = 1000;
        let sorted: Vec<f64> = (0..n)
            .map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln())
            .collect();
        let ks = ks_statistic_sorted(&sorted, |x| 1.0 - (-x).exp());
        assert!(ks < 1.0 / n as f64, "ks = {ks}");
    }

    #[test]
    fn verification_rows_pass_for_benchmark_model() {
        let spec = presets::unit_speed_model();
        let opts = VerifyOpts {
            budget: 0.1,
            grid_n: 1024,
            pde_dm: 0.02,
            ..Default::default()
        };
        let rows = run_verification(&spec, &opts).unwrap();
        assert_eq!(rows.len(), 7);
        for row in &rows {
            assert_eq!(
                row.verdict,
                RowVerdict::Pass,
                "row {} failed: stat {:?} vs {} ({})",
                row.name,
                row.statistic,
                row.threshold,
                row.note
            );
        }
    }

    #[test]
    fn zero_budget_skips_statistical_rows() {
        let spec = presets::unit_speed_model();
        let opts = VerifyOpts {
            budget: 0.0,
            grid_n: 512,
            pde_dm: 0.05,
            ..Default::default()
        };
        let rows = run_verification(&spec, &opts).unwrap();
        let skipped: Vec<_> = rows
            .iter()
            .filter(|r| r.verdict == RowVerdict::Skipped)
            .map(|r| r.name.as_str())
            .collect();
        assert!(skipped.contains(&"generational_law_ks"));
        assert!(skipped.contains(&"generation50_vs_fixed_point"));
        assert!(skipped.contains(&"ensemble_vs_stationary"));
    }

    #[test]
    fn injected_kernel_fault_is_caught() {
        let spec = presets::unit_speed_model();
        let opts = VerifyOpts {
            budget: 0.05,
            grid_n: 512,
            pde_dm: 0.05,
            ks_cdf_warp: 0.25,
            ..Default::default()
        };
        let rows = run_verification(&spec, &opts).unwrap();
        let ks_row = rows
            .iter()
            .find(|r| r.name == "generational_law_ks")
            .unwrap();
        assert_eq!(ks_row.verdict, RowVerdict::Fail, "{ks_row:?}");
    }
}
