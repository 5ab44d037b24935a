//! Verification of the hand-written backpropagation against central finite
//! differences of the joint loss.
//!
//! This ships in the library (not just the test suite) so the `gradcheck`
//! subcommand can re-verify any build on any machine.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{gradients, joint_loss, GoldExample, ProjectedExample};
use super::{ModelDims, ModelParams};
use crate::error::Result;
use crate::projection::ProjectedLabel;

/// Settings for one verification sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    /// Number of independently seeded model/batch draws.
    pub runs: usize,
    /// Central-difference step size.
    pub step: f64,
    /// Maximum allowed relative error per parameter.
    pub rel_tol: f64,
    /// Absolute differences at or below this pass regardless of relative
    /// error (both gradients are essentially zero).
    pub abs_floor: f64,
    /// Seed of the first run; run `r` uses `base_seed + r`.
    pub base_seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> GradCheckConfig {
        GradCheckConfig {
            runs: 10,
            step: 1e-4,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
            base_seed: 0,
        }
    }
}

/// Outcome of one seeded draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRun {
    pub seed: u64,
    pub params_checked: usize,
    pub max_abs_diff: f64,
    /// Largest relative error among parameters above the absolute floor.
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Outcome of a whole sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub runs: Vec<GradCheckRun>,
    pub passed: bool,
}

impl GradCheckReport {
    /// The largest relative error seen across all runs.
    pub fn worst_rel_err(&self) -> f64 {
        self.runs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }
}

/// The finite-difference gradient of the joint loss: every parameter
/// perturbed by `±step`, central differences, flat canonical order.
pub fn finite_difference_gradient(
    params: &ModelParams,
    gold: &[GoldExample],
    proj: &[ProjectedExample],
    step: f64,
) -> Result<Vec<f64>> {
    let base = params.to_flat();
    let mut work = params.clone();
    let mut grad = Vec::with_capacity(base.len());
    let mut flat = base.clone();
    for i in 0..base.len() {
        flat[i] = base[i] + step;
        work.copy_from_flat(&flat)?;
        let up = joint_loss(&work, gold, proj)?;
        flat[i] = base[i] - step;
        work.copy_from_flat(&flat)?;
        let down = joint_loss(&work, gold, proj)?;
        flat[i] = base[i];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Draws a random model and random gold/projected batches for each seed and
/// compares analytic gradients against finite differences everywhere.
pub fn check_gradients(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut runs = Vec::with_capacity(config.runs);
    for r in 0..config.runs {
        let seed = config.base_seed.wrapping_add(r as u64);
        runs.push(check_one(config, seed)?);
    }
    let passed = !runs.is_empty() && runs.iter().all(|r| r.passed);
    Ok(GradCheckReport {
        config: config.clone(),
        runs,
        passed,
    })
}

fn check_one(config: &GradCheckConfig, seed: u64) -> Result<GradCheckRun> {
    // Small dimensions keep the O(parameter count) loss evaluations quick
    // while still exercising every term of the objective.
    let dims = ModelDims {
        vocab_size: 9,
        embed_dim: 4,
        hidden_dim: 4,
        gold_tags: 3,
        proj_tags: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // A generic parameter point, away from the special structure of the
    // training initialization (identity transform, tiny weights).
    let mut params = ModelParams::zeros(&dims);
    for s in params.slices_mut() {
        for v in s {
            *v = rng.random_range(-0.5..0.5);
        }
    }

    let gold: Vec<GoldExample> = (0..2)
        .map(|_| {
            let len = rng.random_range(1..=5);
            GoldExample {
                tokens: (0..len).map(|_| rng.random_range(0..dims.vocab_size)).collect(),
                tags: (0..len).map(|_| rng.random_range(0..dims.gold_tags)).collect(),
            }
        })
        .collect();
    let proj: Vec<ProjectedExample> = (0..2)
        .map(|_| {
            let len = rng.random_range(1..=5);
            ProjectedExample {
                tokens: (0..len).map(|_| rng.random_range(0..dims.vocab_size)).collect(),
                labels: (0..len)
                    .map(|_| {
                        if rng.random::<f64>() < 0.5 {
                            ProjectedLabel::Hard(rng.random_range(0..dims.proj_tags))
                        } else {
                            // Bounded-away-from-zero masses keep the loss
                            // smooth around the evaluation point.
                            let raw: Vec<f64> = (0..dims.proj_tags)
                                .map(|_| rng.random_range(0.1..1.0))
                                .collect();
                            let sum: f64 = raw.iter().sum();
                            ProjectedLabel::Soft(raw.into_iter().map(|v| v / sum).collect())
                        }
                    })
                    .collect(),
            }
        })
        .collect();

    let analytic = gradients(&params, &gold, &proj)?.to_flat();
    let numeric = finite_difference_gradient(&params, &gold, &proj, config.step)?;

    let mut max_abs_diff = 0.0_f64;
    let mut max_rel_err = 0.0_f64;
    let mut passed = true;
    for (&a, &n) in analytic.iter().zip(&numeric) {
        let diff = (a - n).abs();
        max_abs_diff = max_abs_diff.max(diff);
        if diff <= config.abs_floor {
            continue;
        }
        let rel = diff / a.abs().max(n.abs());
        max_rel_err = max_rel_err.max(rel);
        if rel > config.rel_tol {
            passed = false;
        }
    }
    Ok(GradCheckRun {
        seed,
        params_checked: analytic.len(),
        max_abs_diff,
        max_rel_err,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match_finite_differences() {
        // Two seeds here keep the unit suite fast; the acceptance suite and
        // the CLI run the full default sweep.
        let config = GradCheckConfig {
            runs: 2,
            ..GradCheckConfig::default()
        };
        let report = check_gradients(&config).unwrap();
        assert!(report.passed, "worst rel err {}", report.worst_rel_err());
        for run in &report.runs {
            assert!(run.params_checked > 300);
            assert!(
                run.max_rel_err <= config.rel_tol,
                "seed {}: rel err {}",
                run.seed,
                run.max_rel_err
            );
        }
    }

    #[test]
    fn check_is_deterministic_per_seed() {
        let config = GradCheckConfig {
            runs: 1,
            ..GradCheckConfig::default()
        };
        let a = check_gradients(&config).unwrap();
        let b = check_gradients(&config).unwrap();
        assert_eq!(a, b);
    }
}
