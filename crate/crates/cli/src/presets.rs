//! Preset simulation studies for the `simulate` command.

use std::fs;

use sensq_core::simulate::{
    run_experiment, BiasModel, EffectModel, ExperimentMode, ExperimentResult, OutcomeModel, SimDesign, SimEngine,
};
use sensq_core::{DiffMeansWeights, SearchOptions, Statistic};
use serde::Serialize;

use crate::output::{table_csv, to_json, write_file};
use crate::{io_error, CliError, SimulateArgs};

pub const PRESETS: [&str; 18] = [
    "figA1a", "figA1b", "figA1c", "figA1d", "figA1e", "figA1f", "figA2a", "figA2b", "figA2c", "figA2d", "figA2e",
    "figA2f", "figA3a", "figA3b", "figA3c", "tabA2", "figA4", "figA6",
];

const TRIM_IOTAS: [f64; 6] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
const POWER_BETAS: [f64; 6] = [0.03, 0.2, 0.4, 0.6, 0.8, 1.0];

fn base(n_sets: usize, set_size: usize, reps: usize) -> SimDesign {
    SimDesign {
        n_sets,
        set_size,
        outcome: OutcomeModel::Normal { sd: 1.0 },
        bias: BiasModel::Constant { gamma: 1.0 },
        effect: EffectModel::NONE,
        statistic: Statistic::DiffMeans(DiffMeansWeights::Unit),
        engine: SimEngine::SetAsymptotic,
        alpha: 0.05,
        reps,
        seed: 1,
        search: SearchOptions::default(),
    }
}

const CONSTANT: BiasModel = BiasModel::Constant { gamma: 5.0 };
const LOGNORMAL: BiasModel = BiasModel::LogNormal {
    log_mean: 1.5,
    log_sd: 0.2,
};
const OUTLIER: BiasModel = BiasModel::Outlier {
    base: 5.0,
    outlier: 500.0,
    fraction: 0.05,
};

fn type_one(n_sets: usize, set_size: usize, outcome: OutcomeModel, bias: BiasModel) -> (SimDesign, ExperimentMode) {
    let design = SimDesign {
        outcome,
        bias,
        ..base(n_sets, set_size, 500)
    };
    (
        design,
        ExperimentMode::TypeOne {
            fractions: vec![1.0, 0.95, 0.9],
        },
    )
}

/// Design and mode of a named preset.
pub fn preset(name: &str) -> Option<(SimDesign, ExperimentMode)> {
    let normal = OutcomeModel::Normal { sd: 1.0 };
    let binary = OutcomeModel::Binary;
    let grid = |n| match name.chars().last() {
        Some('a') => Some(type_one(200, n, normal, CONSTANT)),
        Some('b') => Some(type_one(200, n, normal, LOGNORMAL)),
        Some('c') => Some(type_one(200, n, normal, OUTLIER)),
        Some('d') => Some(type_one(200, n, binary, CONSTANT)),
        Some('e') => Some(type_one(200, n, binary, LOGNORMAL)),
        Some('f') => Some(type_one(200, n, binary, OUTLIER)),
        _ => None,
    };
    match name {
        "figA1a" | "figA1b" | "figA1c" | "figA1d" | "figA1e" | "figA1f" => grid(2),
        "figA2a" | "figA2b" | "figA2c" | "figA2d" | "figA2e" | "figA2f" => grid(3),
        "figA3a" => Some(type_one(2000, 2, binary, CONSTANT)),
        "figA3b" => Some(type_one(2000, 2, binary, OUTLIER)),
        "figA3c" => Some(type_one(2000, 3, binary, CONSTANT)),
        "tabA2" | "figA4" => Some((
            SimDesign {
                outcome: OutcomeModel::Normal { sd: 0.5_f64.sqrt() },
                effect: EffectModel { c: 0.5, beta: 1.0 },
                ..base(500, 2, 50)
            },
            ExperimentMode::Trimming {
                kappa: 3.0,
                iotas: TRIM_IOTAS.to_vec(),
            },
        )),
        "figA6" => Some((
            SimDesign {
                outcome: OutcomeModel::Normal { sd: 0.5_f64.sqrt() },
                effect: EffectModel { c: 0.5, beta: 1.0 },
                ..base(1000, 2, 100)
            },
            ExperimentMode::Power {
                betas: POWER_BETAS.to_vec(),
            },
        )),
        _ => None,
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    preset: &'a str,
    seed: u64,
    design: &'a SimDesign,
    mode: &'a ExperimentMode,
    files: Vec<String>,
}

pub fn run(a: &SimulateArgs) -> Result<(), CliError> {
    let (mut design, mode) = preset(&a.preset).ok_or_else(|| {
        CliError::Config(format!(
            "unknown preset `{}` (expected one of {})",
            a.preset,
            PRESETS.join(", ")
        ))
    })?;
    if let Some(r) = a.reps {
        design.reps = r;
    }
    if let Some(n) = a.n_sets {
        design.n_sets = n;
    }
    design.seed = a.seed;
    design.validate()?;
    let result = run_experiment(&design, &mode)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_error(&a.out_dir, e))?;
    let mut files = Vec::new();
    let mut write = |name: String, body: String| -> Result<(), CliError> {
        let path = a.out_dir.join(&name);
        write_file(&path, &body).map_err(|e| io_error(&path, e))?;
        files.push(name);
        Ok(())
    };
    match &result {
        ExperimentResult::TypeOne(r) => {
            let (header, rows) = r.ecdf_rows();
            write(format!("{}_ecdf.csv", a.preset), table_csv(&header, &rows))?;
            for (i, k) in r.ks.iter().enumerate() {
                println!(
                    "k = {k} (bound {}): rejection rate at alpha {} is {}",
                    r.bounds[i],
                    design.alpha,
                    r.rejection_rate(i, design.alpha)
                );
            }
        }
        ExperimentResult::Curves(c) => {
            let (header, rows) = c.mean_curve_rows();
            write(format!("{}_mean_curve.csv", a.preset), table_csv(&header, &rows))?;
            let (header, rows) = c.average_bias_rows();
            let mut body = header.join(",");
            body.push('\n');
            for (g, values) in &rows {
                let cells: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                body.push_str(&format!("{g},{}\n", cells.join(",")));
                println!("{g}: {}", cells.join(" "));
            }
            write(format!("{}_average_bias.csv", a.preset), body)?;
        }
    }
    let manifest = Manifest {
        preset: &a.preset,
        seed: design.seed,
        design: &design,
        mode: &mode,
        files: files.clone(),
    };
    let path = a.out_dir.join("manifest.json");
    write_file(&path, &to_json(&manifest)).map_err(|e| io_error(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid() {
        for name in PRESETS {
            let (design, _) = preset(name).unwrap();
            design.validate().unwrap();
        }
        assert!(preset("figA9").is_none());
    }
}
