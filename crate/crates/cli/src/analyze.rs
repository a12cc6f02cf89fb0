//! The `analyze` and `summarize` commands.

use std::fs;
use std::path::PathBuf;

use sensq_core::simulate::quantile_k;
use sensq_core::{
    compute_scores, confidence_curve, transform_for_null, ConfidenceCurve, DiffMeansWeights, EffectSpec, Engine,
    EngineConfig, Gamma, MStatConfig, ModifiedBounds, MonteCarlo, NullKind, SearchOptions, Statistic, TailMethod,
};

use crate::ingest::{read_study_file, LoadedStudy};
use crate::output::{curve_csv, summarize, to_json, write_file, Summary};
use crate::{io_error, AnalyzeArgs, CliError, EngineArg, FormatArg, NullArg, StatisticArg, SummarizeArgs, TailArg};

/// Which quantiles to report.
#[derive(Debug, Clone, PartialEq)]
pub enum KGrid {
    All,
    Fractions(Vec<f64>),
}

impl KGrid {
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("invalid quantile specification `{spec}`"));
        let spec = spec.trim();
        if spec == "all" {
            return Ok(KGrid::All);
        }
        let fractions: Vec<f64> = if spec.contains(':') {
            let parts: Vec<f64> = spec
                .split(':')
                .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_, _>>()?;
            let [start, stop, step] = parts[..] else {
                return Err(bad());
            };
            if parts.iter().any(|v| v.is_nan()) || step <= 0.0 || start > stop {
                return Err(bad());
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|j| start + j as f64 * step).collect()
        } else {
            spec.split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_, _>>()?
        };
        if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0 + 1e-9)) {
            return Err(bad());
        }
        Ok(KGrid::Fractions(fractions))
    }

    /// Distinct `k` values in ascending order; `None` means every `k`.
    pub fn ks(&self, n_sets: usize) -> Option<Vec<usize>> {
        match self {
            KGrid::All => None,
            KGrid::Fractions(f) => {
                let mut ks: Vec<usize> = f.iter().map(|&x| quantile_k(x.min(1.0), n_sets)).collect();
                ks.sort_unstable();
                ks.dedup();
                Some(ks)
            }
        }
    }
}

/// Fully resolved settings of one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub statistic: Statistic,
    pub engine: EngineArg,
    pub exact: bool,
    pub tail: TailArg,
    pub alpha: f64,
    pub k_grid: KGrid,
    pub draws: usize,
    pub seed: u64,
    pub tol: f64,
    pub bounds: ModifiedBounds,
    pub null: NullKind,
    pub delta: Option<f64>,
}

impl AnalysisConfig {
    pub fn from_args(a: &AnalyzeArgs) -> Result<Self, CliError> {
        let statistic = match a.statistic {
            StatisticArg::DiffMeans => Statistic::DiffMeans(DiffMeansWeights::Unit),
            StatisticArg::Mstat => {
                let kappa = match a.kappa.trim() {
                    "inf" | "none" => None,
                    k => Some(
                        k.parse::<f64>()
                            .map_err(|_| CliError::Config(format!("invalid --kappa `{k}`")))?,
                    ),
                };
                Statistic::MStat(MStatConfig::new(kappa, a.iota)?)
            }
        };
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return Err(CliError::Config(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
        }
        if a.draws == 0 {
            return Err(CliError::Config("--draws must be >= 1".into()));
        }
        let bounds = ModifiedBounds {
            gamma_max: match a.gamma_max {
                Some(g) => Gamma::new(g)?,
                None => Gamma::UNBOUNDED,
            },
            k_min: a.k_min.unwrap_or(1),
        };
        Ok(AnalysisConfig {
            statistic,
            engine: a.engine,
            exact: a.exact,
            tail: a.tail,
            alpha: a.alpha,
            k_grid: KGrid::parse(&a.quantiles)?,
            draws: a.draws,
            seed: a.seed,
            tol: a.tol,
            bounds,
            null: match a.null {
                NullArg::Sharp => NullKind::Sharp,
                NullArg::BoundedAbove => NullKind::BoundedAbove,
                NullArg::BoundedBelow => NullKind::BoundedBelow,
            },
            delta: a.delta,
        })
    }

    /// Default settings: difference in means, auto engine, all quantiles.
    pub fn with_defaults() -> Self {
        AnalysisConfig {
            statistic: Statistic::default(),
            engine: EngineArg::Auto,
            exact: false,
            tail: TailArg::MonteCarlo,
            alpha: 0.05,
            k_grid: KGrid::All,
            draws: 100_000,
            seed: 1,
            tol: 1e-4,
            bounds: ModifiedBounds::default(),
            null: NullKind::Sharp,
            delta: None,
        }
    }

    fn engine_config(&self, all_pairs: bool) -> EngineConfig {
        let method = match self.tail {
            TailArg::MonteCarlo => TailMethod::MonteCarlo(MonteCarlo::new(self.draws, self.seed)),
            TailArg::Convolution => TailMethod::ExactDp,
        };
        let engine = match self.engine {
            EngineArg::PairExact => Engine::PairExact(method),
            EngineArg::SetAsymptotic => Engine::SetAsymptotic,
            EngineArg::Auto if all_pairs && self.exact => Engine::PairExact(method),
            EngineArg::Auto => Engine::SetAsymptotic,
        };
        EngineConfig {
            engine,
            bounds: self.bounds,
        }
    }
}

/// Confidence curve of a loaded study.
pub fn analyze_study(loaded: &LoadedStudy, cfg: &AnalysisConfig) -> Result<ConfidenceCurve, CliError> {
    let study = &loaded.study;
    let delta = match (&loaded.delta, cfg.delta) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "--delta cannot be combined with a delta column in the input".into(),
            ))
        }
        (Some(d), None) => d.clone(),
        (None, d) => vec![d.unwrap_or(0.0); study.n_units()],
    };
    let transformed = transform_for_null(
        study,
        &EffectSpec {
            kind: cfg.null,
            delta,
        },
    )?;
    let scores = compute_scores(&transformed, &cfg.statistic)?;
    let engine = cfg.engine_config(scores.is_pair_study());
    let opts = SearchOptions {
        tol: cfg.tol,
        ..SearchOptions::default()
    };
    let ks = cfg.k_grid.ks(scores.n_sets());
    Ok(confidence_curve(&scores, cfg.alpha, &engine, &opts, ks.as_deref())?)
}

fn print_summary(curve: &ConfidenceCurve, summary: &Summary) {
    println!("{:>8} {:>10} {:>14} {:>12}  status", "k", "fraction", "lower_limit", "p");
    for e in &curve.entries {
        println!(
            "{:>8} {:>10.4} {:>14.4} {:>12.8}  {}",
            e.k,
            e.quantile_fraction,
            e.lower_limit,
            e.achieved_p,
            crate::output::status_name(e.status)
        );
    }
    for x in &summary.exceedance {
        println!("sets with bias above {}: at least {}", x.gamma0, x.count);
    }
    if let Some(avg) = &summary.average_bias {
        println!(
            "average bias limits: identity {:.4}, log {:.4}, odds {:.4}",
            avg.identity, avg.log, avg.odds
        );
    }
}

fn check_gamma_grid(grid: &[f64]) -> Result<(), CliError> {
    if grid.iter().any(|g| g.is_nan() || *g < 1.0) {
        return Err(CliError::Config("--gamma-grid values must be >= 1".into()));
    }
    Ok(())
}

pub fn run(a: &AnalyzeArgs) -> Result<(), CliError> {
    let cfg = AnalysisConfig::from_args(a)?;
    check_gamma_grid(&a.gamma_grid)?;
    let path: &PathBuf = a.input.as_ref().or(a.nhanes.as_ref()).expect("clap requires an input");
    let loaded = read_study_file(path)?;
    let curve = analyze_study(&loaded, &cfg)?;
    let summary = summarize(&curve, &a.gamma_grid);
    fs::create_dir_all(&a.out_dir).map_err(|e| io_error(&a.out_dir, e))?;
    let (name, body) = match a.format {
        FormatArg::Csv => ("curve.csv", curve_csv(&curve)),
        FormatArg::Json => ("curve.json", to_json(&curve)),
    };
    let curve_path = a.out_dir.join(name);
    write_file(&curve_path, &body).map_err(|e| io_error(&curve_path, e))?;
    let summary_path = a.out_dir.join("summary.json");
    write_file(&summary_path, &to_json(&summary)).map_err(|e| io_error(&summary_path, e))?;
    print_summary(&curve, &summary);
    Ok(())
}

pub fn summarize_file(a: &SummarizeArgs) -> Result<(), CliError> {
    check_gamma_grid(&a.gamma_grid)?;
    let text = fs::read_to_string(&a.curve)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.curve.display())))?;
    let curve: ConfidenceCurve = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.curve.display())))?;
    print!("{}", to_json(&summarize(&curve, &a.gamma_grid)));
    Ok(())
}
