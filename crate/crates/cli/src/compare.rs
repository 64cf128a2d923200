//! T-KRR against random Fourier features at equal parameter count
//! (`M_RFF = M̂·R`) and against exact dual KRR, over random splits.

use std::io::Write;

use nalgebra::DVector;
use tkrr::baselines::{krr_dual_fit, primal_ridge_fit, KernelParams};
use tkrr::data::{destandardize, split, Dataset};
use tkrr::features::{rff_matrix, RffConfig};
use tkrr::model::{fit, sign_label, FitOptions, Task};
use tkrr::solver::TrainConfig;

use crate::commands::{error_rate, fit_settings, load_dataset, mse};
use crate::output::{render_table, summarize, write_csv};
use crate::{CliError, CompareArgs};

#[derive(Debug, Clone)]
pub struct CompareSettings {
    pub config: TrainConfig,
    pub options: FitOptions,
    pub seeds: u64,
    pub train_fraction: f64,
    pub dual_cap: usize,
}

/// Test metric of every run, indexed by seed.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub task: Task,
    pub m_rff: usize,
    pub tkrr: Vec<f64>,
    pub rff: Vec<f64>,
    /// `None` when the training split exceeds the dual cap.
    pub krr: Option<Vec<f64>>,
}

impl CompareReport {
    pub fn metric_name(&self) -> &'static str {
        match self.task {
            Task::Regression => "mse",
            Task::Classification => "misclassification_rate",
        }
    }
}

pub fn compare(data: &Dataset, settings: &CompareSettings) -> Result<CompareReport, CliError> {
    if settings.seeds == 0 {
        return Err(CliError::Usage("seeds must be at least 1".into()));
    }
    let task = match settings.options.task {
        Some(t) => t,
        None if data.has_binary_labels() => Task::Classification,
        None => Task::Regression,
    };
    let options = FitOptions {
        task: Some(task),
        ..settings.options.clone()
    };
    let m_rff = settings.config.m_hat * settings.config.rank;
    let metric = |pred: &DVector<f64>, y: &DVector<f64>| match task {
        Task::Regression => mse(pred, y),
        Task::Classification => error_rate(&pred.map(sign_label), y),
    };

    let mut report = CompareReport {
        task,
        m_rff,
        tkrr: Vec::new(),
        rff: Vec::new(),
        krr: Some(Vec::new()),
    };
    for seed in 0..settings.seeds {
        let (train, test) = split(data, settings.train_fraction, seed)?;
        let config = TrainConfig {
            seed,
            ..settings.config.clone()
        };
        let (model, _) = fit(&train, &config, &options)?;
        report.tkrr.push(metric(&model.predict(test.x())?, test.y()));

        // Baselines see the same scaled inputs, targets, lengthscale and λ.
        let scaler = model.scaler();
        let x_train = scaler.apply(train.x())?.x;
        let x_test = scaler.apply(test.x())?.x;
        let y_train = train
            .y()
            .map(|v| (v - scaler.target_mean) / scaler.target_std);
        let lengthscale = model.feature_config().lengthscale();
        let lambda = model.train_config().lambda;
        let unscale = |scores: DVector<f64>| {
            destandardize(&scores, scaler.target_mean, scaler.target_std)
        };

        let rff = RffConfig::sample(m_rff, train.dims(), lengthscale, seed)?;
        let w = primal_ridge_fit(&rff_matrix(&x_train, &rff)?, &y_train, lambda)?;
        let pred = unscale(rff_matrix(&x_test, &rff)? * w);
        report.rff.push(metric(&pred, test.y()));

        if train.len() > settings.dual_cap {
            report.krr = None;
        }
        if let Some(krr) = report.krr.as_mut() {
            let dual = krr_dual_fit(
                &x_train,
                &y_train,
                KernelParams::new(lengthscale)?,
                lambda,
                settings.dual_cap,
            )?;
            krr.push(metric(&unscale(dual.predict(&x_test)?), test.y()));
        }
    }
    Ok(report)
}

pub fn run_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = load_dataset(&args.data)?;
    let (config, options) = fit_settings(&args.model);
    let settings = CompareSettings {
        config,
        options,
        seeds: args.seeds,
        train_fraction: args.train_fraction,
        dual_cap: args.dual_cap,
    };
    let report = compare(&data, &settings)?;
    let metric = report.metric_name();

    if let Some(path) = &args.output {
        let mut rows = Vec::new();
        let methods = [("tkrr", Some(&report.tkrr)), ("rff", Some(&report.rff)), ("krr", report.krr.as_ref())];
        for (name, runs) in methods {
            for (seed, v) in runs.into_iter().flatten().enumerate() {
                rows.push(vec![seed.to_string(), name.to_string(), v.to_string()]);
            }
        }
        write_csv(path, &["seed", "method", metric], &rows)?;
    }

    let cell = |runs: Option<&Vec<f64>>| match runs {
        Some(r) => {
            let (mean, std, median) = summarize(r);
            vec![format!("{mean:.4e} ± {std:.4e}"), format!("{median:.4e}")]
        }
        None => vec!["N/A".to_string(), "N/A".to_string()],
    };
    let mut rows = Vec::new();
    for (name, runs) in [
        (format!("T-KRR (m_hat={}, R={})", settings.config.m_hat, settings.config.rank), Some(&report.tkrr)),
        (format!("RFF (M={})", report.m_rff), Some(&report.rff)),
        ("KRR (dual)".to_string(), report.krr.as_ref()),
    ] {
        let mut row = vec![name];
        row.extend(cell(runs));
        rows.push(row);
    }
    writeln!(
        out,
        "{} splits, train fraction {}, {} rows x {} inputs",
        settings.seeds,
        settings.train_fraction,
        data.len(),
        data.dims()
    )?;
    write!(
        out,
        "{}",
        render_table(&["method", &format!("{metric} mean ± std"), "median"], &rows)
    )?;
    Ok(())
}
