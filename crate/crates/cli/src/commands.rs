use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use tkrr::baselines::{gaussian_kernel, KernelParams};
use tkrr::data::{load_csv, load_inputs_csv, Dataset, TargetColumn};
use tkrr::features::{hilbert_feature, FeatureConfig};
use tkrr::model::{fit, FitOptions, FitReport, LambdaRule, Task, TkrrModel};
use tkrr::solver::TrainConfig;
use tkrr::synth;

use crate::output::{render_table, write_csv};
use crate::{
    CliError, DataArgs, EvalArgs, KernelBenchArgs, LambdaRuleArg, ModelArgs, PredictArgs,
    SynthArgs, SynthKind, TaskArg, TrainArgs,
};

/// Constant of the `λ = c / N` rule.
pub const INVERSE_N_CONSTANT: f64 = 100.0;

pub fn load_dataset(args: &DataArgs) -> Result<Dataset, CliError> {
    let target = args.target.clone().unwrap_or(TargetColumn::Last);
    Ok(load_csv(&args.data, &target, !args.no_header)?)
}

/// Solver configuration and fit options described by the flags.
pub fn fit_settings(args: &ModelArgs) -> (TrainConfig, FitOptions) {
    let config = TrainConfig {
        m_hat: args.m_hat,
        rank: args.rank,
        lambda: args.lambda,
        sweeps: args.sweeps,
        reg_mode: args.reg_mode.into(),
        seed: args.seed,
        cache_mode: args.cache.into(),
        equilibrate: !args.no_equilibrate,
        ..TrainConfig::default()
    };
    let options = FitOptions {
        task: match args.task {
            TaskArg::Auto => None,
            TaskArg::Regression => Some(Task::Regression),
            TaskArg::Classification => Some(Task::Classification),
        },
        lengthscale: args.lengthscale.value(),
        lambda_rule: match args.lambda_rule {
            LambdaRuleArg::Fixed => LambdaRule::Fixed,
            LambdaRuleArg::InverseN => LambdaRule::InverseSampleSize(INVERSE_N_CONSTANT),
        },
        margin: args.margin,
    };
    (config, options)
}

/// Mean squared error on the raw target scale.
pub fn mse(pred: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (pred - y).norm_squared() / y.len() as f64
}

/// Fraction of rows whose predicted label differs from `y`.
pub fn error_rate(labels: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let wrong = labels.iter().zip(y.iter()).filter(|(a, b)| a != b).count();
    wrong as f64 / y.len() as f64
}

/// Name and value of the task's test metric.
pub fn model_metric(model: &TkrrModel, data: &Dataset) -> Result<(&'static str, f64), CliError> {
    Ok(match model.task() {
        Task::Regression => ("mse", mse(&model.predict(data.x())?, data.y())),
        Task::Classification => {
            if !data.has_binary_labels() {
                return Err(tkrr::Error::InvalidInput(
                    "classification targets must all be -1 or +1".into(),
                )
                .into());
            }
            (
                "misclassification_rate",
                error_rate(&model.classify(data.x())?, data.y()),
            )
        }
    })
}

fn write_trace(path: &Path, report: &FitReport) -> Result<(), CliError> {
    let initial = report.initial_loss;
    let normalized = |v: f64| if initial > 0.0 { v / initial } else { 1.0 };
    let rows: Vec<Vec<String>> = std::iter::once(initial)
        .chain(report.loss_trace.iter().copied())
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), v.to_string(), normalized(v).to_string()])
        .collect();
    write_csv(path, &["update_index", "raw_loss", "normalized_loss"], &rows)
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = load_dataset(&args.data)?;
    let (config, options) = fit_settings(&args.model);
    let start = Instant::now();
    let (model, report) = fit(&data, &config, &options)?;
    let elapsed = start.elapsed();
    let (metric, value) = model_metric(&model, &data)?;

    model.save(&args.output)?;
    if let Some(path) = &args.trace {
        write_trace(path, &report)?;
    }

    let resolved = model.train_config();
    let rows = vec![
        vec!["task".into(), model.task().as_str().into()],
        vec!["rows".into(), data.len().to_string()],
        vec!["dims".into(), data.dims().to_string()],
        vec!["m_hat".into(), resolved.m_hat.to_string()],
        vec!["rank".into(), resolved.rank.to_string()],
        vec!["lambda".into(), format!("{:e}", resolved.lambda)],
        vec!["lengthscale".into(), format!("{:.6}", model.feature_config().lengthscale())],
        vec!["sweeps".into(), resolved.sweeps.to_string()],
        vec!["initial_loss".into(), format!("{:.6e}", report.initial_loss)],
        vec!["final_loss".into(), format!("{:.6e}", report.final_loss)],
        vec![format!("train_{metric}"), format!("{value:.6e}")],
        vec!["seconds".into(), format!("{:.3}", elapsed.as_secs_f64())],
    ];
    write!(out, "{}", render_table(&["quantity", "value"], &rows))?;
    writeln!(out, "model written to {}", args.output.display())?;
    Ok(())
}

pub fn predict(args: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = TkrrModel::load(&args.model)?;
    let x: DMatrix<f64> = match &args.target {
        Some(t) => load_csv(&args.data, t, !args.no_header)?.x().clone(),
        None => load_inputs_csv(&args.data, !args.no_header)?,
    };
    let (pred, clipped) = model.predict_with_clipping(&x)?;
    let rows: Vec<Vec<String>> = match model.task() {
        Task::Regression => pred.iter().map(|p| vec![p.to_string()]).collect(),
        Task::Classification => pred
            .iter()
            .map(|p| vec![p.to_string(), tkrr::model::sign_label(*p).to_string()])
            .collect(),
    };
    let header: &[&str] = match model.task() {
        Task::Regression => &["prediction"],
        Task::Classification => &["score", "label"],
    };
    write_csv(&args.output, header, &rows)?;
    writeln!(
        out,
        "{} predictions written to {} ({clipped} input entries clipped into the domain)",
        x.nrows(),
        args.output.display()
    )?;
    Ok(())
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = TkrrModel::load(&args.model)?;
    let data = load_dataset(&args.data)?;
    let (metric, value) = model_metric(&model, &data)?;
    if let Some(path) = &args.output {
        let row = vec![
            model.task().as_str().to_string(),
            data.len().to_string(),
            metric.to_string(),
            value.to_string(),
        ];
        write_csv(path, &["task", "rows", "metric", "value"], &[row])?;
    }
    let rows = vec![vec![
        model.task().as_str().to_string(),
        data.len().to_string(),
        format!("{value:.6e}"),
    ]];
    write!(out, "{}", render_table(&["task", "rows", metric], &rows))?;
    Ok(())
}

/// Kernel approximation error for one basis size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub m_hat: usize,
    pub sup_error: f64,
    pub mean_error: f64,
}

/// Compares the one-dimensional feature approximation with the exact Gaussian
/// kernel on all `grid²` pairs of a uniform grid over `[-U/2, U/2]`.
pub fn kernel_errors(
    lengthscale: f64,
    half_width: f64,
    m_hats: &[usize],
    grid: usize,
) -> Result<Vec<BenchRow>, CliError> {
    let params = KernelParams::new(lengthscale)?;
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(CliError::Usage(format!(
            "half width must be positive, got {half_width}"
        )));
    }
    if grid == 0 || m_hats.is_empty() {
        return Err(CliError::Usage(
            "grid size and the m_hat list must be non-empty".into(),
        ));
    }
    let points: Vec<f64> = if grid == 1 {
        vec![0.0]
    } else {
        (0..grid)
            .map(|k| -0.5 * half_width + half_width * k as f64 / (grid - 1) as f64)
            .collect()
    };
    let mut exact = Vec::with_capacity(grid * grid);
    for a in &points {
        for b in &points {
            exact.push(gaussian_kernel(&[*a], &[*b], params)?);
        }
    }
    m_hats
        .iter()
        .map(|&m_hat| {
            let cfg = FeatureConfig::uniform(m_hat, lengthscale, half_width, 1)?;
            let feats = points
                .iter()
                .map(|p| hilbert_feature(*p, half_width, &cfg))
                .collect::<tkrr::Result<Vec<_>>>()?;
            let (mut sup, mut sum) = (0.0f64, 0.0);
            for (i, za) in feats.iter().enumerate() {
                for (j, zb) in feats.iter().enumerate() {
                    let err = (za.dot(zb) - exact[i * grid + j]).abs();
                    sup = sup.max(err);
                    sum += err;
                }
            }
            Ok(BenchRow {
                m_hat,
                sup_error: sup,
                mean_error: sum / (grid * grid) as f64,
            })
        })
        .collect()
}

pub fn kernel_bench(args: &KernelBenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = kernel_errors(args.lengthscale, args.half_width, &args.m_hat, args.grid)?;
    if let Some(path) = &args.output {
        let csv_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![r.m_hat.to_string(), r.sup_error.to_string(), r.mean_error.to_string()])
            .collect();
        write_csv(path, &["m_hat", "sup_error", "mean_error"], &csv_rows)?;
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.m_hat.to_string(),
                format!("{:.6e}", r.sup_error),
                format!("{:.6e}", r.mean_error),
            ]
        })
        .collect();
    write!(out, "{}", render_table(&["m_hat", "sup_error", "mean_error"], &table))?;
    Ok(())
}

/// Writes `data` with inputs `x0..` followed by the target column `y`.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut header: Vec<String> = (0..data.dims()).map(|d| format!("x{d}")).collect();
    header.push("y".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..data.len())
        .map(|n| {
            let mut row: Vec<String> = data.x().row(n).iter().map(|v| v.to_string()).collect();
            row.push(data.y()[n].to_string());
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub fn synth(args: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.rows == 0 {
        return Err(CliError::Usage("rows must be at least 1".into()));
    }
    let data = match args.kind {
        SynthKind::Bumps => {
            if args.dims == 0 {
                return Err(CliError::Usage("dims must be at least 1".into()));
            }
            synth::bumps_regression(args.rows, args.dims, args.seed)
        }
        SynthKind::Banana => {
            if !(args.noise >= 0.0 && args.noise.is_finite()) {
                return Err(CliError::Usage("noise must be non-negative".into()));
            }
            synth::banana(args.rows, args.noise, args.seed)
        }
    };
    write_dataset(&args.output, &data)?;
    writeln!(
        out,
        "{} rows x {} inputs written to {}",
        data.len(),
        data.dims(),
        args.output.display()
    )?;
    Ok(())
}
