//! Experiment harnesses built on the learner: grid fidelity, numerical
//! error, semantic invariance, Monte-Carlo ensembles and run comparison.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::backend::{Backend, SamplingParams};
use crate::domain::{
    full_theta_text, one_hot, BuiltinTask, Input, ModelParams, Prediction, Target, TaskFamily, TaskSpec,
};
use crate::error::{Result, VmlError};
use crate::numfmt::{mean, round_to, std_pop};
use crate::parsing::parse_learner_output;
use crate::prompting::{render_learner_prompt, PromptFixtureSet};
use crate::training::fan_out;
use crate::training::runlog::StepLine;

/// Default number of concurrent learner calls in a study.
pub const DEFAULT_IN_FLIGHT: usize = 8;
/// Default number of grid points.
pub const DEFAULT_GRID_POINTS: usize = 41;
/// Default number of repeats per grid point.
pub const DEFAULT_REPEATS: usize = 10;

/// Learner access shared by the studies.
#[derive(Clone, Copy)]
pub struct StudyContext<'a> {
    pub backend: &'a dyn Backend,
    pub fixtures: &'a PromptFixtureSet,
    pub task: &'a TaskSpec,
    pub temperature: f64,
    pub in_flight: usize,
}

impl StudyContext<'_> {
    fn sampling(&self) -> SamplingParams {
        SamplingParams::with_temperature(self.temperature)
    }

    /// One learner call per `(theta, input)` job, fanned out.
    fn run_jobs(&self, jobs: &[(String, Input)]) -> Result<Vec<Prediction>> {
        let sampling = self.sampling();
        let replies = fan_out(jobs.len(), self.in_flight, |i| {
            let (theta, input) = &jobs[i];
            let messages = render_learner_prompt(self.fixtures, self.task, theta, input)?;
            self.backend.chat(&messages, &sampling)
        });
        replies
            .into_iter()
            .map(|r| r.map(|text| parse_learner_output(&text, self.task)))
            .collect()
    }

    /// The parameter section shown for a study theta: the task definition
    /// followed by the text under test.
    fn theta_full(&self, theta: &str) -> String {
        full_theta_text(&self.fixtures.task_definition, theta.trim())
    }
}

/// Evenly spaced points over `[lo, hi]`, rounded to 6 decimals.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| round_to(lo + (hi - lo) * i as f64 / (points - 1) as f64, 6))
            .collect(),
    }
}

/// The default study grid of a regression task.
pub fn default_grid(task: BuiltinTask) -> Result<Vec<f64>> {
    let (lo, hi) = task
        .input_range()
        .ok_or_else(|| VmlError::invalid(format!("task {task} has no scalar input range")))?;
    Ok(linspace(lo, hi, DEFAULT_GRID_POINTS))
}

/// Statistics of the repeated evaluations at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub x: f64,
    /// Mean of the parsed samples; NaN when none parsed.
    pub mean: f64,
    /// Population standard deviation of the parsed samples.
    pub stdev: f64,
    pub n_ok: usize,
    pub n_fail: usize,
    pub samples: Vec<f64>,
}

impl GridRow {
    /// Set when the stdev rests on fewer than two samples.
    pub fn single_sample(&self) -> bool {
        self.n_ok < 2
    }

    /// Set when no repeat produced a usable value.
    pub fn flagged(&self) -> bool {
        self.n_ok == 0
    }
}

/// Evaluates `theta` `repeats` times at each grid point.
pub fn grid_eval(ctx: &StudyContext<'_>, theta: &str, grid: &[f64], repeats: usize) -> Result<Vec<GridRow>> {
    if repeats == 0 {
        return Err(VmlError::invalid("repeats must be at least 1"));
    }
    if ctx.task.family != TaskFamily::Regression1d {
        return Err(VmlError::invalid("grid evaluation needs a regression task"));
    }
    let theta = ctx.theta_full(theta);
    let jobs: Vec<(String, Input)> = grid
        .iter()
        .flat_map(|x| std::iter::repeat_n((theta.clone(), Input::Vector(vec![*x])), repeats))
        .collect();
    let preds = ctx.run_jobs(&jobs)?;
    Ok(grid
        .iter()
        .zip(preds.chunks(repeats))
        .map(|(x, chunk)| {
            let samples: Vec<f64> = chunk
                .iter()
                .filter(|p| p.parse_ok)
                .filter_map(|p| p.value.as_real())
                .collect();
            let (mean, stdev) = if samples.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (mean(&samples), std_pop(&samples))
            };
            GridRow {
                x: *x,
                mean,
                stdev,
                n_ok: samples.len(),
                n_fail: repeats - samples.len(),
                samples,
            }
        })
        .collect())
}

/// Analytic functions the numerical-error report compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruth {
    /// 3x + 4
    Linear3x4,
    /// 3x² + x + 2
    Poly3x2x2,
    /// sin(x) + 2
    Sin,
}

impl GroundTruth {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            GroundTruth::Linear3x4 => 3.0 * x + 4.0,
            GroundTruth::Poly3x2x2 => 3.0 * x * x + x + 2.0,
            GroundTruth::Sin => x.sin() + 2.0,
        }
    }

    /// The regression task whose data this function generates.
    pub fn task(self) -> BuiltinTask {
        match self {
            GroundTruth::Linear3x4 => BuiltinTask::Linear,
            GroundTruth::Poly3x2x2 => BuiltinTask::Polynomial,
            GroundTruth::Sin => BuiltinTask::Sinusoid,
        }
    }

    /// A symbolic description the oracle learner can evaluate.
    pub fn theta(self) -> &'static str {
        match self {
            GroundTruth::Linear3x4 => "y = 3x + 4",
            GroundTruth::Poly3x2x2 => "y = 3x^2 + x + 2",
            GroundTruth::Sin => "y = sin(x) + 2",
        }
    }
}

impl FromStr for GroundTruth {
    type Err = VmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_3x4" => Ok(GroundTruth::Linear3x4),
            "poly_3x2x2" => Ok(GroundTruth::Poly3x2x2),
            "sin" => Ok(GroundTruth::Sin),
            _ => Err(VmlError::invalid(format!(
                "unknown ground truth '{s}', expected linear_3x4, poly_3x2x2 or sin"
            ))),
        }
    }
}

/// Per-point errors of a grid table against a ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<GridRow>,
    /// `mean - f(x)` per row; NaN for flagged rows.
    pub errors: Vec<f64>,
    /// Mean absolute error over unflagged rows.
    pub mae: f64,
    pub max_abs_error: f64,
}

pub fn numerical_error_report(table: &[GridRow], ground_truth: GroundTruth) -> ErrorReport {
    let errors: Vec<f64> = table.iter().map(|r| r.mean - ground_truth.eval(r.x)).collect();
    let valid: Vec<f64> = errors.iter().filter(|e| !e.is_nan()).map(|e| e.abs()).collect();
    let (mae, max_abs_error) = if valid.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (mean(&valid), valid.iter().copied().fold(0.0, f64::max))
    };
    ErrorReport {
        rows: table.to_vec(),
        errors,
        mae,
        max_abs_error,
    }
}

/// CSV with header `x,mean,stdev,n_ok,n_fail` and an `error` column when
/// errors are given.
pub fn grid_csv(rows: &[GridRow], errors: Option<&[f64]>) -> String {
    let mut out = String::from("x,mean,stdev,n_ok,n_fail");
    if errors.is_some() {
        out.push_str(",error");
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(out, "{},{},{},{},{}", r.x, r.mean, r.stdev, r.n_ok, r.n_fail);
        if let Some(e) = errors {
            let _ = write!(out, ",{}", e[i]);
        }
        out.push('\n');
    }
    out
}

/// Splits a variants file on lines holding only `---`.
pub fn parse_variants(text: &str) -> Vec<String> {
    let mut variants = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim() == "---" {
            variants.push(std::mem::take(&mut current));
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    variants.push(current);
    variants
        .into_iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

/// Grid tables per variant plus their pairwise discrepancies.
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub tables: Vec<Vec<GridRow>>,
    /// `(a, b, max over the grid of |mean_a - mean_b|)` for each pair.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl InvarianceReport {
    /// Plain-text summary, one line per pair.
    pub fn render(&self) -> String {
        let mut out = String::from("variant_a variant_b max_mean_discrepancy\n");
        for (a, b, d) in &self.pairs {
            let _ = writeln!(out, "{} {} {d}", variant_label(*a), variant_label(*b));
        }
        out
    }
}

fn variant_label(i: usize) -> String {
    match u8::try_from(i) {
        Ok(n) if n < 26 => char::from(b'a' + n).to_string(),
        _ => i.to_string(),
    }
}

/// Largest absolute mean difference between two tables; NaN when a point is
/// flagged in either.
fn max_discrepancy(a: &[GridRow], b: &[GridRow]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| (ra.mean - rb.mean).abs())
        .fold(0.0, |acc, d| {
            if d.is_nan() || acc.is_nan() {
                f64::NAN
            } else {
                acc.max(d)
            }
        })
}

pub fn invariance_study(
    ctx: &StudyContext<'_>,
    variants: &[String],
    grid: &[f64],
    repeats: usize,
) -> Result<InvarianceReport> {
    if variants.len() < 2 {
        return Err(VmlError::invalid(format!(
            "an invariance study needs at least 2 variants, got {}",
            variants.len()
        )));
    }
    let tables = variants
        .iter()
        .map(|v| grid_eval(ctx, v, grid, repeats))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for a in 0..tables.len() {
        for b in a + 1..tables.len() {
            pairs.push((a, b, max_discrepancy(&tables[a], &tables[b])));
        }
    }
    Ok(InvarianceReport { tables, pairs })
}

/// Monte-Carlo estimate of the predictive distribution at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// Sample mean for regression; averaged probability vector otherwise.
    pub mean: Target,
    /// Standard deviation per output component.
    pub spread: Vec<f64>,
    pub samples: Vec<Prediction>,
    pub failures: usize,
}

pub fn ensemble_predict(
    ctx: &StudyContext<'_>,
    params: &ModelParams,
    input: &Input,
    samples: usize,
) -> Result<Ensemble> {
    if samples == 0 {
        return Err(VmlError::invalid("an ensemble needs at least one sample"));
    }
    let theta = params.full_theta_text();
    let jobs = vec![(theta, input.clone()); samples];
    let preds = ctx.run_jobs(&jobs)?;
    let ok: Vec<&Prediction> = preds.iter().filter(|p| p.parse_ok).collect();
    if ok.is_empty() {
        return Err(VmlError::EnsembleFailure { samples });
    }
    let width = match ctx.task.family {
        TaskFamily::Regression1d => 1,
        _ => ctx.task.label_count,
    };
    let vectors: Vec<Vec<f64>> = ok
        .iter()
        .map(|p| match &p.value {
            Target::Real(v) => vec![*v],
            Target::Probs(v) => v.clone(),
            Target::Label(l) => one_hot(*l, width),
        })
        .collect();
    let columns: Vec<Vec<f64>> = (0..width).map(|k| vectors.iter().map(|v| v[k]).collect()).collect();
    let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let spread: Vec<f64> = columns.iter().map(|c| std_pop(c)).collect();
    let mean = match ctx.task.family {
        TaskFamily::Regression1d => Target::Real(means[0]),
        _ => {
            let total: f64 = means.iter().sum();
            if total == 1.0 || total == 0.0 {
                Target::Probs(means)
            } else {
                Target::Probs(means.iter().map(|m| m / total).collect())
            }
        }
    };
    Ok(Ensemble {
        mean,
        spread,
        failures: preds.len() - ok.len(),
        samples: preds,
    })
}

/// Step-aligned comparison of two runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunComparison {
    /// `(step, loss_a, loss_b, loss_b - loss_a)` per step.
    pub rows: Vec<(usize, f64, f64, f64)>,
    pub final_loss_delta: f64,
    /// Trapezoidal area under the loss curve of b minus that of a.
    pub auc_delta: f64,
}

fn auc(losses: &[f64]) -> f64 {
    losses.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum()
}

fn loss_kind(line: &StepLine) -> u8 {
    match (line.loss_mse, line.loss_ce) {
        (Some(_), _) => 0,
        (None, Some(_)) => 1,
        _ => 2,
    }
}

pub fn compare_runs(a: &[StepLine], b: &[StepLine]) -> Result<RunComparison> {
    if a.len() != b.len() {
        return Err(VmlError::invalid(format!(
            "runs have {} and {} steps",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(VmlError::invalid("runs have no steps"));
    }
    let mut rows = Vec::with_capacity(a.len());
    for (la, lb) in a.iter().zip(b) {
        if la.step != lb.step {
            return Err(VmlError::invalid(format!(
                "step {} is aligned with step {}",
                la.step, lb.step
            )));
        }
        if loss_kind(la) != loss_kind(lb) {
            return Err(VmlError::invalid(format!("step {} logs different loss kinds", la.step)));
        }
        let (x, y) = match (la.loss(), lb.loss()) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(VmlError::invalid(format!("step {} has no loss", la.step))),
        };
        rows.push((la.step, x, y, y - x));
    }
    let la: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let lb: Vec<f64> = rows.iter().map(|r| r.2).collect();
    Ok(RunComparison {
        final_loss_delta: rows[rows.len() - 1].3,
        auc_delta: auc(&lb) - auc(&la),
        rows,
    })
}
