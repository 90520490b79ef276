//! The training loop. Each step runs a batched forward pass, logs the loss
//! and asks the optimizer for a new description.

pub mod loss;
pub mod runlog;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};

use crate::backend::{Backend, ChatMessage, SamplingParams};
use crate::datasets::{self, Dataset, Split};
use crate::domain::{
    full_theta_text, DataPoint, Input, ModelParams, OptimizerConfig, OptimizerUpdate, Prediction, RunConfig,
    StepRecord, Target, TaskFamily, TaskSpec, UpdateStrategy,
};
use crate::error::{Result, VmlError};
use crate::numfmt::{mean, py_repr, round_to};
use crate::parsing::{parse_learner_output, parse_optimizer_output};
use crate::prompting::{
    render_learner_prompt, render_optimizer_prompt, render_summary_prompt, Exchange, OptimizerPromptArgs,
    PromptFixtureSet,
};

pub use loss::{compute_losses, Losses};
pub use runlog::{EvalLine, ExchangeLine, ResumeState, RunLogWriter, StepLine};

/// Runs one learner call per input and parses each reply.
///
/// Calls fan out over at most `concurrency` threads (further capped by the
/// backend). Results keep input order. A backend error is returned only after
/// every call of the batch has finished.
pub fn forward_batch(
    learner: &dyn Backend,
    fixtures: &PromptFixtureSet,
    task: &TaskSpec,
    params: &ModelParams,
    inputs: &[Input],
    sampling: &SamplingParams,
    concurrency: usize,
) -> Result<Vec<Prediction>> {
    if inputs.is_empty() {
        return Err(VmlError::invalid("forward pass needs a non-empty batch"));
    }
    let theta = params.full_theta_text();
    let prompts = inputs
        .iter()
        .map(|x| render_learner_prompt(fixtures, task, &theta, x))
        .collect::<Result<Vec<_>>>()?;
    let workers = concurrency.min(learner.max_concurrency());
    let replies = fan_out(prompts.len(), workers, |i| learner.chat(&prompts[i], sampling));
    let failed = replies.iter().filter(|r| r.is_err()).count();
    let mut out = Vec::with_capacity(replies.len());
    for reply in replies {
        match reply {
            Ok(text) => out.push(parse_learner_output(&text, task)),
            Err(e) => {
                warn!("{failed} of {} learner calls failed", inputs.len());
                return Err(e);
            }
        }
    }
    Ok(out)
}

/// Evaluates `f(0..count)` on up to `workers` scoped threads and returns
/// the results in index order.
pub fn fan_out<T: Send>(count: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = workers.clamp(1, count.max(1));
    if workers == 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let value = f(i);
                slots.lock().expect("slot lock")[i] = Some(value);
            });
        }
    });
    slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .map(|v| v.expect("every slot is filled"))
        .collect()
}

/// Replaces regression placeholders with the batch mean target, so a bad
/// generation still yields a finite loss.
pub fn apply_fallbacks(task: &TaskSpec, predictions: &mut [Prediction], targets: &[Target]) {
    if task.family != TaskFamily::Regression1d {
        return;
    }
    let ys: Vec<f64> = targets.iter().filter_map(Target::as_real).collect();
    let fill = round_to(mean(&ys), task.decimals);
    for p in predictions.iter_mut() {
        if p.value.as_real().is_some_and(f64::is_nan) {
            p.value = Target::Real(fill);
        }
    }
}

fn new_theta_header(fixtures: &PromptFixtureSet) -> &'static str {
    if fixtures.optimizer_template.contains("Model Descriptions") {
        "New Model Descriptions:"
    } else {
        "New Pattern Descriptions:"
    }
}

/// Result of one optimizer call.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOutcome {
    /// The parsed update, or `None` when both attempts were unparseable.
    pub update: Option<OptimizerUpdate>,
    /// Final user message of the rendered prompt.
    pub prompt: String,
    /// The last raw response.
    pub response: String,
    /// Number of unparseable responses (0, 1 or 2).
    pub parse_failures: usize,
}

impl OptimizerOutcome {
    /// The exchange kept in the optimizer history.
    pub fn exchange(&self) -> Exchange {
        Exchange {
            prompt: self.prompt.clone(),
            response: self.response.clone(),
        }
    }
}

/// Inputs of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerStepArgs<'a> {
    pub theta: &'a str,
    pub inputs: &'a [Input],
    pub predictions: &'a [Target],
    pub targets: &'a [Target],
    pub loss: Option<f64>,
    pub history: &'a [Exchange],
}

/// Asks the optimizer for an update and parses its reply.
///
/// An unparseable reply is retried once with a corrective turn appended.
pub fn optimizer_step(
    optimizer: &dyn Backend,
    fixtures: &PromptFixtureSet,
    task: &TaskSpec,
    cfg: &OptimizerConfig,
    args: OptimizerStepArgs<'_>,
) -> Result<OptimizerOutcome> {
    let mut messages = render_optimizer_prompt(
        fixtures,
        task,
        OptimizerPromptArgs {
            theta: args.theta,
            inputs: args.inputs,
            predictions: args.predictions,
            targets: args.targets,
            include_loss_value: cfg.include_loss_value,
            history_window: cfg.history_window,
            history: args.history,
            loss: args.loss,
        },
    )?;
    let prompt = messages.last().expect("prompt has a user turn").content.clone();
    let sampling = SamplingParams::with_temperature(cfg.temperature);
    let mut failures = 0;
    loop {
        let response = optimizer.chat(&messages, &sampling)?;
        match parse_optimizer_output(&response, task) {
            Ok(update) => {
                return Ok(OptimizerOutcome {
                    update: Some(update),
                    prompt,
                    response,
                    parse_failures: failures,
                })
            }
            Err(e) if failures == 0 => {
                warn!("optimizer reply unparseable, retrying: {e}");
                failures += 1;
                let header = new_theta_header(fixtures);
                messages.push(ChatMessage::assistant(response));
                messages.push(ChatMessage::user(format!(
                    "Your reply did not follow the required format. Reply again strictly in that format, with a 'Reasoning:' section followed by a '{header}' section."
                )));
            }
            Err(e) => {
                warn!("optimizer reply unparseable twice, keeping theta: {e}");
                return Ok(OptimizerOutcome {
                    update: None,
                    prompt,
                    response,
                    parse_failures: failures + 1,
                });
            }
        }
    }
}

/// Combines the old learned text with an update.
///
/// `append` joins with a newline. `append_summarized` first shortens the old
/// text with one summarizer call bounded by `cap` words. An empty old text
/// is never joined or summarized.
pub fn apply_update(
    strategy: UpdateStrategy,
    old_theta: &str,
    update: &OptimizerUpdate,
    summarizer: Option<(&dyn Backend, usize)>,
) -> Result<String> {
    let new = update.new_theta.as_str();
    match strategy {
        UpdateStrategy::Replace => Ok(new.to_string()),
        UpdateStrategy::Append if old_theta.is_empty() => Ok(new.to_string()),
        UpdateStrategy::Append => Ok(format!("{old_theta}\n{new}")),
        UpdateStrategy::AppendSummarized => {
            let (backend, cap) =
                summarizer.ok_or_else(|| VmlError::invalid("append-summarized needs a summarizer backend"))?;
            if old_theta.is_empty() {
                return Ok(new.to_string());
            }
            let sampling = SamplingParams {
                max_tokens: u32::try_from(cap.saturating_mul(2)).unwrap_or(u32::MAX).max(16),
                ..SamplingParams::default()
            };
            let summary = backend.chat(&render_summary_prompt(old_theta, cap), &sampling)?;
            Ok(format!("{}\n{new}", summary.trim()))
        }
    }
}

/// Keeps the most recent `cap` exchanges. Returns the log line emitted when
/// anything was dropped.
pub fn truncate_history(history: &mut Vec<Exchange>, cap: usize) -> Option<String> {
    if history.len() <= cap {
        return None;
    }
    let line = format!("Shortening the state from {} to {}", history.len(), cap);
    history.drain(..history.len() - cap);
    info!("{line}");
    Some(line)
}

/// Metrics of a forward-only pass over a data set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub losses: Losses,
    pub accuracy: Option<f64>,
    pub predictions: Vec<Prediction>,
    pub parse_failures: usize,
}

/// Forward passes over `eval_set` with no optimizer call.
pub fn evaluate(
    learner: &dyn Backend,
    fixtures: &PromptFixtureSet,
    task: &TaskSpec,
    params: &ModelParams,
    eval_set: &[DataPoint],
    sampling: &SamplingParams,
    concurrency: usize,
) -> Result<EvalMetrics> {
    if eval_set.is_empty() {
        return Err(VmlError::invalid("evaluation set is empty"));
    }
    let inputs: Vec<Input> = eval_set.iter().map(|p| p.input.clone()).collect();
    let targets: Vec<Target> = eval_set.iter().map(|p| p.target.clone()).collect();
    let mut predictions = forward_batch(learner, fixtures, task, params, &inputs, sampling, concurrency)?;
    let parse_failures = predictions.iter().filter(|p| !p.parse_ok).count();
    apply_fallbacks(task, &mut predictions, &targets);
    let values: Vec<Target> = predictions.iter().map(|p| p.value.clone()).collect();
    let losses = compute_losses(task, &values, &targets)?;
    Ok(EvalMetrics {
        loss: losses.primary(),
        losses,
        accuracy: losses.accuracy,
        predictions,
        parse_failures,
    })
}

/// A finished (or resumed and finished) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: RunConfig,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalLine>,
    pub final_params: ModelParams,
}

impl RunLog {
    /// Checks that each step starts from the previous step's result.
    pub fn theta_chain_ok(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].theta_after == w[1].theta_before)
    }
}

/// The training and test sets a config describes.
///
/// A data file replaces the generated training set. Text tasks have no
/// generated test set.
pub fn load_data(config: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    let train = match (&config.data_file, config.task.family) {
        (Some(path), TaskFamily::ClassificationText) => datasets::load_text_dataset(path)?,
        (Some(path), _) => datasets::read_csv(path, &config.task)?,
        (None, TaskFamily::ClassificationText) => {
            return Err(VmlError::Config("the text task needs a data file".into()))
        }
        (None, _) => datasets::generate(
            config.task_name,
            config.n,
            config.seed,
            config.noise_scale,
            Split::Train,
        )?,
    };
    let test = if config.task.family == TaskFamily::ClassificationText || config.test_size == 0 {
        None
    } else {
        Some(datasets::generate(
            config.task_name,
            config.test_size,
            config.seed,
            config.noise_scale,
            Split::Test,
        )?)
    };
    Ok((train, test))
}

/// The parameters a run starts from: the task definition plus any user
/// prior as the fixed part, and the configured initial text as the
/// learnable part.
pub fn initial_params(config: &RunConfig, fixtures: &PromptFixtureSet) -> Result<ModelParams> {
    let prior = full_theta_text(&fixtures.task_definition, config.prior.trim());
    Ok(ModelParams::from_prior(prior)?.with_learned(config.initial_theta.clone().unwrap_or_default()))
}

/// Console block for one step, using the transcript headings.
pub fn console_block(record: &StepRecord) -> String {
    let mut out = format!("Epoch {} Step {}\n", record.epoch, record.step);
    out.push_str("--------------------- Overall Loss ---------------------\n");
    out.push_str(&py_repr(record.loss));
    out.push('\n');
    if let Some(acc) = record.accuracy {
        out.push_str("------------------ Training Accuracy ------------------\n");
        out.push_str(&py_repr(acc));
        out.push('\n');
    }
    out.push_str("-------------------- Updated Theta --------------------\n");
    out.push_str(&record.theta_after);
    out.push('\n');
    out
}

/// Backends and fixtures a run uses.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub learner: &'a dyn Backend,
    pub optimizer: &'a dyn Backend,
    /// Used by append-summarized; defaults to the optimizer.
    pub summarizer: Option<&'a dyn Backend>,
}

/// Callback invoked after every completed step.
type StepObserver<'a> = Box<dyn FnMut(&StepRecord) + 'a>;

/// Configurable training driver.
pub struct Trainer<'a> {
    config: &'a RunConfig,
    fixtures: &'a PromptFixtureSet,
    backends: Backends<'a>,
    test_set: Option<&'a Dataset>,
    writer: Option<RunLogWriter>,
    resume: ResumeState,
    observer: Option<StepObserver<'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a RunConfig, fixtures: &'a PromptFixtureSet, backends: Backends<'a>) -> Self {
        Trainer {
            config,
            fixtures,
            backends,
            test_set: None,
            writer: None,
            resume: ResumeState::default(),
            observer: None,
        }
    }

    /// Evaluates this set after every step when the config asks for it.
    pub fn test_set(mut self, test: Option<&'a Dataset>) -> Self {
        self.test_set = test;
        self
    }

    /// Persists every step through `writer`, continuing from `resume`.
    pub fn persist(mut self, writer: RunLogWriter, resume: ResumeState) -> Self {
        self.writer = Some(writer);
        self.resume = resume;
        self
    }

    /// Called after each step is persisted.
    pub fn on_step(mut self, f: impl FnMut(&StepRecord) + 'a) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    pub fn run(mut self, data: &Dataset) -> Result<RunLog> {
        let cfg = self.config;
        cfg.validate()?;
        let task = &cfg.task;
        let m = cfg.batch_size;
        if data.points.len() < m {
            return Err(VmlError::invalid(format!(
                "dataset has {} points, fewer than the batch size {m}",
                data.points.len()
            )));
        }
        for p in &data.points {
            p.check(task)?;
        }
        let steps_per_epoch = data.points.len() / m;
        let total = steps_per_epoch * cfg.epochs;
        let mut params = initial_params(cfg, self.fixtures)?;
        let mut history: Vec<Exchange> = Vec::new();
        let mut steps = Vec::with_capacity(total);

        let resumed = std::mem::take(&mut self.resume);
        if resumed.steps.len() > total {
            return Err(VmlError::Config(format!(
                "run directory holds {} steps but the config has {total}",
                resumed.steps.len()
            )));
        }
        for (line, ex) in resumed.steps.into_iter().zip(resumed.exchanges) {
            if ex.accepted {
                history.push(Exchange {
                    prompt: ex.prompt.clone(),
                    response: ex.response.clone(),
                });
                truncate_history(&mut history, cfg.optimizer_cfg.history_window);
            }
            params = params.with_learned(line.theta_after.clone());
            steps.push(line.into_record(Some(ex)));
        }
        if !steps.is_empty() {
            info!("resuming after step {}", steps.len());
        }

        let learner_sampling = SamplingParams::with_temperature(cfg.learner_temperature);
        let mut evals = Vec::new();
        for index in steps.len()..total {
            let started = Instant::now();
            let epoch = index / steps_per_epoch + 1;
            let b = index % steps_per_epoch;
            let batch = &data.points[b * m..(b + 1) * m];
            let inputs: Vec<Input> = batch.iter().map(|p| p.input.clone()).collect();
            let targets: Vec<Target> = batch.iter().map(|p| p.target.clone()).collect();

            let mut predictions = forward_batch(
                self.backends.learner,
                self.fixtures,
                task,
                &params,
                &inputs,
                &learner_sampling,
                cfg.concurrency,
            )?;
            let learner_failures = predictions.iter().filter(|p| !p.parse_ok).count();
            apply_fallbacks(task, &mut predictions, &targets);
            let values: Vec<Target> = predictions.iter().map(|p| p.value.clone()).collect();
            let losses = compute_losses(task, &values, &targets)?;
            let loss = losses.primary();

            let theta_before = params.learned_text().to_string();
            let outcome = optimizer_step(
                self.backends.optimizer,
                self.fixtures,
                task,
                &cfg.optimizer_cfg,
                OptimizerStepArgs {
                    theta: &params.full_theta_text(),
                    inputs: &inputs,
                    predictions: &values,
                    targets: &targets,
                    loss: Some(loss),
                    history: &history,
                },
            )?;
            let accepted = outcome.update.is_some();
            let (theta_after, reasoning) = match &outcome.update {
                Some(update) => {
                    let summarizer = self.backends.summarizer.unwrap_or(self.backends.optimizer);
                    let text = apply_update(
                        cfg.optimizer_cfg.update_strategy,
                        &theta_before,
                        update,
                        Some((summarizer, cfg.optimizer_cfg.summary_length_cap)),
                    )?;
                    (text, update.reasoning.clone())
                }
                None => (theta_before.clone(), String::new()),
            };
            if accepted {
                history.push(outcome.exchange());
                truncate_history(&mut history, cfg.optimizer_cfg.history_window);
            }
            params = params.with_learned(theta_after.clone());

            let record = StepRecord {
                epoch,
                step: index + 1,
                inputs,
                targets,
                predictions,
                raw_optimizer_prompt: outcome.prompt,
                raw_optimizer_response: outcome.response,
                loss,
                loss_mse: losses.mse,
                loss_ce: losses.ce,
                loss_zero_one: losses.zero_one,
                accuracy: losses.accuracy,
                theta_before,
                theta_after,
                reasoning,
                parse_failures: learner_failures + usize::from(!accepted),
                duration_ms: u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX),
            };
            if let Some(w) = self.writer.as_mut() {
                w.append(&record, accepted)?;
            }
            if let (true, Some(test)) = (cfg.eval_each_step, self.test_set) {
                let metrics = evaluate(
                    self.backends.learner,
                    self.fixtures,
                    task,
                    &params,
                    &test.points,
                    &learner_sampling,
                    cfg.concurrency,
                )?;
                let line = EvalLine {
                    step: record.step,
                    loss: metrics.loss,
                    accuracy: metrics.accuracy,
                    parse_failures: metrics.parse_failures,
                };
                if let Some(w) = self.writer.as_mut() {
                    w.append_eval(&line)?;
                }
                evals.push(line);
            }
            if let Some(f) = self.observer.as_mut() {
                f(&record);
            }
            steps.push(record);
        }
        if let Some(w) = self.writer.as_ref() {
            w.write_final_theta(params.learned_text())?;
        }
        Ok(RunLog {
            config: cfg.clone(),
            steps,
            evals,
            final_params: params,
        })
    }
}

/// Trains on `data` without persistence.
pub fn train(
    config: &RunConfig,
    fixtures: &PromptFixtureSet,
    learner: &dyn Backend,
    optimizer: &dyn Backend,
    data: &Dataset,
) -> Result<RunLog> {
    Trainer::new(
        config,
        fixtures,
        Backends {
            learner,
            optimizer,
            summarizer: None,
        },
    )
    .run(data)
}
