//! C ABI over `vml-core`.
//!
//! Conventions:
//!
//! - Every fallible function returns a [`VmlStatus`]; results go through
//!   out-pointers that are written only on success.
//! - After a failure, [`vml_last_error_message`] describes it. The message
//!   belongs to the calling thread and stays valid until its next call.
//! - Strings returned through `char **` are owned by the caller and must be
//!   released with [`vml_string_free`].
//! - Handles are opaque and released with their `_free` function; passing
//!   NULL to a `_free` function is a no-op.
//! - Panics never cross the boundary; they surface as `VML_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use vml_core::cli::build_backends;
use vml_core::config::{fixtures_for, load_config};
use vml_core::domain::{BuiltinTask, Input, Target, TaskFamily, TaskSpec};
use vml_core::parsing::{parse_learner_output, parse_optimizer_output};
use vml_core::prompting::{render_learner_prompt, render_optimizer_prompt, OptimizerPromptArgs, PromptFixtureSet};
use vml_core::training::loss::{accuracy, loss_cross_entropy, loss_mse};
use vml_core::training::runlog::RunLogWriter;
use vml_core::training::{load_data, Backends, RunLog, Trainer};
use vml_core::VmlError;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VmlStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    InvalidUtf8 = 3,
    ParseFailure = 4,
    Backend = 5,
    Io = 6,
    Config = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A task with its prompt templates.
pub struct VmlTask {
    spec: TaskSpec,
    fixtures: PromptFixtureSet,
}

/// A finished training run.
pub struct VmlRun {
    log: RunLog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &VmlError) -> VmlStatus {
    match e {
        VmlError::InvalidArgument(_) => VmlStatus::InvalidArgument,
        VmlError::OptimizerParseFailure(_) | VmlError::Ingestion { .. } | VmlError::CorruptLog { .. } => {
            VmlStatus::ParseFailure
        }
        VmlError::Config(_) => VmlStatus::Config,
        VmlError::Io(_) | VmlError::Json(_) => VmlStatus::Io,
        _ if e.is_backend() => VmlStatus::Backend,
        _ => VmlStatus::InvalidArgument,
    }
}

/// Internal error carrying its status.
struct Fail(VmlStatus, String);

impl From<VmlError> for Fail {
    fn from(e: VmlError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> VmlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VmlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            VmlStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(VmlStatus::NullPointer, format!("{name} is NULL"))
}

/// # Safety
/// `p` must be NULL or a NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(VmlStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// # Safety
/// `p` must be NULL only when `n` is 0, else point to `n` readable values.
unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> FfiResult<&'a [T]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// # Safety
/// `out` must be NULL or writable.
unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(VmlStatus::InvalidArgument, "string contains NUL".into()))
}

/// # Safety
/// `task` must be NULL or a live handle from [`vml_task_new`].
unsafe fn task_arg<'a>(task: *const VmlTask) -> FfiResult<&'a VmlTask> {
    task.as_ref().ok_or_else(|| null("task"))
}

/// Width of one prediction value: the class count for probability tasks,
/// 1 otherwise.
fn value_width(spec: &TaskSpec) -> usize {
    match spec.family {
        TaskFamily::Classification2dProb => spec.label_count,
        _ => 1,
    }
}

fn numeric_input_dim(spec: &TaskSpec) -> FfiResult<usize> {
    spec.family
        .input_dim()
        .ok_or_else(|| Fail(VmlStatus::InvalidArgument, "the text task has no numeric inputs".into()))
}

fn values_from(spec: &TaskSpec, flat: &[f64]) -> Vec<Target> {
    match spec.family {
        TaskFamily::Regression1d => flat.iter().map(|v| Target::Real(*v)).collect(),
        TaskFamily::Classification2dProb => flat
            .chunks(spec.label_count)
            .map(|c| Target::Probs(c.to_vec()))
            .collect(),
        _ => flat.iter().map(|v| Target::Label(*v as usize)).collect(),
    }
}

/// Message of the last failure on this thread, or NULL.
#[no_mangle]
pub extern "C" fn vml_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn vml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned through a `char **` out-parameter
/// of this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vml_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a task handle: linear, polynomial, sinusoid, two_blobs,
/// two_circles or text.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vml_task_new(name: *const c_char, out: *mut *mut VmlTask) -> VmlStatus {
    guard(|| {
        let task: BuiltinTask = str_arg(name, "name")?.parse()?;
        let spec = task.spec();
        let fixtures = PromptFixtureSet::builtin(&spec.template_variant)?;
        let handle = Box::into_raw(Box::new(VmlTask { spec, fixtures }));
        write_out(out, handle, "out")
    })
}

/// # Safety
/// `task` must be NULL or a live handle from [`vml_task_new`].
#[no_mangle]
pub unsafe extern "C" fn vml_task_free(task: *mut VmlTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// Number of doubles in one prediction value of the task.
///
/// # Safety
/// `task` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vml_task_value_width(task: *const VmlTask) -> usize {
    task.as_ref().map_or(0, |t| value_width(&t.spec))
}

/// Parses a learner reply. Writes the value (a label is written as a
/// double) and whether parsing succeeded; a failed parse writes the
/// fallback value and still returns OK.
///
/// # Safety
/// `values` must hold `cap` doubles; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vml_parse_learner_output(
    task: *const VmlTask,
    text: *const c_char,
    values: *mut f64,
    cap: usize,
    len: *mut usize,
    parse_ok: *mut bool,
) -> VmlStatus {
    guard(|| {
        let task = task_arg(task)?;
        let p = parse_learner_output(str_arg(text, "text")?, &task.spec);
        let flat: Vec<f64> = match &p.value {
            Target::Real(v) => vec![*v],
            Target::Probs(v) => v.clone(),
            Target::Label(l) => vec![*l as f64],
        };
        write_out(len, flat.len(), "len")?;
        if flat.len() > cap {
            return Err(Fail(
                VmlStatus::BufferTooSmall,
                format!("need {} values, buffer holds {cap}", flat.len()),
            ));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), values, flat.len());
        write_out(parse_ok, p.parse_ok, "parse_ok")
    })
}

/// Parses an optimizer reply into the new description and, when
/// `reasoning` is not NULL, the reasoning text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `new_theta` writable.
#[no_mangle]
pub unsafe extern "C" fn vml_parse_optimizer_output(
    text: *const c_char,
    new_theta: *mut *mut c_char,
    reasoning: *mut *mut c_char,
) -> VmlStatus {
    guard(|| {
        let spec = BuiltinTask::Linear.spec();
        let update = parse_optimizer_output(str_arg(text, "text")?, &spec)?;
        if new_theta.is_null() {
            return Err(null("new_theta"));
        }
        new_theta.write(into_c_string(update.new_theta)?);
        if !reasoning.is_null() {
            reasoning.write(into_c_string(update.reasoning)?);
        }
        Ok(())
    })
}

/// Mean squared error over `n` pairs.
///
/// # Safety
/// `preds` and `targets` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vml_loss_mse(preds: *const f64, targets: *const f64, n: usize, out: *mut f64) -> VmlStatus {
    guard(|| {
        let v = loss_mse(slice_arg(preds, n, "preds")?, slice_arg(targets, n, "targets")?)?;
        write_out(out, v, "out")
    })
}

/// Cross-entropy over `n` row-major probability vectors of width `k`.
///
/// # Safety
/// `preds` and `targets` must hold `n * k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vml_loss_cross_entropy(
    preds: *const f64,
    targets: *const f64,
    n: usize,
    k: usize,
    out: *mut f64,
) -> VmlStatus {
    guard(|| {
        if k == 0 {
            return Err(Fail(VmlStatus::InvalidArgument, "width must be at least 1".into()));
        }
        let total = n
            .checked_mul(k)
            .ok_or_else(|| Fail(VmlStatus::InvalidArgument, "n * k overflows".into()))?;
        let rows = |p: &[f64]| p.chunks(k).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let v = loss_cross_entropy(
            &rows(slice_arg(preds, total, "preds")?),
            &rows(slice_arg(targets, total, "targets")?),
        )?;
        write_out(out, v, "out")
    })
}

/// Fraction of matching labels. A negative prediction marks an
/// unparseable output and counts as wrong.
///
/// # Safety
/// `preds` and `targets` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vml_accuracy(preds: *const i64, targets: *const i64, n: usize, out: *mut f64) -> VmlStatus {
    guard(|| {
        let p: Vec<Option<usize>> = slice_arg(preds, n, "preds")?
            .iter()
            .map(|v| usize::try_from(*v).ok())
            .collect();
        let t = slice_arg(targets, n, "targets")?
            .iter()
            .map(|v| usize::try_from(*v).map_err(|_| Fail(VmlStatus::InvalidArgument, "negative target".into())))
            .collect::<FfiResult<Vec<_>>>()?;
        let v = accuracy(&p, &t)?;
        write_out(out, v, "out")
    })
}

/// Renders the learner prompt for one numeric input of `dim` values.
///
/// # Safety
/// `theta` must be a NUL-terminated string, `input` must hold `dim`
/// doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vml_render_learner_prompt(
    task: *const VmlTask,
    theta: *const c_char,
    input: *const f64,
    dim: usize,
    out: *mut *mut c_char,
) -> VmlStatus {
    guard(|| {
        let task = task_arg(task)?;
        let expected = numeric_input_dim(&task.spec)?;
        if dim != expected {
            return Err(Fail(
                VmlStatus::InvalidArgument,
                format!("input has {dim} values, expected {expected}"),
            ));
        }
        let x = Input::Vector(slice_arg(input, dim, "input")?.to_vec());
        let messages = render_learner_prompt(&task.fixtures, &task.spec, str_arg(theta, "theta")?, &x)?;
        let text = messages.into_iter().last().map(|m| m.content).unwrap_or_default();
        write_out(out, into_c_string(text)?, "out")
    })
}

/// Renders the optimizer prompt for a batch of `n` numeric points.
/// `predictions` and `targets` hold `n * vml_task_value_width(task)` values.
/// The loss line is included when `include_loss` is true.
///
/// # Safety
/// Array pointers must hold the stated number of doubles; `theta` must be a
/// NUL-terminated string and `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn vml_render_optimizer_prompt(
    task: *const VmlTask,
    theta: *const c_char,
    inputs: *const f64,
    predictions: *const f64,
    targets: *const f64,
    n: usize,
    include_loss: bool,
    loss: f64,
    out: *mut *mut c_char,
) -> VmlStatus {
    guard(|| {
        let task = task_arg(task)?;
        let dim = numeric_input_dim(&task.spec)?;
        let w = value_width(&task.spec);
        let xs: Vec<Input> = slice_arg(inputs, n * dim, "inputs")?
            .chunks(dim)
            .map(|c| Input::Vector(c.to_vec()))
            .collect();
        let preds = values_from(&task.spec, slice_arg(predictions, n * w, "predictions")?);
        let tgts = values_from(&task.spec, slice_arg(targets, n * w, "targets")?);
        let messages = render_optimizer_prompt(
            &task.fixtures,
            &task.spec,
            OptimizerPromptArgs {
                theta: str_arg(theta, "theta")?,
                inputs: &xs,
                predictions: &preds,
                targets: &tgts,
                include_loss_value: include_loss,
                history_window: 0,
                history: &[],
                loss: Some(loss),
            },
        )?;
        let text = messages.into_iter().last().map(|m| m.content).unwrap_or_default();
        write_out(out, into_c_string(text)?, "out")
    })
}

/// Runs a full training from a TOML config, persisting the run log to its
/// output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vml_train(config_path: *const c_char, out: *mut *mut VmlRun) -> VmlStatus {
    guard(|| {
        let cfg = load_config(Path::new(str_arg(config_path, "config_path")?))?;
        let fixtures = fixtures_for(&cfg)?;
        let (train, test) = load_data(&cfg)?;
        let (learner, optimizer) = build_backends(&cfg, false)?;
        let (writer, resume) = RunLogWriter::open(&cfg.out_dir, &cfg, false)?;
        let log = Trainer::new(
            &cfg,
            &fixtures,
            Backends {
                learner: learner.as_ref(),
                optimizer: optimizer.as_ref(),
                summarizer: None,
            },
        )
        .test_set(test.as_ref())
        .persist(writer, resume)
        .run(&train)?;
        write_out(out, Box::into_raw(Box::new(VmlRun { log })), "out")
    })
}

/// Number of steps in a run.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vml_run_step_count(run: *const VmlRun) -> usize {
    run.as_ref().map_or(0, |r| r.log.steps.len())
}

/// Logged loss of step `index` (0-based).
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vml_run_step_loss(run: *const VmlRun, index: usize, out: *mut f64) -> VmlStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let step = run
            .log
            .steps
            .get(index)
            .ok_or_else(|| Fail(VmlStatus::InvalidArgument, format!("no step at index {index}")))?;
        write_out(out, step.loss, "out")
    })
}

/// The final learned description of a run.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vml_run_final_theta(run: *const VmlRun, out: *mut *mut c_char) -> VmlStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let text = run.log.final_params.learned_text().to_string();
        write_out(out, into_c_string(text)?, "out")
    })
}

/// # Safety
/// `run` must be NULL or a live handle from [`vml_train`].
#[no_mangle]
pub unsafe extern "C" fn vml_run_free(run: *mut VmlRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
