//! Symbolic oracle backend.
//!
//! As a learner it reads an equation or decision rule out of the parameter
//! text and evaluates it exactly. As an optimizer it fits the batch by least
//! squares (regression) or by exhaustive rule search (2-D classification).
//! Anything it cannot interpret is an error; it never guesses.

use std::sync::OnceLock;

use regex::Regex;

use super::expr::{self, Expr};
use super::{validate_messages, Backend, ChatMessage, SamplingParams};
use crate::domain::{argmax, one_hot, TaskFamily, TaskSpec};
use crate::error::{Result, VmlError};
use crate::numfmt::round_to;
use crate::parsing::parse_number_list;
use crate::prompting::SUMMARY_INSTRUCTION;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleRole {
    Learner,
    Optimizer,
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    role: OracleRole,
    task: TaskSpec,
}

impl OracleBackend {
    pub fn new(role: OracleRole, task: TaskSpec) -> Result<Self> {
        if task.family == TaskFamily::ClassificationText {
            return Err(VmlError::invalid("the oracle has no model of text classification"));
        }
        Ok(OracleBackend { role, task })
    }
}

fn cannot(msg: impl Into<String>) -> VmlError {
    VmlError::OracleCannotInterpret(msg.into())
}

/// Text of the block that follows a `** {header}...**` line.
///
/// With `multi_paragraph` the block runs to the next `** ` header; otherwise
/// it ends at the first blank line.
fn block<'a>(prompt: &'a str, header: &str, multi_paragraph: bool) -> Option<&'a str> {
    let start = prompt.find(header)?;
    let after_header = &prompt[start..];
    let body_start = after_header.find("**\n")? + 3;
    let body = after_header[body_start..].trim_start_matches('\n');
    let end = if multi_paragraph {
        body.find("\n\n** ").unwrap_or(body.len())
    } else {
        body.find("\n\n").unwrap_or(body.len())
    };
    Some(&body[..end])
}

fn equation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?mi)(?:^|[\s:(])(?:y|output|f\(x\))\s*=\s*([^\n]+)").unwrap())
}

fn trim_clause(s: &str) -> &str {
    s.trim().trim_end_matches(['.', ',', ';', ':']).trim()
}

/// The last parseable `y = ...` equation in a parameter text.
pub fn last_equation(theta: &str) -> Option<Expr> {
    equation_re()
        .captures_iter(theta)
        .filter_map(|c| expr::parse(trim_clause(&c[1]), 1).ok())
        .last()
}

/// A classification rule value: a label or an explicit probability vector.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleValue {
    Label(usize),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Comparison {
    lhs: Expr,
    op: &'static str,
    rhs: Expr,
}

impl Comparison {
    fn holds(&self, p: &[f64]) -> bool {
        let (a, b) = (self.lhs.eval(p), self.rhs.eval(p));
        match self.op {
            "<" => a < b,
            "<=" => a <= b,
            ">" => a > b,
            ">=" => a >= b,
            _ => unreachable!(),
        }
    }
}

/// Disjunction of conjunctions of comparisons.
#[derive(Debug, Clone)]
struct Condition(Vec<Vec<Comparison>>);

impl Condition {
    fn parse(s: &str) -> Option<Condition> {
        let mut any = Vec::new();
        for part in s.split(" or ") {
            let mut all = Vec::new();
            for atom in part.split(" and ") {
                all.push(parse_comparison(atom)?);
            }
            any.push(all);
        }
        Some(Condition(any))
    }

    fn holds(&self, p: &[f64]) -> bool {
        self.0.iter().any(|all| all.iter().all(|c| c.holds(p)))
    }
}

fn parse_comparison(s: &str) -> Option<Comparison> {
    let s = s.replace('≤', "<=").replace('≥', ">=");
    for op in ["<=", ">=", "<", ">"] {
        if let Some((l, r)) = s.split_once(op) {
            return Some(Comparison {
                lhs: expr::parse(l.trim(), 2).ok()?,
                op,
                rhs: expr::parse(trim_clause(r), 2).ok()?,
            });
        }
    }
    None
}

/// An ordered list of `If <condition>, output <value>` clauses and a default.
#[derive(Debug, Clone)]
pub struct Rule {
    clauses: Vec<(Condition, RuleValue)>,
    default: Option<RuleValue>,
}

fn rule_res() -> &'static (Regex, Regex) {
    static RE: OnceLock<(Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        let value = r"(\[[^\]]*\]|-?\d+(?:\.\d+)?)";
        let verb = r"(?:then\s+)?(?:output|predict|classify as|class(?:\s+label)?\s*(?:=|is)?)\s*:?\s*";
        (
            Regex::new(&format!(r"(?i)\bif\s+(.+?),\s*{verb}{value}")).unwrap(),
            Regex::new(&format!(r"(?i)\b(?:otherwise|else)\s*,?\s*{verb}{value}")).unwrap(),
        )
    })
}

fn parse_rule_value(s: &str) -> Option<RuleValue> {
    if s.starts_with('[') {
        Some(RuleValue::Vector(parse_number_list(s)))
    } else {
        let v: f64 = s.parse().ok()?;
        (v.fract() == 0.0 && v >= 0.0).then_some(RuleValue::Label(v as usize))
    }
}

impl Rule {
    /// Reads every clause out of a parameter text.
    pub fn parse(theta: &str) -> Option<Rule> {
        let (if_re, else_re) = rule_res();
        let mut clauses = Vec::new();
        for c in if_re.captures_iter(theta) {
            let cond = Condition::parse(c[1].trim())?;
            clauses.push((cond, parse_rule_value(&c[2])?));
        }
        let default = match else_re.captures_iter(theta).last() {
            Some(c) => Some(parse_rule_value(&c[1])?),
            None => None,
        };
        (!clauses.is_empty()).then_some(Rule { clauses, default })
    }

    pub fn apply(&self, p: &[f64]) -> Option<&RuleValue> {
        self.clauses
            .iter()
            .find(|(cond, _)| cond.holds(p))
            .map(|(_, v)| v)
            .or(self.default.as_ref())
    }
}

/// Extracts the parameter section and the input of a learner prompt.
fn learner_parts(prompt: &str) -> Result<(&str, &str)> {
    let theta = block(prompt, " Descriptions: **", true).ok_or_else(|| cannot("no descriptions section"))?;
    let input = block(prompt, "** Input: **", false).ok_or_else(|| cannot("no input section"))?;
    Ok((theta, input))
}

impl OracleBackend {
    fn learn(&self, prompt: &str) -> Result<String> {
        let (theta, input) = learner_parts(prompt)?;
        let point = parse_number_list(input);
        let d = self.task.decimals as usize;
        match self.task.family {
            TaskFamily::Regression1d => {
                let e = last_equation(theta).ok_or_else(|| cannot(format!("no equation in '{theta}'")))?;
                let x = *point.first().ok_or_else(|| cannot("no numeric input"))?;
                let y = e.eval(&[x]);
                if !y.is_finite() {
                    return Err(cannot(format!("equation is undefined at x = {x}")));
                }
                let y = round_to(y, self.task.decimals);
                Ok(format!(
                    "Explanations: evaluated the equation at x = {x}.\n\nOutput: [{y:.d$}]"
                ))
            }
            TaskFamily::Classification2dLabel | TaskFamily::Classification2dProb => {
                if point.len() != 2 {
                    return Err(cannot("expected a 2-D input"));
                }
                let rule = Rule::parse(theta).ok_or_else(|| cannot(format!("no decision rule in '{theta}'")))?;
                let value = rule
                    .apply(&point)
                    .ok_or_else(|| cannot("no clause covers this input"))?;
                let k = self.task.label_count;
                let out = match (self.task.family, value) {
                    (TaskFamily::Classification2dLabel, RuleValue::Label(l)) if *l < k => l.to_string(),
                    (TaskFamily::Classification2dLabel, RuleValue::Vector(v)) if v.len() == k => {
                        argmax(v).expect("non-empty").to_string()
                    }
                    (TaskFamily::Classification2dProb, RuleValue::Vector(v)) if v.len() == k => format_probs(v),
                    (TaskFamily::Classification2dProb, RuleValue::Label(l)) if *l < k => format_probs(&one_hot(*l, k)),
                    _ => return Err(cannot("rule value does not fit the task")),
                };
                Ok(format!("Explanations: applied the decision rule.\n\nOutput: {out}"))
            }
            TaskFamily::ClassificationText => Err(cannot("text task")),
        }
    }

    fn optimize(&self, prompt: &str) -> Result<String> {
        let inputs = block(prompt, "** Inputs", false).ok_or_else(|| cannot("no inputs block"))?;
        let theta = block(prompt, "** Current", true).ok_or_else(|| cannot("no current descriptions"))?;
        let targets = block(prompt, "** The target", false).ok_or_else(|| cannot("no targets block"))?;
        let xs = parse_number_list(inputs);
        let ts = parse_number_list(targets);
        match self.task.family {
            TaskFamily::Regression1d => {
                if xs.len() != ts.len() || xs.is_empty() {
                    return Err(cannot("inputs and targets differ in length"));
                }
                let form = last_equation(theta).ok_or_else(|| cannot(format!("no equation in '{theta}'")))?;
                let basis = Basis::of(&form)?;
                let coef = basis.fit(&xs, &ts)?;
                let eq = basis.render(&coef);
                Ok(format!(
                    "Reasoning:\n\nLeast-squares fit of {} on {} points.\n\nNew Pattern Descriptions:\n\n{eq}",
                    basis.describe(),
                    xs.len()
                ))
            }
            TaskFamily::Classification2dLabel | TaskFamily::Classification2dProb => {
                if !xs.len().is_multiple_of(2) {
                    return Err(cannot("odd number of coordinates"));
                }
                let points: Vec<[f64; 2]> = xs.chunks(2).map(|c| [c[0], c[1]]).collect();
                let labels: Vec<usize> = if self.task.family == TaskFamily::Classification2dProb {
                    let k = self.task.label_count;
                    if ts.len() != points.len() * k {
                        return Err(cannot("targets do not match inputs"));
                    }
                    ts.chunks(k).map(|c| argmax(c).expect("non-empty")).collect()
                } else {
                    if ts.len() != points.len() {
                        return Err(cannot("targets do not match inputs"));
                    }
                    ts.iter().map(|t| *t as usize).collect()
                };
                let (rule, errors) = best_rule(&points, &labels, &self.task);
                Ok(format!(
                    "Reasoning:\n\nExhaustive rule search; the chosen rule misclassifies {errors} of {} points.\n\nNew Model Descriptions:\n\n{rule}",
                    points.len()
                ))
            }
            TaskFamily::ClassificationText => Err(cannot("text task")),
        }
    }
}

fn format_probs(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|p| format!("{:.2}", round_to(*p, 2))).collect();
    format!("[{}]", items.join(", "))
}

/// Formats a coefficient for display, avoiding `-0.00`.
fn coef_str(c: f64) -> String {
    let r = round_to(c, 2);
    format!("{:.2}", if r == 0.0 { 0.0 } else { r })
}

/// Basis functions for the regression fit, chosen from the current equation.
#[derive(Debug, Clone, PartialEq)]
enum Basis {
    /// Powers `x^d .. x^0`.
    Poly(usize),
    /// `sin(x)` and a constant.
    Sine,
}

impl Basis {
    fn of(form: &Expr) -> Result<Basis> {
        if let Some(d) = form.form_degree() {
            return match d {
                0 => Ok(Basis::Poly(1)),
                1..=3 => Ok(Basis::Poly(d)),
                _ => Err(cannot("polynomial degree above 3")),
            };
        }
        if form.has_call() {
            Ok(Basis::Sine)
        } else {
            Err(cannot("equation is neither polynomial nor sinusoidal"))
        }
    }

    fn features(&self, x: f64) -> Vec<f64> {
        match self {
            Basis::Poly(d) => (0..=*d).rev().map(|p| x.powi(p as i32)).collect(),
            Basis::Sine => vec![x.sin(), 1.0],
        }
    }

    fn fit(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| self.features(*x)).collect();
        least_squares(&rows, ys).ok_or_else(|| cannot("degenerate batch for least squares"))
    }

    fn render(&self, coef: &[f64]) -> String {
        let terms: Vec<(f64, String)> = match self {
            Basis::Poly(d) => coef
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let p = d - i;
                    let var = match p {
                        0 => String::new(),
                        1 => "x".into(),
                        _ => format!("x^{p}"),
                    };
                    (*c, var)
                })
                .collect(),
            Basis::Sine => vec![(coef[0], "sin(x)".into()), (coef[1], String::new())],
        };
        let mut out = String::from("y = ");
        for (i, (c, var)) in terms.iter().enumerate() {
            let r = round_to(*c, 2);
            if i == 0 {
                out.push_str(&format!("{}{var}", coef_str(r)));
            } else if r < 0.0 {
                out.push_str(&format!(" - {}{var}", coef_str(-r)));
            } else {
                out.push_str(&format!(" + {}{var}", coef_str(r)));
            }
        }
        out
    }

    fn describe(&self) -> String {
        match self {
            Basis::Poly(1) => "an affine function".into(),
            Basis::Poly(d) => format!("a degree-{d} polynomial"),
            Basis::Sine => "a shifted, scaled sine".into(),
        }
    }
}

/// Solves the normal equations by Gaussian elimination with partial pivoting.
pub fn least_squares(rows: &[Vec<f64>], ys: &[f64]) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (r, y) in rows.iter().zip(ys) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += r[i] * r[j];
            }
            a[i][k] += r[i] * y;
        }
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let pivot_row = a[col].clone();
        for (row, r) in a.iter_mut().enumerate() {
            if row != col {
                let f = r[col] / pivot_row[col];
                for (x, p) in r[col..=k].iter_mut().zip(&pivot_row[col..=k]) {
                    *x -= f * p;
                }
            }
        }
    }
    Some((0..k).map(|i| a[i][k] / a[i][i]).collect())
}

fn rule_text(cond: &str, inside: usize, outside: usize, task: &TaskSpec) -> String {
    let value = |l: usize| match task.family {
        TaskFamily::Classification2dProb => {
            let v: Vec<String> = one_hot(l, task.label_count).iter().map(|p| format!("{p:.1}")).collect();
            format!("[{}]", v.join(", "))
        }
        _ => l.to_string(),
    };
    format!(
        "If {cond}, output {}. Otherwise, output {}.",
        value(inside),
        value(outside)
    )
}

/// Candidate thresholds: rounded midpoints between consecutive distinct values.
fn thresholds(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut out: Vec<f64> = v.windows(2).map(|w| round_to((w[0] + w[1]) / 2.0, 2)).collect();
    if let (Some(lo), Some(hi)) = (v.first(), v.last()) {
        out.push(round_to(lo - 1.0, 2));
        out.push(round_to(hi + 1.0, 2));
    }
    out.dedup();
    out
}

/// Rule with the fewest batch errors; circle rules are tried before stumps.
fn best_rule(points: &[[f64; 2]], labels: &[usize], task: &TaskSpec) -> (String, usize) {
    let mut candidates = Vec::new();
    let radii: Vec<f64> = points.iter().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).collect();
    let pairs = [(1, 0), (0, 1)];
    for t in thresholds(radii).into_iter().filter(|t| *t > 0.0) {
        for (a, b) in pairs {
            candidates.push(rule_text(&format!("sqrt(x^2 + y^2) < {}", coef_str(t)), a, b, task));
        }
    }
    for (axis, name) in [(0, "x"), (1, "y")] {
        for t in thresholds(points.iter().map(|p| p[axis]).collect()) {
            for (a, b) in pairs {
                candidates.push(rule_text(&format!("{name} > {}", coef_str(t)), a, b, task));
            }
        }
    }
    let mut best = (String::new(), usize::MAX);
    for text in candidates {
        let rule = Rule::parse(&text).expect("generated rules parse");
        let errors = points
            .iter()
            .zip(labels)
            .filter(|(p, l)| {
                let got = match rule.apply(&p[..]) {
                    Some(RuleValue::Label(g)) => Some(*g),
                    Some(RuleValue::Vector(v)) => argmax(v),
                    None => None,
                };
                got != Some(**l)
            })
            .count();
        if errors < best.1 {
            best = (text, errors);
        }
    }
    best
}

/// Keeps the last line that the learner can interpret.
fn summarize(prompt: &str) -> Result<String> {
    let text = block(prompt, " Descriptions: **", true).ok_or_else(|| cannot("no descriptions section"))?;
    text.lines()
        .rev()
        .find(|line| last_equation(line).is_some() || Rule::parse(line).is_some())
        .map(|line| line.trim().to_string())
        .ok_or_else(|| cannot("nothing to summarize"))
}

impl Backend for OracleBackend {
    fn chat(&self, messages: &[ChatMessage], _sampling: &SamplingParams) -> Result<String> {
        validate_messages(messages)?;
        let prompt = &messages[messages.len() - 1].content;
        match self.role {
            OracleRole::Learner => self.learn(prompt),
            OracleRole::Optimizer if prompt.starts_with(SUMMARY_INSTRUCTION) => summarize(prompt),
            OracleRole::Optimizer => self.optimize(prompt),
        }
    }

    fn describe(&self) -> String {
        format!("oracle({:?}, {:?})", self.role, self.task.family)
    }
}
