//! Synthetic training sets and text-classification ingestion.
//!
//! All generators draw from ChaCha20 seeded with `seed_from_u64(seed)`, one
//! stream per task and split, so the same `(task, n, seed)` produces the same
//! data on every platform. Values are rounded to the task precision before
//! they are stored; regression targets are computed from the rounded input.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{one_hot, BuiltinTask, DataPoint, Input, Target, TaskFamily, TaskSpec};
use crate::error::{Result, VmlError};
use crate::numfmt::round_to;

pub const BLOB_CENTERS: [[f64; 2]; 2] = [[-3.0, 9.0], [4.5, 2.2]];
pub const BLOB_STD: f64 = 0.9;
pub const OUTER_RADIUS: f64 = 1.0;
pub const INNER_RADIUS: f64 = 0.35;
pub const CIRCLE_NOISE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<DataPoint>,
    pub task: TaskSpec,
    pub seed: u64,
    pub generator_id: String,
}

/// Train or test draw; the two use disjoint PRNG streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn rng_for(task: BuiltinTask, split: Split, seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let index = BuiltinTask::ALL.iter().position(|t| *t == task).expect("known task") as u64;
    rng.set_stream(index * 2 + matches!(split, Split::Test) as u64);
    rng
}

fn standard_normal() -> Normal<f64> {
    Normal::new(0.0, 1.0).expect("valid normal")
}

/// Noise-free target of a regression task.
pub fn ground_truth(task: BuiltinTask, x: f64) -> Option<f64> {
    match task {
        BuiltinTask::Linear => Some(3.0 * x + 4.0),
        BuiltinTask::Polynomial => Some(3.0 * x * x + x + 2.0),
        BuiltinTask::Sinusoid => Some(x.sin() + 2.0),
        _ => None,
    }
}

fn noise_std(task: BuiltinTask) -> f64 {
    match task {
        BuiltinTask::Sinusoid => 0.01,
        _ => 1.0,
    }
}

/// Generates a synthetic dataset. `noise_scale` multiplies the task's noise;
/// 0 gives noise-free data.
pub fn generate(task: BuiltinTask, n: usize, seed: u64, noise_scale: f64, split: Split) -> Result<Dataset> {
    if n == 0 {
        return Err(VmlError::invalid("dataset size must be at least 1"));
    }
    let spec = task.spec();
    let d = spec.decimals;
    let mut rng = rng_for(task, split, seed);
    let normal = standard_normal();
    let points = match task {
        BuiltinTask::Linear | BuiltinTask::Polynomial | BuiltinTask::Sinusoid => {
            let (lo, hi) = task.input_range().expect("regression range");
            let sigma = noise_std(task) * noise_scale;
            (0..n)
                .map(|_| {
                    let x = round_to(rng.random_range(lo..hi), d);
                    let eps: f64 = normal.sample(&mut rng);
                    let y = ground_truth(task, x).expect("regression") + sigma * eps;
                    DataPoint {
                        input: Input::Vector(vec![x]),
                        target: Target::Real(round_to(y, d)),
                    }
                })
                .collect()
        }
        BuiltinTask::TwoBlobs => {
            if !n.is_multiple_of(2) {
                return Err(VmlError::invalid("two blobs needs an even number of points"));
            }
            let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            labels.shuffle(&mut rng);
            let sigma = BLOB_STD * noise_scale;
            labels
                .into_iter()
                .map(|l| {
                    let c = BLOB_CENTERS[l];
                    let x = c[0] + sigma * normal.sample(&mut rng);
                    let y = c[1] + sigma * normal.sample(&mut rng);
                    DataPoint {
                        input: Input::Vector(vec![round_to(x, d), round_to(y, d)]),
                        target: Target::Probs(one_hot(l, 2)),
                    }
                })
                .collect()
        }
        BuiltinTask::TwoCircles => {
            if !n.is_multiple_of(2) {
                return Err(VmlError::invalid("two circles needs an even number of points"));
            }
            let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            labels.shuffle(&mut rng);
            let sigma = CIRCLE_NOISE * noise_scale;
            labels
                .into_iter()
                .map(|l| {
                    let r = if l == 0 { OUTER_RADIUS } else { INNER_RADIUS };
                    let a = rng.random_range(0.0..2.0 * PI);
                    let x = r * a.cos() + sigma * normal.sample(&mut rng);
                    let y = r * a.sin() + sigma * normal.sample(&mut rng);
                    DataPoint {
                        input: Input::Vector(vec![round_to(x, d), round_to(y, d)]),
                        target: Target::Label(l),
                    }
                })
                .collect()
        }
        BuiltinTask::Text => return Err(VmlError::invalid("the text task is loaded from a file")),
    };
    Ok(Dataset {
        points,
        task: spec,
        seed,
        generator_id: format!(
            "{}/chacha20/{}",
            task.name(),
            if split == Split::Train { "train" } else { "test" }
        ),
    })
}

pub fn gen_linear(n: usize, seed: u64) -> Result<Dataset> {
    generate(BuiltinTask::Linear, n, seed, 1.0, Split::Train)
}

pub fn gen_polynomial(n: usize, seed: u64) -> Result<Dataset> {
    generate(BuiltinTask::Polynomial, n, seed, 1.0, Split::Train)
}

pub fn gen_sinusoid(n: usize, seed: u64) -> Result<Dataset> {
    generate(BuiltinTask::Sinusoid, n, seed, 1.0, Split::Train)
}

pub fn gen_two_blobs(n: usize, seed: u64) -> Result<Dataset> {
    generate(BuiltinTask::TwoBlobs, n, seed, 1.0, Split::Train)
}

pub fn gen_two_circles(n: usize, seed: u64) -> Result<Dataset> {
    generate(BuiltinTask::TwoCircles, n, seed, 1.0, Split::Train)
}

/// Reads `term<TAB>label` lines. Blank lines are skipped.
pub fn load_text_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_text_dataset(&text)
}

pub fn parse_text_dataset(text: &str) -> Result<Dataset> {
    let spec = BuiltinTask::Text.spec();
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| VmlError::Ingestion { line: i + 1, message };
        let (term, label) = line
            .split_once('\t')
            .ok_or_else(|| err(format!("expected 'term<TAB>label', got '{line}'")))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| err(format!("label '{}' is not an integer", label.trim())))?;
        if label >= spec.label_count {
            return Err(err(format!("label {label} is outside {{0, 1}}")));
        }
        if term.is_empty() {
            return Err(err("empty term".into()));
        }
        points.push(DataPoint {
            input: Input::Text(term.to_string()),
            target: Target::Label(label),
        });
    }
    if points.is_empty() {
        return Err(VmlError::Ingestion {
            line: 0,
            message: "no records".into(),
        });
    }
    Ok(Dataset {
        points,
        task: spec,
        seed: 0,
        generator_id: "text/file".into(),
    })
}

fn header(task: &TaskSpec) -> Vec<String> {
    let mut h: Vec<String> = match task.family.input_dim() {
        Some(d) => (1..=d).map(|i| format!("x{i}")).collect(),
        None => vec!["term".into()],
    };
    match task.family {
        TaskFamily::Classification2dProb => h.extend((1..=task.label_count).map(|i| format!("y{i}"))),
        _ => h.push("y".into()),
    }
    h
}

/// Writes the dataset as CSV with header `x1[,x2],y` (`y1,y2` for
/// probability targets, `term,y` for text).
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header(&ds.task)).map_err(csv_err)?;
    for p in &ds.points {
        let mut row: Vec<String> = match &p.input {
            Input::Vector(v) => v.iter().map(|x| x.to_string()).collect(),
            Input::Text(t) => vec![t.clone()],
        };
        match &p.target {
            Target::Real(y) => row.push(y.to_string()),
            Target::Label(l) => row.push(l.to_string()),
            Target::Probs(ps) => row.extend(ps.iter().map(|y| y.to_string())),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> VmlError {
    VmlError::Ingestion {
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: e.to_string(),
    }
}

/// Reads a CSV written by [`write_csv`] for the given task.
pub fn read_csv(path: &Path, task: &TaskSpec) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let expected = header(task);
    let got: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(VmlError::Ingestion {
            line: 1,
            message: format!("expected header {expected:?}, got {got:?}"),
        });
    }
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let num = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| VmlError::Ingestion {
                line,
                message: format!("'{s}' is not a number"),
            })
        };
        let point = match task.family {
            TaskFamily::Regression1d => DataPoint {
                input: Input::Vector(vec![num(&rec[0])?]),
                target: Target::Real(num(&rec[1])?),
            },
            TaskFamily::Classification2dProb => DataPoint {
                input: Input::Vector(vec![num(&rec[0])?, num(&rec[1])?]),
                target: Target::Probs((2..rec.len()).map(|j| num(&rec[j])).collect::<Result<_>>()?),
            },
            TaskFamily::Classification2dLabel => DataPoint {
                input: Input::Vector(vec![num(&rec[0])?, num(&rec[1])?]),
                target: Target::Label(num(&rec[2])? as usize),
            },
            TaskFamily::ClassificationText => DataPoint {
                input: Input::Text(rec[0].to_string()),
                target: Target::Label(num(&rec[1])? as usize),
            },
        };
        point.check(task).map_err(|e| VmlError::Ingestion {
            line,
            message: e.to_string(),
        })?;
        points.push(point);
    }
    Ok(Dataset {
        points,
        task: task.clone(),
        seed: 0,
        generator_id: format!("csv:{}", path.display()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reals(ds: &Dataset) -> Vec<(f64, f64)> {
        ds.points
            .iter()
            .map(|p| match (&p.input, &p.target) {
                (Input::Vector(v), Target::Real(y)) => (v[0], *y),
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        assert_eq!(gen_linear(50, 7).unwrap(), gen_linear(50, 7).unwrap());
        assert_ne!(gen_linear(50, 7).unwrap().points, gen_linear(50, 8).unwrap().points);
        let train = generate(BuiltinTask::Linear, 20, 7, 1.0, Split::Train).unwrap();
        let test = generate(BuiltinTask::Linear, 20, 7, 1.0, Split::Test).unwrap();
        assert_ne!(train.points, test.points);
    }

    #[test]
    fn zero_size_rejected() {
        assert!(gen_linear(0, 1).is_err());
        assert!(gen_two_blobs(3, 1).is_err());
    }

    #[test]
    fn noise_free_regression_is_exact() {
        for task in [BuiltinTask::Linear, BuiltinTask::Polynomial, BuiltinTask::Sinusoid] {
            let ds = generate(task, 200, 3, 0.0, Split::Train).unwrap();
            let d = task.spec().decimals;
            for (x, y) in reals(&ds) {
                assert_eq!(y, round_to(ground_truth(task, x).unwrap(), d));
            }
        }
    }

    #[test]
    fn regression_values_are_rounded() {
        let ds = gen_polynomial(100, 1).unwrap();
        for (x, y) in reals(&ds) {
            assert_eq!(round_to(x, 1), x);
            assert_eq!(round_to(y, 1), y);
            assert!((-3.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn classification_balance() {
        let ds = gen_two_blobs(2, 5).unwrap();
        let classes: Vec<usize> = ds.points.iter().map(|p| p.target.class().unwrap()).collect();
        assert_eq!(classes.iter().filter(|c| **c == 0).count(), 1);
        let ds = gen_two_circles(100, 5).unwrap();
        assert_eq!(ds.points.iter().filter(|p| p.target == Target::Label(1)).count(), 50);
        for p in &ds.points {
            p.check(&ds.task).unwrap();
        }
    }

    #[test]
    fn noise_free_circles_sit_on_radii() {
        let ds = generate(BuiltinTask::TwoCircles, 40, 2, 0.0, Split::Train).unwrap();
        for p in &ds.points {
            let Input::Vector(v) = &p.input else { unreachable!() };
            let r = v[0].hypot(v[1]);
            let want = if p.target == Target::Label(0) {
                OUTER_RADIUS
            } else {
                INNER_RADIUS
            };
            assert!((r - want).abs() < 2e-3, "{r} vs {want}");
        }
    }

    #[test]
    fn text_lines() {
        let ds = parse_text_dataset("fatherhood\t0\nErma\t1\n").unwrap();
        assert_eq!(ds.points[0].input, Input::Text("fatherhood".into()));
        assert_eq!(ds.points[1].target, Target::Label(1));
        match parse_text_dataset("fatherhood\t0\nErma\n") {
            Err(VmlError::Ingestion { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_text_dataset("a\t3").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for task in [BuiltinTask::Linear, BuiltinTask::TwoBlobs, BuiltinTask::TwoCircles] {
            let ds = generate(task, 10, 4, 1.0, Split::Train).unwrap();
            let path = dir.path().join(format!("{task}.csv"));
            write_csv(&ds, &path).unwrap();
            let back = read_csv(&path, &ds.task).unwrap();
            assert_eq!(back.points, ds.points);
        }
    }
}
