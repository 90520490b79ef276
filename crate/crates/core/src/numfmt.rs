//! Numeric conventions shared with the reference transcripts.
//!
//! The transcripts were produced by NumPy: arrays are printed with
//! `array2string` and losses with Python `repr`. Reproducing those bytes and
//! the exact loss values requires the same rounding, summation order and
//! float formatting, which live here.

/// Decimal rounding with ties to even, computed as `rint(x * 10^d) / 10^d`.
pub fn round_to(x: f64, decimals: u32) -> f64 {
    let f = 10f64.powi(decimals as i32);
    (x * f).round_ties_even() / f
}

/// Pairwise summation in the order NumPy uses for contiguous arrays.
pub fn pairwise_sum(a: &[f64]) -> f64 {
    const BLOCK: usize = 128;
    let n = a.len();
    if n < 8 {
        let mut res = 0.0;
        for &x in a {
            res += x;
        }
        res
    } else if n <= BLOCK {
        let mut r = [0.0f64; 8];
        r.copy_from_slice(&a[..8]);
        let full = n - n % 8;
        let mut i = 8;
        while i < full {
            for j in 0..8 {
                r[j] += a[i + j];
            }
            i += 8;
        }
        let mut res = ((r[0] + r[1]) + (r[2] + r[3])) + ((r[4] + r[5]) + (r[6] + r[7]));
        for &x in &a[full..] {
            res += x;
        }
        res
    } else {
        let mut n2 = n / 2;
        n2 -= n2 % 8;
        pairwise_sum(&a[..n2]) + pairwise_sum(&a[n2..])
    }
}

/// Arithmetic mean with NumPy summation order. Empty input yields NaN.
pub fn mean(a: &[f64]) -> f64 {
    pairwise_sum(a) / a.len() as f64
}

/// Population standard deviation, two-pass.
pub fn std_pop(a: &[f64]) -> f64 {
    if a.is_empty() {
        return f64::NAN;
    }
    let m = mean(a);
    let dev: Vec<f64> = a.iter().map(|x| (x - m) * (x - m)).collect();
    mean(&dev).sqrt()
}

/// Python `repr` of a float: shortest round-trip digits, scientific notation
/// outside `1e-4 <= |x| < 1e16`.
pub fn py_repr(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let (mantissa, exp) = split_exp(&format!("{x:e}"));
    if x == 0.0 || (-4..16).contains(&exp) {
        let s = format!("{x}");
        if s.contains('.') {
            s
        } else {
            s + ".0"
        }
    } else {
        format!("{mantissa}e{}", exp_string(exp, 2))
    }
}

fn split_exp(s: &str) -> (String, i32) {
    let (m, e) = s.split_once('e').expect("exponent form");
    (m.to_string(), e.parse().expect("integer exponent"))
}

fn exp_string(exp: i32, min_digits: usize) -> String {
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{sign}{:0width$}", exp.unsigned_abs(), width = min_digits)
}

const MAX_PRECISION: usize = 8;

fn positional_parts(x: f64) -> (String, String) {
    let mut s = format!("{x}");
    if let Some((_, frac)) = s.split_once('.') {
        if frac.len() > MAX_PRECISION {
            s = format!("{x:.MAX_PRECISION$}");
            let t = s.trim_end_matches('0').to_string();
            s = t;
        }
    }
    match s.split_once('.') {
        Some((i, f)) => (i.to_string(), f.to_string()),
        None => (s, String::new()),
    }
}

fn scientific_parts(x: f64) -> (String, String, i32) {
    let mut s = format!("{x:e}");
    let (m, _) = split_exp(&s);
    if m.split_once('.').map(|(_, f)| f.len()).unwrap_or(0) > MAX_PRECISION {
        s = format!("{x:.MAX_PRECISION$e}");
    }
    let (m, e) = split_exp(&s);
    let (i, f) = match m.split_once('.') {
        Some((i, f)) => (i.to_string(), f.trim_end_matches('0').to_string()),
        None => (m, String::new()),
    };
    (i, f, e)
}

/// Element formatter equivalent to NumPy's default float formatting for a
/// given set of values (`precision=8`, `floatmode='maxprec'`).
#[derive(Debug, Clone)]
pub struct FloatFormat {
    exp_format: bool,
    pad_left: usize,
    pad_right: usize,
    exp_size: usize,
}

impl FloatFormat {
    pub fn fit(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let nonzero: Vec<f64> = finite.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
        let mut exp_format = false;
        if !nonzero.is_empty() {
            let max = nonzero.iter().copied().fold(f64::MIN, f64::max);
            let min = nonzero.iter().copied().fold(f64::MAX, f64::min);
            exp_format = max >= 1e8 || min < 1e-4 || max / min > 1e3;
        }
        let mut pad_left = 0;
        let mut pad_right = 0;
        let mut exp_size = 0;
        if exp_format {
            for &v in &finite {
                let (i, f, e) = scientific_parts(v);
                pad_left = pad_left.max(i.len());
                pad_right = pad_right.max(f.len());
                exp_size = exp_size.max(e.unsigned_abs().to_string().len().max(2));
            }
        } else {
            for &v in &finite {
                let (i, f) = positional_parts(v);
                pad_left = pad_left.max(i.len());
                pad_right = pad_right.max(f.len());
            }
        }
        FloatFormat {
            exp_format,
            pad_left,
            pad_right,
            exp_size,
        }
    }

    pub fn format(&self, x: f64) -> String {
        if !x.is_finite() {
            let s = if x.is_nan() {
                "nan"
            } else if x > 0.0 {
                "inf"
            } else {
                "-inf"
            };
            let width = self.pad_left + self.pad_right + 1;
            return format!("{s:>width$}");
        }
        if self.exp_format {
            let (i, f, e) = scientific_parts(x);
            format!(
                "{i:>pl$}.{f:0<pr$}e{}",
                exp_string(e, self.exp_size),
                pl = self.pad_left,
                pr = self.pad_right
            )
        } else {
            let (i, f) = positional_parts(x);
            format!("{i:>pl$}.{f:<pr$}", pl = self.pad_left, pr = self.pad_right)
        }
    }
}

/// `np.array2string` of a 1-D float array.
pub fn array1(values: &[f64]) -> String {
    let fmt = FloatFormat::fit(values);
    let items: Vec<String> = values.iter().map(|v| fmt.format(*v)).collect();
    format!("[{}]", items.join(" "))
}

/// `np.array2string` of a 2-D float array with newlines removed.
///
/// All rows share one element format, as in NumPy.
pub fn array2(rows: &[Vec<f64>]) -> String {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let fmt = FloatFormat::fit(&flat);
    let items: Vec<String> = rows
        .iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|v| fmt.format(*v)).collect();
            format!("[{}]", cells.join(" "))
        })
        .collect();
    format!("[{}]", items.join(" "))
}

/// `np.array2string` of an integer column vector, e.g. `[[0] [1]]`.
pub fn int_column(values: &[i64]) -> String {
    let width = values.iter().map(|v| v.to_string().len()).max().unwrap_or(0);
    let items: Vec<String> = values.iter().map(|v| format!("[{v:>width$}]")).collect();
    format!("[{}]", items.join(" "))
}

/// Python `repr` of a string.
pub fn py_str_repr(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                out.push_str(&format!("\\x{:02x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

/// Python `repr` of a list of strings.
pub fn py_str_list(items: &[String]) -> String {
    let parts: Vec<String> = items.iter().map(|s| py_str_repr(s)).collect();
    format!("[{}]", parts.join(", "))
}
