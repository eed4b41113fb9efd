//! Estimating the probability-distortion exponent from insurance-style
//! choice data, plus the correlation and grouping utilities used to relate
//! the estimates to revealed risk appetite.
//!
//! The estimator inverts the indifference condition for paying a price to
//! insure a stake against a known loss probability: in log-log coordinates
//! the distorted probability is linear in the raw one with slope equal to
//! the exponent, so a fixed-intercept least-squares fit recovers it.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// One insurance decision: the subject faced losing `stake` with probability
/// `loss_probability` and accepted `accepted_price` as the premium that
/// leaves them indifferent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsuranceResponse {
    pub loss_probability: f64,
    pub accepted_price: f64,
    pub stake: f64,
}

impl InsuranceResponse {
    pub fn new(loss_probability: f64, accepted_price: f64, stake: f64) -> Self {
        InsuranceResponse { loss_probability, accepted_price, stake }
    }

    /// Response with the conventional stake of 100.
    pub fn with_default_stake(loss_probability: f64, accepted_price: f64) -> Self {
        Self::new(loss_probability, accepted_price, 100.0)
    }
}

/// Result of fitting the distortion exponent.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AlphaEstimate {
    /// Fixed-intercept slope, i.e. the exponent estimate. Unclamped.
    pub alpha_hat: f64,
    /// Whether the estimate lies in (0, 1].
    pub in_range: bool,
    /// Slope of the unconstrained two-parameter fit.
    pub free_slope: f64,
    /// Intercept of the unconstrained two-parameter fit.
    pub free_intercept: f64,
    /// Coefficient of determination of the unconstrained fit.
    pub r_squared: f64,
}

/// Premium that makes a subject with the given exponent indifferent to
/// insuring `stake` against losing it with probability `loss_probability`:
/// stake * exp(-(-ln p)^alpha / sigma).
pub fn indifference_price(
    loss_probability: f64,
    alpha: f64,
    sigma: f64,
    stake: f64,
) -> Result<f64> {
    if !(loss_probability > 0.0 && loss_probability < 1.0) {
        return Err(Error::Domain(format!(
            "loss probability must lie in (0,1), got {loss_probability}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) || !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::Domain(format!(
            "need alpha and sigma in (0,1], got alpha = {alpha}, sigma = {sigma}"
        )));
    }
    if !(stake > 0.0) {
        return Err(Error::Domain(format!("stake must be positive, got {stake}")));
    }
    Ok(stake * (-(-loss_probability.ln()).powf(alpha) / sigma).exp())
}

/// Log-log coordinates of one response; errors on probabilities or prices
/// outside their open ranges.
fn log_coords(resp: &InsuranceResponse) -> Result<(f64, f64)> {
    let p = resp.loss_probability;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "loss probability must lie in (0,1), got {p}"
        )));
    }
    if !(resp.stake > 0.0) {
        return Err(Error::Domain(format!("stake must be positive, got {}", resp.stake)));
    }
    let ratio = resp.accepted_price / resp.stake;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Domain(format!(
            "accepted price must lie strictly between 0 and the stake, got {} of {}",
            resp.accepted_price, resp.stake
        )));
    }
    Ok(((-p.ln()).ln(), (-ratio.ln()).ln()))
}

/// Fits the distortion exponent from responses, given the value curvature
/// `sigma`. The model line has intercept -ln(sigma), so the exponent is the
/// single free parameter; a two-parameter fit is reported alongside as a
/// specification check.
pub fn estimate_alpha(responses: &[InsuranceResponse], sigma: f64) -> Result<AlphaEstimate> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::Precondition(format!("sigma must lie in (0,1], got {sigma}")));
    }
    let mut distinct: Vec<f64> = Vec::new();
    for r in responses {
        if !distinct.iter().any(|&p| p == r.loss_probability) {
            distinct.push(r.loss_probability);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 distinct loss probabilities, got {}",
            distinct.len()
        )));
    }
    let coords: Vec<(f64, f64)> = responses.iter().map(log_coords).collect::<Result<_>>()?;
    let n = coords.len() as f64;
    let ln_sigma = sigma.ln();

    // Fixed intercept: minimize sum (y + ln sigma - a x)^2 over a.
    let sxx: f64 = coords.iter().map(|(x, _)| x * x).sum();
    if sxx < 1e-12 {
        return Err(Error::InsufficientData(
            "loss probabilities give no spread in log-log coordinates".to_string(),
        ));
    }
    let sxy: f64 = coords.iter().map(|(x, y)| x * (y + ln_sigma)).sum();
    let alpha_hat = sxy / sxx;

    // Unconstrained fit and its coefficient of determination.
    let mean_x: f64 = coords.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y: f64 = coords.iter().map(|(_, y)| y).sum::<f64>() / n;
    let cxx: f64 = coords.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let cxy: f64 = coords.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let free_slope = if cxx > 0.0 { cxy / cxx } else { 0.0 };
    let free_intercept = mean_y - free_slope * mean_x;
    let ss_tot: f64 = coords.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = coords
        .iter()
        .map(|(x, y)| (y - free_slope * x - free_intercept).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(AlphaEstimate {
        alpha_hat,
        in_range: alpha_hat > 0.0 && alpha_hat <= 1.0,
        free_slope,
        free_intercept,
        r_squared,
    })
}

/// Fraction of scenarios in which the risky option was taken.
pub fn risk_appetite(risky_choices: &[bool]) -> Result<f64> {
    if risky_choices.is_empty() {
        return Err(Error::InsufficientData(
            "risk appetite needs at least one choice".to_string(),
        ));
    }
    let taken = risky_choices.iter().filter(|&&c| c).count();
    Ok(taken as f64 / risky_choices.len() as f64)
}

/// Correlation between two paired samples.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Correlation {
    pub n: usize,
    pub pearson_r: f64,
    /// Two-sided p-value from the t statistic with n-2 degrees of freedom.
    pub pearson_p: f64,
    /// Rank correlation with average ranks on ties.
    pub spearman_rho: f64,
    pub spearman_p: f64,
    /// Whether `spearman_p` came from full permutation enumeration (small
    /// samples) rather than the t approximation.
    pub spearman_exact: bool,
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    for (k, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::Domain(format!("{name}[{k}] is not finite: {x}")));
        }
    }
    Ok(())
}

/// Pearson correlation of two equal-length samples with positive variance.
fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain(
            "correlation is undefined for a zero-variance sample".to_string(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Ranks with ties replaced by the average of the tied positions.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided p-value of a correlation via t = r sqrt((n-2)/(1-r^2)).
/// A perfect correlation pins the p-value to zero.
fn t_two_sided(r: f64, n: usize) -> Result<f64> {
    if r.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Domain(format!("t distribution with {df} dof: {e}")))?;
    Ok(2.0 * dist.sf(t.abs()))
}

/// Exact two-sided permutation p-value for the rank correlation: the
/// fraction of all orderings of one rank vector whose correlation magnitude
/// reaches the observed one.
fn spearman_exact_p(rx: &[f64], ry: &[f64]) -> f64 {
    let n = rx.len();
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let xc: Vec<f64> = rx.iter().map(|v| v - mx).collect();
    // Centering is permutation-invariant, as are both norms, so comparing
    // |xc . perm(yc)| against the observed dot product decides each
    // permutation without renormalizing.
    let mut yc: Vec<f64> = ry.iter().map(|v| v - my).collect();
    let observed: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>().abs();
    let tol = 1e-9 * observed.max(1.0);
    let mut hits: u64 = 0;
    let mut total: u64 = 0;
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let mut check = |y: &[f64]| {
        let dot: f64 = xc.iter().zip(y).map(|(a, b)| a * b).sum();
        total += 1;
        if dot.abs() >= observed - tol {
            hits += 1;
        }
    };
    check(&yc);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                yc.swap(0, i);
            } else {
                yc.swap(c[i], i);
            }
            check(&yc);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

/// Largest sample for which the rank-correlation p-value enumerates all
/// permutations; beyond it the t approximation takes over.
const EXACT_PERMUTATION_MAX: usize = 10;

/// Pearson and rank correlations of paired samples with two-sided p-values.
pub fn correlate(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Precondition(format!(
            "paired samples must have equal length, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 3 pairs, got {}",
            x.len()
        )));
    }
    check_finite("x", x)?;
    check_finite("y", y)?;
    let n = x.len();
    let pearson_r = pearson(x, y)?;
    let pearson_p = t_two_sided(pearson_r, n)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let spearman_rho = pearson(&rx, &ry)?;
    let (spearman_p, spearman_exact) = if n <= EXACT_PERMUTATION_MAX {
        (spearman_exact_p(&rx, &ry), true)
    } else {
        (t_two_sided(spearman_rho, n)?, false)
    };
    Ok(Correlation { n, pearson_r, pearson_p, spearman_rho, spearman_p, spearman_exact })
}

/// Summary of one equal-width appetite bin.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AppetiteBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean exponent estimate of the bin's subjects; NaN when empty.
    pub mean_alpha: f64,
}

/// Groups (appetite, exponent) pairs into `bin_count` equal-width bins over
/// [0,1]. Appetite 1.0 joins the last bin; empty bins are reported with a
/// zero count.
pub fn group_by_appetite(pairs: &[(f64, f64)], bin_count: usize) -> Result<Vec<AppetiteBin>> {
    if bin_count < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 bins, got {bin_count}"
        )));
    }
    for &(a, _) in pairs {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Domain(format!("appetite must lie in [0,1], got {a}")));
        }
    }
    let width = 1.0 / bin_count as f64;
    let mut sums = vec![0.0; bin_count];
    let mut counts = vec![0usize; bin_count];
    for &(a, alpha) in pairs {
        let k = ((a / width) as usize).min(bin_count - 1);
        sums[k] += alpha;
        counts[k] += 1;
    }
    Ok((0..bin_count)
        .map(|k| AppetiteBin {
            lower: k as f64 * width,
            upper: (k + 1) as f64 * width,
            count: counts[k],
            mean_alpha: if counts[k] > 0 { sums[k] / counts[k] as f64 } else { f64::NAN },
        })
        .collect())
}

/// Per-subject estimate joined with revealed appetite (None when the subject
/// has no choice records).
#[derive(Debug, Clone, Serialize)]
pub struct SubjectSummary {
    pub subject_id: String,
    pub estimate: AlphaEstimate,
    pub appetite: Option<f64>,
}

/// Estimates the exponent subject by subject and joins each with the
/// subject's risky-choice fraction. Subjects keep first-appearance order.
pub fn estimate_subjects(
    insurance: &[(String, InsuranceResponse)],
    choices: &[(String, bool)],
    sigma: f64,
) -> Result<Vec<SubjectSummary>> {
    let mut order: Vec<&str> = Vec::new();
    let mut responses: HashMap<&str, Vec<InsuranceResponse>> = HashMap::new();
    for (id, resp) in insurance {
        let e = responses.entry(id.as_str()).or_default();
        if e.is_empty() {
            order.push(id.as_str());
        }
        e.push(*resp);
    }
    let mut picks: HashMap<&str, Vec<bool>> = HashMap::new();
    for (id, risky) in choices {
        picks.entry(id.as_str()).or_default().push(*risky);
    }
    order
        .iter()
        .map(|id| {
            let estimate = estimate_alpha(&responses[id], sigma)
                .map_err(|e| Error::Config(format!("subject {id}: {e}")))?;
            let appetite = match picks.get(id) {
                Some(c) => Some(risk_appetite(c)?),
                None => None,
            };
            Ok(SubjectSummary { subject_id: id.to_string(), estimate, appetite })
        })
        .collect()
}

fn csv_line(record: &csv::StringRecord) -> String {
    record
        .position()
        .map(|p| p.line().to_string())
        .unwrap_or_else(|| "?".to_string())
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| {
        Error::Config(format!("row {}: missing column {name}", csv_line(record)))
    })?;
    raw.trim().parse().map_err(|_| {
        Error::Config(format!(
            "row {}: column {name} is not a valid value: {raw:?}",
            csv_line(record)
        ))
    })
}

fn expect_headers(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let headers = reader.headers()?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Config(format!(
            "expected header {expected:?}, got {got:?}"
        )));
    }
    Ok(())
}

/// Reads `subject_id,p,r,stake` rows.
pub fn read_insurance_csv<R: Read>(reader: R) -> Result<Vec<(String, InsuranceResponse)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    expect_headers(&mut rdr, &["subject_id", "p", "r", "stake"])?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let id: String = parse_field(&record, 0, "subject_id")?;
        let p: f64 = parse_field(&record, 1, "p")?;
        let r: f64 = parse_field(&record, 2, "r")?;
        let stake: f64 = parse_field(&record, 3, "stake")?;
        out.push((id, InsuranceResponse::new(p, r, stake)));
    }
    Ok(out)
}

/// Reads `subject_id,scenario_id,risky` rows; risky must be 0 or 1.
pub fn read_choice_csv<R: Read>(reader: R) -> Result<Vec<(String, bool)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    expect_headers(&mut rdr, &["subject_id", "scenario_id", "risky"])?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let id: String = parse_field(&record, 0, "subject_id")?;
        let risky: u8 = parse_field(&record, 2, "risky")?;
        let risky = match risky {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Config(format!(
                    "row {}: risky must be 0 or 1, got {other}",
                    csv_line(&record)
                )))
            }
        };
        out.push((id, risky));
    }
    Ok(out)
}

/// Writes `subject_id,alpha_hat,in_range,r2,appetite` rows; subjects without
/// choice data get an empty appetite field.
pub fn write_subject_csv<W: Write>(summaries: &[SubjectSummary], mut w: W) -> Result<()> {
    writeln!(w, "subject_id,alpha_hat,in_range,r2,appetite")?;
    for s in summaries {
        let appetite = s.appetite.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            s.subject_id, s.estimate.alpha_hat, s.estimate.in_range, s.estimate.r_squared, appetite
        )?;
    }
    Ok(())
}

/// One row of a subject summary file. Carries only what the file stores, not
/// the full regression diagnostics.
#[derive(Debug, Clone)]
pub struct SubjectRow {
    pub subject_id: String,
    pub alpha_hat: f64,
    pub in_range: bool,
    pub r_squared: f64,
    pub appetite: Option<f64>,
}

/// Reads rows in the layout produced by [`write_subject_csv`]; an empty
/// appetite field becomes `None`.
pub fn read_subject_csv<R: Read>(reader: R) -> Result<Vec<SubjectRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    expect_headers(&mut rdr, &["subject_id", "alpha_hat", "in_range", "r2", "appetite"])?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let subject_id: String = parse_field(&record, 0, "subject_id")?;
        let alpha_hat: f64 = parse_field(&record, 1, "alpha_hat")?;
        let in_range: bool = parse_field(&record, 2, "in_range")?;
        let r_squared: f64 = parse_field(&record, 3, "r2")?;
        let appetite = match record.get(4).map(str::trim) {
            None | Some("") => None,
            Some(_) => Some(parse_field(&record, 4, "appetite")?),
        };
        out.push(SubjectRow { subject_id, alpha_hat, in_range, r_squared, appetite });
    }
    Ok(out)
}
