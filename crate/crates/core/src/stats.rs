//! Significance tests, multiple-comparison corrections, effect sizes, run
//! cost and Pareto frontiers.

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::ModelHandle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations per sample")]
    TooFew,
    #[error("zero variance")]
    ZeroVariance,
    #[error("p-value {0} outside [0, 1]")]
    InvalidP(f64),
    #[error("family size {m} smaller than number of p-values {n}")]
    FamilyTooSmall { m: usize, n: usize },
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AGtB,
    ALtB,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: u32,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (divides by n - 1).
fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn paired_t_one_sided(a: &[f64], b: &[f64], direction: Direction) -> Result<TTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::TooFew);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let var = sample_var(&d);
    if var == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let n = d.len() as f64;
    let t = mean(&d) / (var.sqrt() / n.sqrt());
    let df = (d.len() - 1) as u32;
    let p = match direction {
        Direction::AGtB => student_t_sf(t, df as f64),
        Direction::ALtB => student_t_sf(-t, df as f64),
    };
    Ok(TTest { t, p, df })
}

/// Upper tail `P(T > t)` of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * reg_inc_beta(df / (df + t * t), df / 2.0, 0.5);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Lanczos approximation (g = 7, 9 terms) of ln Γ(x) for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // The continued fraction converges fast only below the mean.
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

fn check_ps(ps: &[f64]) -> Result<(), StatsError> {
    match ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(&p) => Err(StatsError::InvalidP(p)),
        None => Ok(()),
    }
}

/// `min(1, m * p)` for each p; `m` defaults to the number of p-values.
pub fn bonferroni(ps: &[f64], m: Option<usize>) -> Result<Vec<f64>, StatsError> {
    check_ps(ps)?;
    let m = m.unwrap_or(ps.len());
    if m < ps.len() {
        return Err(StatsError::FamilyTooSmall { m, n: ps.len() });
    }
    Ok(ps.iter().map(|p| (m as f64 * p).min(1.0)).collect())
}

/// Holm step-down adjustment, returned in input order.
pub fn holm(ps: &[f64]) -> Result<Vec<f64>, StatsError> {
    check_ps(ps)?;
    let m = ps.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| ps[i].total_cmp(&ps[j]).then(i.cmp(&j)));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * ps[i]).min(1.0));
        out[i] = running;
    }
    Ok(out)
}

/// Cohen's d with the pooled sample standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFew);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sample_var(a) + (nb - 1.0) * sample_var(b)) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((mean(a) - mean(b)) / pooled)
}

/// Conventional magnitude label for |d|.
pub fn effect_label(d: f64) -> &'static str {
    match d.abs() {
        x if x < 0.2 => "negligible",
        x if x < 0.5 => "small",
        x if x < 0.8 => "medium",
        _ => "large",
    }
}

/// USD cost of the given token counts at the handle's per-million prices.
pub fn run_cost(usage: impl IntoIterator<Item = (u64, u64)>, handle: &ModelHandle) -> Decimal {
    let (tin, tout) = usage.into_iter().fold((0u64, 0u64), |(a, b), (i, o)| (a + i, b + o));
    let million = Decimal::from(1_000_000u64);
    Decimal::from(tin) * handle.price_in_usd_per_1m / million
        + Decimal::from(tout) * handle.price_out_usd_per_1m / million
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub cost: f64,
    pub accuracy: f64,
}

/// Indices of points no other point dominates, in input order. `q`
/// dominates `p` when it is no more expensive and no less accurate, and
/// strictly better on at least one axis.
pub fn pareto_frontier(points: &[CostPoint]) -> Vec<usize> {
    let dominates = |q: &CostPoint, p: &CostPoint| {
        q.cost <= p.cost && q.accuracy >= p.accuracy && (q.cost < p.cost || q.accuracy > p.accuracy)
    };
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}
