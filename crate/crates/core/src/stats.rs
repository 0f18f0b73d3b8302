//! Two-sample t-tests, the Student t distribution, and linear trend fits with
//! 95% confidence bands.
//!
//! The t tail goes through the regularized incomplete beta function,
//! evaluated with the modified Lentz continued fraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample {0} needs at least 2 values")]
    TooFewValues(&'static str),
    #[error("summary {0} is invalid: need n >= 2 and a finite, non-negative dispersion")]
    InvalidSummary(&'static str),
    #[error("all x values are equal")]
    DegenerateX,
    #[error("need at least 2 points")]
    TooFewPoints,
    #[error("non-finite input")]
    NonFinite,
    #[error("ablation series {0:?} needs at least 2 fractions including 0")]
    BadAblationSeries(String),
    #[error("variant {0:?} needs summary inputs")]
    VariantInput(Variant),
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
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

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    inc_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Student t CDF.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Student t quantile by bisection on the CDF.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile probability must be in (0, 1)");
    if p == 0.5 {
        return 0.0;
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while t_cdf(lo, df) > p {
        lo *= 2.0;
    }
    while t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispersion {
    StdDev,
    StdError,
}

/// Mean ± dispersion over `n` runs, as reported in result tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummarySample {
    pub mean: f64,
    pub dispersion: f64,
    pub n: usize,
    pub kind: Dispersion,
}

impl SummarySample {
    pub fn new(mean: f64, dispersion: f64, n: usize, kind: Dispersion) -> Self {
        SummarySample {
            mean,
            dispersion,
            n,
            kind,
        }
    }

    fn validate(&self, name: &'static str) -> Result<(), StatsError> {
        if self.n < 2 || !self.dispersion.is_finite() || self.dispersion < 0.0 || !self.mean.is_finite() {
            return Err(StatsError::InvalidSummary(name));
        }
        Ok(())
    }

    /// Sample variance implied by the summary.
    pub fn variance(&self) -> f64 {
        match self.kind {
            Dispersion::StdDev => self.dispersion * self.dispersion,
            Dispersion::StdError => self.dispersion * self.dispersion * self.n as f64,
        }
    }

    /// Variance of the mean.
    pub fn mean_variance(&self) -> f64 {
        self.variance() / self.n as f64
    }

    pub fn with_kind(self, kind: Dispersion) -> Self {
        SummarySample { kind, ..self }
    }
}

/// Mean and sample standard deviation.
pub fn summarize(values: &[f64]) -> Result<SummarySample, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFewValues("input"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SummarySample::new(mean, var.sqrt(), values.len(), Dispersion::StdDev))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WelchFromRaw,
    WelchFromSummary,
    PooledFromSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    /// Both dispersions zero and equal means; p is defined as 1.
    EqualMeans,
    /// Both dispersions zero and different means; p is defined as 0.
    DifferentMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    pub variant: Variant,
    pub degenerate: Option<Degenerate>,
}

#[derive(Debug, Clone, Copy)]
pub enum SampleInput<'a> {
    Raw(&'a [f64]),
    Summary(SummarySample),
}

impl SampleInput<'_> {
    fn summary(&self, name: &'static str) -> Result<SummarySample, StatsError> {
        match self {
            SampleInput::Raw(v) => summarize(v).map_err(|e| match e {
                StatsError::TooFewValues(_) => StatsError::TooFewValues(name),
                e => e,
            }),
            SampleInput::Summary(s) => {
                s.validate(name)?;
                Ok(*s)
            }
        }
    }
}

/// Two-sample t-test. Raw inputs are summarized first, so `WelchFromRaw` and
/// `WelchFromSummary` agree on equivalent data.
pub fn t_test(a: SampleInput<'_>, b: SampleInput<'_>, variant: Variant) -> Result<TestResult, StatsError> {
    if variant != Variant::WelchFromRaw
        && (matches!(a, SampleInput::Raw(_)) || matches!(b, SampleInput::Raw(_)))
    {
        return Err(StatsError::VariantInput(variant));
    }
    let sa = a.summary("a")?;
    let sb = b.summary("b")?;
    match variant {
        Variant::WelchFromRaw | Variant::WelchFromSummary => Ok(welch(&sa, &sb, variant)),
        Variant::PooledFromSummary => Ok(pooled(&sa, &sb)),
    }
}

fn degenerate(diff: f64, df: f64, variant: Variant) -> TestResult {
    if diff == 0.0 {
        TestResult {
            t: 0.0,
            df,
            p: 1.0,
            variant,
            degenerate: Some(Degenerate::EqualMeans),
        }
    } else {
        TestResult {
            t: diff.signum() * f64::INFINITY,
            df,
            p: 0.0,
            variant,
            degenerate: Some(Degenerate::DifferentMeans),
        }
    }
}

fn welch(a: &SummarySample, b: &SummarySample, variant: Variant) -> TestResult {
    let (va, vb) = (a.mean_variance(), b.mean_variance());
    let diff = a.mean - b.mean;
    let se2 = va + vb;
    if se2 == 0.0 {
        return degenerate(diff, (a.n + b.n - 2) as f64, variant);
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n as f64 - 1.0) + vb * vb / (b.n as f64 - 1.0));
    TestResult {
        t,
        df,
        p: t_two_sided_p(t, df),
        variant,
        degenerate: None,
    }
}

fn pooled(a: &SummarySample, b: &SummarySample) -> TestResult {
    let (na, nb) = (a.n as f64, b.n as f64);
    let df = na + nb - 2.0;
    let sp2 = ((na - 1.0) * a.variance() + (nb - 1.0) * b.variance()) / df;
    let diff = a.mean - b.mean;
    let se2 = sp2 * (1.0 / na + 1.0 / nb);
    if se2 == 0.0 {
        return degenerate(diff, df, Variant::PooledFromSummary);
    }
    let t = diff / se2.sqrt();
    TestResult {
        t,
        df,
        p: t_two_sided_p(t, df),
        variant: Variant::PooledFromSummary,
        degenerate: None,
    }
}

/// Welch and pooled tests under both dispersion readings, side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryComparison {
    pub label: String,
    pub a: SummarySample,
    pub b: SummarySample,
    pub welch_se: TestResult,
    pub welch_sd: TestResult,
    pub pooled_se: TestResult,
    pub pooled_sd: TestResult,
}

/// Runs every summary variant. The `kind` on the inputs is ignored.
pub fn compare_summaries(
    label: &str,
    a: SummarySample,
    b: SummarySample,
) -> Result<SummaryComparison, StatsError> {
    let run = |kind, variant| {
        t_test(
            SampleInput::Summary(a.with_kind(kind)),
            SampleInput::Summary(b.with_kind(kind)),
            variant,
        )
    };
    Ok(SummaryComparison {
        label: label.to_string(),
        a,
        b,
        welch_se: run(Dispersion::StdError, Variant::WelchFromSummary)?,
        welch_sd: run(Dispersion::StdDev, Variant::WelchFromSummary)?,
        pooled_se: run(Dispersion::StdError, Variant::PooledFromSummary)?,
        pooled_sd: run(Dispersion::StdDev, Variant::PooledFromSummary)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub fit: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Ordinary least squares line with a 95% confidence band for the mean
/// response. Standard errors are absent when there are only two points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: Option<f64>,
    pub slope_ci: Option<(f64, f64)>,
    pub r2: f64,
    pub n: usize,
    pub residual_sd: Option<f64>,
    /// t quantile at 0.975 with n − 2 degrees of freedom.
    pub t_crit: Option<f64>,
    pub x_mean: f64,
    pub sxx: f64,
    /// Band evaluated at the input x values.
    pub band: Vec<BandPoint>,
}

impl TrendFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    pub fn band_at(&self, x: f64) -> BandPoint {
        let fit = self.predict(x);
        let half = match (self.residual_sd, self.t_crit) {
            (Some(s), Some(t)) => {
                t * s * (1.0 / self.n as f64 + (x - self.x_mean).powi(2) / self.sxx).sqrt()
            }
            _ => 0.0,
        };
        BandPoint {
            x,
            fit,
            lower: fit - half,
            upper: fit + half,
        }
    }

    /// Evenly spaced band samples over `[lo, hi]`, for plotting.
    pub fn band_samples(&self, lo: f64, hi: f64, n: usize) -> Vec<BandPoint> {
        let n = n.max(2);
        (0..n)
            .map(|i| self.band_at(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect()
    }
}

pub fn fit_trend(points: &[(f64, f64)]) -> Result<TrendFit, StatsError> {
    if points.len() < 2 {
        return Err(StatsError::TooFewPoints);
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = points.len() as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StatsError::DegenerateX);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - x_mean) * (p.1 - y_mean)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - y_mean).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).max(0.0) };
    let (residual_sd, t_crit, slope_se, slope_ci) = if points.len() > 2 {
        let df = n - 2.0;
        let s = (sse / df).sqrt();
        let t = t_quantile(0.975, df);
        let se = s / sxx.sqrt();
        (Some(s), Some(t), Some(se), Some((slope - t * se, slope + t * se)))
    } else {
        (None, None, None, None)
    };
    let mut fit = TrendFit {
        slope,
        intercept,
        slope_se,
        slope_ci,
        r2,
        n: points.len(),
        residual_sd,
        t_crit,
        x_mean,
        sxx,
        band: Vec::new(),
    };
    fit.band = points.iter().map(|p| fit.band_at(p.0)).collect();
    Ok(fit)
}

/// Accuracy (in percent) per training-data fraction for one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSeries {
    pub benchmark: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub benchmark: String,
    pub baseline: f64,
    pub last: f64,
    pub absolute_gain: f64,
    /// Gain relative to the baseline, in percent.
    pub relative_gain: f64,
    pub positive_slope: bool,
    pub trend: TrendFit,
}

/// Gain from the 0-fraction baseline to the largest fraction, plus a trend fit.
pub fn ablation_report(series: &[AblationSeries]) -> Result<Vec<AblationRow>, StatsError> {
    series
        .iter()
        .map(|s| {
            let mut pts = s.points.clone();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let distinct = pts.windows(2).filter(|w| w[0].0 != w[1].0).count() + 1;
            if pts.len() < 2 || distinct < 2 || pts[0].0 != 0.0 {
                return Err(StatsError::BadAblationSeries(s.benchmark.clone()));
            }
            let baseline = pts[0].1;
            let last = pts[pts.len() - 1].1;
            let absolute_gain = last - baseline;
            let trend = fit_trend(&pts)?;
            Ok(AblationRow {
                benchmark: s.benchmark.clone(),
                baseline,
                last,
                absolute_gain,
                relative_gain: absolute_gain / baseline * 100.0,
                positive_slope: trend.slope > 0.0,
                trend,
            })
        })
        .collect()
}

/// CSV of test results, one row per variant.
pub fn comparisons_csv(rows: &[SummaryComparison]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "variant", "dispersion", "t", "df", "p", "degenerate"])?;
    for r in rows {
        for (res, disp) in [
            (&r.welch_se, "std_error"),
            (&r.welch_sd, "std_dev"),
            (&r.pooled_se, "std_error"),
            (&r.pooled_sd, "std_dev"),
        ] {
            w.write_record([
                r.label.clone(),
                variant_name(res.variant).to_string(),
                disp.to_string(),
                format!("{:.6}", res.t),
                format!("{:.6}", res.df),
                format!("{:.6}", res.p),
                res.degenerate.map(|d| format!("{d:?}")).unwrap_or_default(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8 csv"))
}

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::WelchFromRaw => "welch_from_raw",
        Variant::WelchFromSummary => "welch_from_summary",
        Variant::PooledFromSummary => "pooled_from_summary",
    }
}

/// CSV of ablation rows.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "benchmark",
        "baseline",
        "last",
        "absolute_gain",
        "relative_gain_percent",
        "slope",
        "intercept",
        "slope_ci_low",
        "slope_ci_high",
        "r2",
        "positive_slope",
    ])?;
    for r in rows {
        let (lo, hi) = r
            .trend
            .slope_ci
            .map(|(a, b)| (format!("{a:.4}"), format!("{b:.4}")))
            .unwrap_or_default();
        w.write_record([
            r.benchmark.clone(),
            format!("{:.4}", r.baseline),
            format!("{:.4}", r.last),
            format!("{:.4}", r.absolute_gain),
            format!("{:.4}", r.relative_gain),
            format!("{:.4}", r.trend.slope),
            format!("{:.4}", r.trend.intercept),
            lo,
            hi,
            format!("{:.4}", r.trend.r2),
            r.positive_slope.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8 csv"))
}

/// Band samples for each benchmark, long format, for external plotting.
pub fn band_csv(rows: &[AblationRow], samples: usize) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["benchmark", "x", "fit", "lower", "upper"])?;
    for r in rows {
        let xs: Vec<f64> = r.trend.band.iter().map(|b| b.x).collect();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for b in r.trend.band_samples(lo, hi, samples) {
            w.write_record([
                r.benchmark.clone(),
                format!("{:.6}", b.x),
                format!("{:.6}", b.fit),
                format!("{:.6}", b.lower),
                format!("{:.6}", b.upper),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8 csv"))
}
