//! Bidder value distributions and percentile arithmetic.
//!
//! Everything downstream works on the percentile axis `g = F(x)`; a
//! [`ValueDistribution`] is the bridge between values and percentiles.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantile at which unbounded supports are capped when building value grids.
pub const DEFAULT_QUANTILE_CAP: f64 = 0.9999;

/// Private-value law of a bidder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDistribution {
    Uniform { low: f64, high: f64 },
    /// Density `1/x²` and cdf `1 − 1/x` on `[1, ∞)`.
    PowerLaw,
    Tabulated(QuantileTable),
}

/// Monotone piecewise-linear inverse cdf given as `(g, F⁻¹(g))` knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct QuantileTable {
    g: Vec<f64>,
    x: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    g: Vec<f64>,
    x: Vec<f64>,
}

impl TryFrom<RawTable> for QuantileTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        QuantileTable::new(raw.g, raw.x)
    }
}

impl From<QuantileTable> for RawTable {
    fn from(t: QuantileTable) -> Self {
        RawTable { g: t.g, x: t.x }
    }
}

impl QuantileTable {
    /// Knots must start at `g = 0`, end at `g = 1`, and be strictly increasing
    /// in both coordinates with non-negative values.
    pub fn new(g: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidDistribution(format!("quantile table: {msg}")));
        if g.len() != x.len() {
            return bad("g and value columns differ in length");
        }
        if g.len() < 2 {
            return bad("need at least two knots");
        }
        if g.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return bad("non-finite entry");
        }
        if g[0] != 0.0 || g[g.len() - 1] != 1.0 {
            return bad("percentiles must start at 0 and end at 1");
        }
        if g.windows(2).any(|w| w[1] <= w[0]) {
            return bad("percentiles must be strictly increasing");
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return bad("values must be strictly increasing");
        }
        if x[0] < 0.0 {
            return bad("values must be non-negative");
        }
        Ok(Self { g, x })
    }

    /// Reads a two-column CSV `(g, value)` with a header row.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut g = Vec::new();
        let mut x = Vec::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::InvalidDistribution(format!(
                    "quantile table row has {} columns, expected 2",
                    record.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidDistribution(format!("bad number {s:?}: {e}")))
            };
            g.push(parse(&record[0])?);
            x.push(parse(&record[1])?);
        }
        Self::new(g, x)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.g.iter().copied().zip(self.x.iter().copied())
    }

    // Index i of the segment [k[i], k[i+1]] holding v.
    fn segment(knots: &[f64], v: f64) -> usize {
        let i = knots.partition_point(|&k| k <= v);
        i.clamp(1, knots.len() - 1) - 1
    }

    fn cdf(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            return 0.0;
        }
        if x >= self.x[n - 1] {
            return 1.0;
        }
        let i = Self::segment(&self.x, x);
        let t = (x - self.x[i]) / (self.x[i + 1] - self.x[i]);
        self.g[i] + t * (self.g[i + 1] - self.g[i])
    }

    fn pdf(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x < self.x[0] || x > self.x[n - 1] {
            return 0.0;
        }
        let i = Self::segment(&self.x, x);
        (self.g[i + 1] - self.g[i]) / (self.x[i + 1] - self.x[i])
    }

    fn quantile(&self, g: f64) -> f64 {
        let i = Self::segment(&self.g, g);
        let t = (g - self.g[i]) / (self.g[i + 1] - self.g[i]);
        self.x[i] + t * (self.x[i + 1] - self.x[i])
    }
}

impl ValueDistribution {
    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite()) || low < 0.0 || high <= low {
            return Err(Error::InvalidDistribution(format!(
                "uniform({low}, {high}) needs 0 <= low < high"
            )));
        }
        Ok(Self::Uniform { low, high })
    }

    pub fn unit_uniform() -> Self {
        Self::Uniform {
            low: 0.0,
            high: 1.0,
        }
    }

    pub fn tabulated_from_csv(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::Tabulated(QuantileTable::from_csv_path(path)?))
    }

    /// Re-checks the invariants of deserialized parameters.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Uniform { low, high } => Self::uniform(*low, *high).map(|_| ()),
            Self::PowerLaw => Ok(()),
            Self::Tabulated(_) => Ok(()),
        }
    }

    pub fn support_infimum(&self) -> f64 {
        match self {
            Self::Uniform { low, .. } => *low,
            Self::PowerLaw => 1.0,
            Self::Tabulated(t) => t.x[0],
        }
    }

    pub fn support_supremum(&self) -> f64 {
        match self {
            Self::Uniform { high, .. } => *high,
            Self::PowerLaw => f64::INFINITY,
            Self::Tabulated(t) => t.x[t.x.len() - 1],
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.support_supremum().is_finite()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
            Self::PowerLaw => {
                if x <= 1.0 {
                    0.0
                } else {
                    1.0 - 1.0 / x
                }
            }
            Self::Tabulated(t) => t.cdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::Uniform { low, high } => {
                if x < *low || x > *high {
                    0.0
                } else {
                    1.0 / (high - low)
                }
            }
            Self::PowerLaw => {
                if x < 1.0 {
                    0.0
                } else {
                    1.0 / (x * x)
                }
            }
            Self::Tabulated(t) => t.pdf(x),
        }
    }

    /// Inverse cdf. `g = 1` is accepted only for bounded supports.
    pub fn quantile(&self, g: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&g) || (g == 1.0 && !self.is_bounded()) {
            return Err(Error::QuantileOutOfRange(g));
        }
        Ok(match self {
            Self::Uniform { low, high } => low + g * (high - low),
            Self::PowerLaw => 1.0 / (1.0 - g),
            Self::Tabulated(t) => t.quantile(g),
        })
    }

    /// Quantile with unbounded supports capped at percentile `cap`.
    pub fn grid_quantile(&self, g: f64, cap: f64) -> Result<f64> {
        if self.is_bounded() {
            self.quantile(g)
        } else {
            self.quantile(g.min(cap))
        }
    }

    /// The value `X_(λ/μ)` at percentile `(λ − μ)/λ`; the emergent posted price.
    pub fn threshold_value(&self, lambda: f64, mu: u32) -> Result<f64> {
        self.quantile(threshold_percentile(lambda, mu)?)
    }
}

/// Percentile `(λ − μ)/λ` of the zero-uncertainty price threshold.
pub fn threshold_percentile(lambda: f64, mu: u32) -> Result<f64> {
    if !lambda.is_finite() || mu == 0 {
        return Err(Error::InvalidParameters(format!(
            "lambda={lambda}, mu={mu}"
        )));
    }
    if lambda <= mu as f64 {
        return Err(Error::ThresholdUndefined { lambda, mu });
    }
    Ok((lambda - mu as f64) / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table01() -> ValueDistribution {
        ValueDistribution::Tabulated(QuantileTable::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap())
    }

    fn table_curved() -> ValueDistribution {
        let g: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let x = g.iter().map(|g| 2.0 + g * g * 3.0 + g).collect();
        ValueDistribution::Tabulated(QuantileTable::new(g, x).unwrap())
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(ValueDistribution::unit_uniform().cdf(0.5), 0.5);
        assert_eq!(ValueDistribution::PowerLaw.cdf(2.0), 0.5);
        assert_eq!(ValueDistribution::PowerLaw.cdf(1.0), 0.0);
        assert_eq!(ValueDistribution::PowerLaw.cdf(0.3), 0.0);
        assert_eq!(ValueDistribution::unit_uniform().cdf(-1.0), 0.0);
        assert_eq!(ValueDistribution::unit_uniform().cdf(7.0), 1.0);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(ValueDistribution::unit_uniform().quantile(0.8).unwrap(), 0.8);
        assert!((ValueDistribution::PowerLaw.quantile(0.8).unwrap() - 5.0).abs() < 1e-12);
        assert!((table01().quantile(0.3).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn quantile_rejects_top_of_unbounded_support() {
        assert!(matches!(
            ValueDistribution::PowerLaw.quantile(1.0),
            Err(Error::QuantileOutOfRange(_))
        ));
        assert!(ValueDistribution::unit_uniform().quantile(1.0).is_ok());
        assert!(ValueDistribution::unit_uniform().quantile(-0.1).is_err());
        assert_eq!(
            ValueDistribution::PowerLaw.grid_quantile(1.0, DEFAULT_QUANTILE_CAP).unwrap(),
            ValueDistribution::PowerLaw.quantile(DEFAULT_QUANTILE_CAP).unwrap()
        );
    }

    #[test]
    fn threshold_examples() {
        let u = ValueDistribution::unit_uniform();
        assert!((u.threshold_value(2.0, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((ValueDistribution::PowerLaw.threshold_value(5.0, 1).unwrap() - 5.0).abs() < 1e-12);
        assert!((u.threshold_value(5.0, 2).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(
            u.threshold_value(1.0, 1),
            Err(Error::ThresholdUndefined { .. })
        ));
        assert!(matches!(
            u.threshold_value(3.0, 4),
            Err(Error::ThresholdUndefined { .. })
        ));
    }

    #[test]
    fn table_validation() {
        assert!(QuantileTable::new(vec![0.0, 0.5], vec![0.0, 1.0]).is_err());
        assert!(QuantileTable::new(vec![0.0, 0.5, 0.5, 1.0], vec![0.0, 1.0, 2.0, 3.0]).is_err());
        assert!(QuantileTable::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(QuantileTable::new(vec![0.0, 1.0], vec![-1.0, 1.0]).is_err());
    }

    #[test]
    fn table_csv_requires_header_and_two_columns() {
        let t = QuantileTable::from_csv_reader("g,value\n0,1\n0.5,2\n1,4\n".as_bytes()).unwrap();
        let d = ValueDistribution::Tabulated(t);
        assert_eq!(d.support_infimum(), 1.0);
        assert!((d.quantile(0.75).unwrap() - 3.0).abs() < 1e-15);
        assert!((d.cdf(3.0) - 0.75).abs() < 1e-15);
        assert!((d.pdf(1.5) - 0.5).abs() < 1e-15);
        assert!(QuantileTable::from_csv_reader("g,value\n0,1,3\n1,2\n".as_bytes()).is_err());
        assert!(QuantileTable::from_csv_reader("g,value\n0,x\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn serde_round_trip_keeps_validation() {
        let d = table_curved();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<ValueDistribution>(&s).unwrap(), d);
        let bad = r#"{"kind":"tabulated","g":[0.0,0.4],"x":[0.0,1.0]}"#;
        assert!(serde_json::from_str::<ValueDistribution>(bad).is_err());
    }

    // Composite Simpson over [a, b] with n (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn pdf_integrates_to_one() {
        let u = ValueDistribution::uniform(0.5, 2.5).unwrap();
        assert!((simpson(|x| u.pdf(x), 0.5, 2.5, 1000) - 1.0).abs() < 1e-6);
        // Power law: substitute x = 1/t, pdf(x) dx = dt on (0, 1].
        let p = ValueDistribution::PowerLaw;
        let mass = simpson(|t: f64| if t == 0.0 { 1.0 } else { p.pdf(1.0 / t) / (t * t) }, 0.0, 1.0, 1000);
        assert!((mass - 1.0).abs() < 1e-6);
        // Piecewise-linear table: integrate segment by segment.
        let tab = table_curved();
        let ValueDistribution::Tabulated(t) = &tab else { unreachable!() };
        let mut mass = 0.0;
        for w in t.x.windows(2) {
            let (a, b) = (w[0], w[1]);
            let eps = 1e-12 * (b - a);
            mass += simpson(|x| tab.pdf(x.clamp(a + eps, b - eps)), a, b, 2);
        }
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn threshold_monotone_in_lambda_and_mu() {
        let u = ValueDistribution::PowerLaw;
        let mut prev = 0.0;
        for l in [1.5, 2.0, 3.0, 5.0, 9.0] {
            let t = u.threshold_value(l, 1).unwrap();
            assert!(t >= prev);
            prev = t;
        }
        let mut prev = f64::INFINITY;
        for mu in 1..5 {
            let t = u.threshold_value(6.0, mu).unwrap();
            assert!(t <= prev);
            prev = t;
        }
    }

    fn all_kinds() -> Vec<ValueDistribution> {
        vec![
            ValueDistribution::unit_uniform(),
            ValueDistribution::uniform(2.0, 7.0).unwrap(),
            ValueDistribution::PowerLaw,
            table_curved(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn cdf_inverts_quantile(g in 0.0f64..0.999_999) {
            for d in all_kinds() {
                let x = d.quantile(g).unwrap();
                prop_assert!((d.cdf(x) - g).abs() < 1e-9);
            }
        }

        #[test]
        fn quantile_inverts_cdf_on_interior(u in 0.001f64..0.999) {
            for d in all_kinds() {
                let x = d.quantile(u).unwrap();
                let back = d.quantile(d.cdf(x)).unwrap();
                prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn cdf_nondecreasing(a in -1.0f64..20.0, b in -1.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for d in all_kinds() {
                prop_assert!(d.cdf(lo) <= d.cdf(hi));
                prop_assert!(d.pdf(lo) >= 0.0);
            }
        }
    }
}
