//! Overhead, cost and efficiency metrics, latency statistics and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::{CampaignReport, InjectionOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("baseline count is zero")]
    ZeroBaseline,
    #[error("cost is zero")]
    ZeroCost,
    #[error("alpha {0} outside [0, 1]")]
    BadAlpha(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CccDenominator {
    /// `alpha * perf + beta * mem`.
    Weighted,
    /// `perf + mem`.
    UnitSum,
}

impl FromStr for CccDenominator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "weighted" => Ok(CccDenominator::Weighted),
            "unit-sum" | "unit_sum" => Ok(CccDenominator::UnitSum),
            _ => Err(format!("unknown ccc denominator `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub alpha: f64,
    pub ccc_denominator: CccDenominator,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            ccc_denominator: CccDenominator::UnitSum,
        }
    }
}

impl MetricsConfig {
    pub fn new(alpha: f64, ccc_denominator: CccDenominator) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(MetricsError::BadAlpha(alpha));
        }
        Ok(Self { alpha, ccc_denominator })
    }

    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }
}

fn relative(base: f64, new: f64) -> Result<f64, MetricsError> {
    if base == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((new - base) / base)
}

pub fn performance_cost(baseline_dyn: u64, instrumented_dyn: u64) -> Result<f64, MetricsError> {
    relative(baseline_dyn as f64, instrumented_dyn as f64)
}

pub fn memory_cost(baseline_static: usize, instrumented_static: usize) -> Result<f64, MetricsError> {
    relative(baseline_static as f64, instrumented_static as f64)
}

pub fn total_cost(perf: f64, mem: f64, mc: &MetricsConfig) -> f64 {
    match mc.ccc_denominator {
        CccDenominator::Weighted => mc.alpha * perf + mc.beta() * mem,
        CccDenominator::UnitSum => perf + mem,
    }
}

pub fn ccc(coverage: f64, cost: f64) -> Result<f64, MetricsError> {
    if cost == 0.0 {
        return Err(MetricsError::ZeroCost);
    }
    Ok(coverage / cost)
}

/// Round to `places` decimals.
pub fn round_to(x: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (x * k).round() / k
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dist {
    pub count: usize,
    pub min: Option<u64>,
    pub max: Option<u64>,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    /// Value to number of occurrences.
    pub histogram: BTreeMap<u64, usize>,
}

impl Dist {
    pub fn from_values(mut v: Vec<u64>) -> Self {
        v.sort_unstable();
        let n = v.len();
        let mut histogram = BTreeMap::new();
        for x in &v {
            *histogram.entry(*x).or_default() += 1;
        }
        let median = match n {
            0 => None,
            _ if n % 2 == 1 => Some(v[n / 2] as f64),
            _ => Some((v[n / 2 - 1] + v[n / 2]) as f64 / 2.0),
        };
        Dist {
            count: n,
            min: v.first().copied(),
            max: v.last().copied(),
            median,
            mean: (n > 0).then(|| v.iter().sum::<u64>() as f64 / n as f64),
            histogram,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentMeans {
    pub detection: f64,
    pub handler: f64,
    pub restore: f64,
    pub transfer: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub detection: Dist,
    pub correction: Dist,
    /// Mean of each correction component over corrected injections.
    pub components: ComponentMeans,
}

pub fn latency_stats(outcomes: &[InjectionOutcome]) -> LatencyStats {
    let detection = Dist::from_values(outcomes.iter().filter_map(|o| o.detection_latency).collect());
    let correction = Dist::from_values(outcomes.iter().filter_map(|o| o.correction_latency).collect());
    let comps: Vec<_> = outcomes.iter().filter_map(|o| o.components).collect();
    let mean = |f: fn(&crate::campaign::Components) -> u64| {
        if comps.is_empty() {
            0.0
        } else {
            comps.iter().map(f).sum::<u64>() as f64 / comps.len() as f64
        }
    };
    LatencyStats {
        detection,
        correction,
        components: ComponentMeans {
            detection: mean(|c| c.detection),
            handler: mean(|c| c.handler),
            restore: mean(|c| c.restore),
            transfer: mean(|c| c.transfer),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub performance_cost: f64,
    pub memory_cost: f64,
    pub total_weighted: f64,
    pub total_unit_sum: f64,
    pub ccc_weighted: f64,
    pub ccc_unit_sum: f64,
    /// The value selected by the configured denominator.
    pub ccc: f64,
}

/// Costs and CCC for one report. Coverage is the correct-output fraction of
/// activated injections.
pub fn cost_summary(r: &CampaignReport, mc: &MetricsConfig) -> Result<CostSummary, MetricsError> {
    let o = &r.overhead;
    let perf = performance_cost(o.baseline_dyn, o.instrumented_dyn)?;
    let mem = memory_cost(o.baseline_static, o.instrumented_static)?;
    let weighted = total_cost(perf, mem, &MetricsConfig { ccc_denominator: CccDenominator::Weighted, ..*mc });
    let unit = total_cost(perf, mem, &MetricsConfig { ccc_denominator: CccDenominator::UnitSum, ..*mc });
    let cov = r.coverage.correct_of_activated;
    let (ccc_weighted, ccc_unit_sum) = (ccc(cov, weighted)?, ccc(cov, unit)?);
    Ok(CostSummary {
        performance_cost: perf,
        memory_cost: mem,
        total_weighted: weighted,
        total_unit_sum: unit,
        ccc_weighted,
        ccc_unit_sum,
        ccc: match mc.ccc_denominator {
            CccDenominator::Weighted => ccc_weighted,
            CccDenominator::UnitSum => ccc_unit_sum,
        },
    })
}

#[derive(Serialize)]
struct ReportFile<'a> {
    metrics: MetricsConfig,
    ccc_note: &'static str,
    reports: Vec<ReportEntry<'a>>,
}

#[derive(Serialize)]
struct ReportEntry<'a> {
    #[serde(flatten)]
    report: &'a CampaignReport,
    costs: Option<CostSummary>,
}

const CCC_NOTE: &str = "weighted uses alpha*perf + (1-alpha)*mem as the cost; unit_sum uses perf + mem; \
at alpha = 0.5 the weighted value is exactly twice the unit_sum value";

pub fn report_json(reports: &[CampaignReport], mc: &MetricsConfig) -> String {
    let file = ReportFile {
        metrics: *mc,
        ccc_note: CCC_NOTE,
        reports: reports
            .iter()
            .map(|r| ReportEntry {
                report: r,
                costs: cost_summary(r, mc).ok(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("report serializes")
}

/// Wrong/Correct percentages of activated injections per program and mode.
pub fn table_summary(reports: &[CampaignReport], mc: &MetricsConfig) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<12} {:<5} {:>6} {:>9} {:>9} {:>9} {:>9} {:>8}",
        "program", "mode", "n", "activated", "wrong%", "correct%", "perf%", "ccc"
    )
    .unwrap();
    for r in reports {
        let c = cost_summary(r, mc).ok();
        writeln!(
            s,
            "{:<12} {:<5} {:>6} {:>9} {:>9.1} {:>9.1} {:>9} {:>8}",
            r.program,
            r.mode.to_string(),
            r.injections,
            r.activated,
            100.0 * r.coverage.wrong_of_activated,
            100.0 * r.coverage.correct_of_activated,
            c.map(|c| format!("{:.1}", 100.0 * c.performance_cost)).unwrap_or_else(|| "-".into()),
            c.map(|c| format!("{:.3}", c.ccc)).unwrap_or_else(|| "-".into()),
        )
        .unwrap();
    }
    s
}

/// Write `report.json`, `summary.txt` and one `<program>-<mode>.csv` per
/// report into `dir`.
pub fn emit_report(reports: &[CampaignReport], mc: &MetricsConfig, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> std::io::Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("report.json".into(), report_json(reports, mc))?;
    put("summary.txt".into(), table_summary(reports, mc))?;
    for r in reports {
        put(format!("{}-{}.csv", r.program, r.mode), r.to_csv())?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_arithmetic() {
        assert!((performance_cost(1000, 1400).unwrap() - 0.40).abs() < 1e-12);
        assert_eq!(performance_cost(1000, 1000).unwrap(), 0.0);
        assert_eq!(performance_cost(0, 10), Err(MetricsError::ZeroBaseline));
        assert!((memory_cost(200, 450).unwrap() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn totals_and_ccc() {
        let w = MetricsConfig::new(0.5, CccDenominator::Weighted).unwrap();
        let u = MetricsConfig::default();
        assert!((total_cost(0.405, 1.2725, &w) - 0.83875).abs() < 1e-12);
        assert!((total_cost(0.405, 1.2725, &u) - 1.6775).abs() < 1e-12);
        let one = MetricsConfig::new(1.0, CccDenominator::Weighted).unwrap();
        assert_eq!(total_cost(0.3, 0.9, &one), 0.3);
        assert_eq!(ccc(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(ccc(0.5, 0.0), Err(MetricsError::ZeroCost));
        assert!(MetricsConfig::new(1.5, CccDenominator::Weighted).is_err());
        // Reconciles the CDCC row: 0.93 / (0.80 + 0.94).
        assert_eq!(round_to(ccc(0.93, 0.80 + 0.94).unwrap(), 3), 0.534);
    }

    #[test]
    fn ccc_monotone_and_linear() {
        let costs = [0.2, 0.5, 1.0, 1.7, 3.0];
        for w in costs.windows(2) {
            assert!(ccc(0.9, w[0]).unwrap() > ccc(0.9, w[1]).unwrap());
        }
        assert!((ccc(0.8, 1.3).unwrap() - 2.0 * ccc(0.4, 1.3).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dist_median_mean() {
        let d = Dist::from_values(vec![5, 1, 3, 9]);
        assert_eq!(d.median, Some(4.0));
        assert_eq!(d.mean, Some(4.5));
        assert_eq!((d.min, d.max, d.count), (Some(1), Some(9), 4));
        assert_eq!(Dist::from_values(vec![]).median, None);
    }
}
