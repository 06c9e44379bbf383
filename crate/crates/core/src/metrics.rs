//! Episode results and campaign statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: u64,
    pub success: bool,
    pub agreement_price: Option<f64>,
    pub duration_ms: Option<Millis>,
    pub utility: Option<f64>,
}

impl EpisodeResult {
    pub fn failure(episode_id: u64) -> Self {
        Self {
            episode_id,
            success: false,
            agreement_price: None,
            duration_ms: None,
            utility: None,
        }
    }

    pub fn agreement(episode_id: u64, price: f64, duration_ms: Millis, utility: f64) -> Self {
        Self {
            episode_id,
            success: true,
            agreement_price: Some(price),
            duration_ms: Some(duration_ms),
            utility: Some(utility),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("campaign has no episodes")]
pub struct EmptyCampaign;

/// Mean and sample standard deviation. `sd` is absent below two samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: Option<f64>,
    pub n: usize,
}

pub fn mean_sd(values: &[f64]) -> Option<MeanSd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Some(MeanSd { mean, sd, n })
}

/// Utility averaged over successful episodes; `None` when there are none.
pub fn u_avg(results: &[EpisodeResult]) -> Option<MeanSd> {
    let u: Vec<f64> = results.iter().filter(|r| r.success).filter_map(|r| r.utility).collect();
    mean_sd(&u)
}

/// Agreement time averaged over successful episodes, in ms.
pub fn t_avg(results: &[EpisodeResult]) -> Option<MeanSd> {
    let t: Vec<f64> = results
        .iter()
        .filter(|r| r.success)
        .filter_map(|r| r.duration_ms.map(|d| d as f64))
        .collect();
    mean_sd(&t)
}

pub fn s_pct(results: &[EpisodeResult]) -> Result<f64, EmptyCampaign> {
    if results.is_empty() {
        return Err(EmptyCampaign);
    }
    let wins = results.iter().filter(|r| r.success).count();
    Ok(100.0 * wins as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub u_avg: Option<MeanSd>,
    pub t_avg: Option<MeanSd>,
    pub s_pct: f64,
    pub episode_count: usize,
}

impl CampaignSummary {
    pub fn from_results(results: &[EpisodeResult]) -> Result<Self, EmptyCampaign> {
        Ok(Self {
            u_avg: u_avg(results),
            t_avg: t_avg(results),
            s_pct: s_pct(results)?,
            episode_count: results.len(),
        })
    }
}

pub const RESULTS_HEADER: &str = "episode_id,success,agreement_price,duration_ms,utility";

pub fn write_results<W: std::io::Write>(out: W, results: &[EpisodeResult]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER.split(','))?;
    for r in results {
        w.write_record([
            r.episode_id.to_string(),
            r.success.to_string(),
            opt(r.agreement_price),
            r.duration_ms.map_or(String::new(), |d| d.to_string()),
            opt(r.utility),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn na(v: Option<f64>) -> String {
    v.map_or("N/A".to_string(), |x| x.to_string())
}

/// Labels identifying the campaign behind a summary row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryKey {
    pub strategy: String,
    pub seller: String,
    pub zoa: String,
    pub md: String,
    pub mr: String,
    pub deadline: String,
}

pub const SUMMARY_HEADER: &str = "strategy,seller,zoa,md,mr,deadline,u_avg,u_sd,t_avg,t_sd,s_pct,n";

pub fn write_summary<W: std::io::Write>(
    out: W,
    rows: &[(SummaryKey, CampaignSummary)],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for (k, s) in rows {
        w.write_record([
            k.strategy.clone(),
            k.seller.clone(),
            k.zoa.clone(),
            k.md.clone(),
            k.mr.clone(),
            k.deadline.clone(),
            na(s.u_avg.map(|m| m.mean)),
            na(s.u_avg.and_then(|m| m.sd)),
            na(s.t_avg.map(|m| m.mean)),
            na(s.t_avg.and_then(|m| m.sd)),
            s.s_pct.to_string(),
            s.episode_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const PLOT_HEADER: &str = "seller,zoa,md,s_pct";

/// Grouped-bar data: success rate by density within each ZoA.
pub fn write_plot_data<W: std::io::Write>(
    out: W,
    rows: &[(SummaryKey, CampaignSummary)],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PLOT_HEADER.split(','))?;
    for (k, s) in rows {
        w.write_record([k.seller.clone(), k.zoa.clone(), k.md.clone(), s.s_pct.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(u: f64, d: Millis) -> EpisodeResult {
        EpisodeResult::agreement(0, 400.0, d, u)
    }

    #[test]
    fn utility_average_examples() {
        let r = [ok(0.5, 1), ok(0.3, 1), EpisodeResult::failure(2)];
        assert!((u_avg(&r).unwrap().mean - 0.4).abs() < 1e-15);
        assert!(u_avg(&[EpisodeResult::failure(0)]).is_none());
        assert_eq!(u_avg(&[ok(-0.3, 1)]).unwrap().mean, -0.3);
    }

    #[test]
    fn time_average_examples() {
        let r = [ok(0.0, 1000), ok(0.0, 3000)];
        assert_eq!(t_avg(&r).unwrap().mean, 2000.0);
        let mut with_fail = r.to_vec();
        with_fail.push(EpisodeResult::failure(9));
        assert_eq!(t_avg(&with_fail).unwrap().mean, 2000.0);
        assert!(t_avg(&[]).is_none());
    }

    #[test]
    fn success_rate_examples() {
        let mk = |wins: usize, n: usize| -> Vec<EpisodeResult> {
            (0..n)
                .map(|i| if i < wins { ok(0.1, 5) } else { EpisodeResult::failure(i as u64) })
                .collect()
        };
        assert_eq!(s_pct(&mk(80, 100)).unwrap(), 80.0);
        assert_eq!(s_pct(&mk(0, 50)).unwrap(), 0.0);
        assert_eq!(s_pct(&mk(500, 500)).unwrap(), 100.0);
        assert_eq!(s_pct(&[]), Err(EmptyCampaign));
    }

    #[test]
    fn summary_csv_marks_missing_values() {
        let s = CampaignSummary::from_results(&[EpisodeResult::failure(0)]).unwrap();
        let key = SummaryKey {
            strategy: "sl".into(),
            seller: "linear".into(),
            zoa: "60".into(),
            md: "L".into(),
            mr: "H".into(),
            deadline: "Lg".into(),
        };
        let mut buf = Vec::new();
        write_summary(&mut buf, &[(key, s)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "sl,linear,60,L,H,Lg,N/A,N/A,N/A,N/A,0,1");
    }
}
