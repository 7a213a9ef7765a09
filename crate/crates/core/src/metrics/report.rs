use serde::{Deserialize, Serialize};

use super::esd::EsdReport;

/// How per-sample ESD values are combined into the aggregate.
pub const ESD_AGGREGATION: &str = "mean_of_samples";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub id: String,
    pub esd: f64,
    pub n_audio_events: usize,
    pub n_motion_events: usize,
    pub penalized: bool,
}

impl SampleReport {
    pub fn from_esd(id: impl Into<String>, r: &EsdReport) -> Self {
        Self {
            id: id.into(),
            esd: r.esd,
            n_audio_events: r.n_audio_events,
            n_motion_events: r.n_motion_events,
            penalized: r.penalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub esd_mean: f64,
    pub diversity: Option<f64>,
    pub frechet: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<SampleReport>,
    pub aggregate: Aggregate,
    pub esd_aggregation: String,
}

impl EvalReport {
    /// Samples keep their input order; `esd_mean` is the mean of sample ESDs.
    pub fn new(per_sample: Vec<SampleReport>, diversity: Option<f64>, frechet: Option<f64>) -> Self {
        let count = per_sample.len();
        let esd_mean = if count == 0 {
            0.0
        } else {
            per_sample.iter().map(|s| s.esd).sum::<f64>() / count as f64
        };
        Self {
            per_sample,
            aggregate: Aggregate {
                esd_mean,
                diversity,
                frechet,
                count,
            },
            esd_aggregation: ESD_AGGREGATION.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_key_order_is_stable() {
        let r = EvalReport::new(
            vec![SampleReport {
                id: "a".into(),
                esd: 0.5,
                n_audio_events: 2,
                n_motion_events: 1,
                penalized: false,
            }],
            Some(1.0),
            Some(0.0),
        );
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"per_sample":[{"id":"a","esd":0.5,"n_audio_events":2,"n_motion_events":1,"penalized":false}],"aggregate":{"esd_mean":0.5,"diversity":1.0,"frechet":0.0,"count":1},"esd_aggregation":"mean_of_samples"}"#
        );
        let back: EvalReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
