use serde::{Deserialize, Serialize};

/// Evaluation summary. Metrics that a run does not produce serialise as
/// `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1_mean: Option<f64>,
    pub macro_f1_std: Option<f64>,
    pub micro_f1_mean: Option<f64>,
    pub micro_f1_std: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub ndcg_at_k: Option<f64>,
    pub epoch_seconds: Vec<f64>,
    pub losses: Vec<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_has_exact_keys() {
        let r = MetricsReport {
            macro_f1_mean: Some(0.5),
            losses: vec![1.0, 0.5],
            ..MetricsReport::default()
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut want = vec![
            "macro_f1_mean",
            "macro_f1_std",
            "micro_f1_mean",
            "micro_f1_std",
            "recall_at_k",
            "ndcg_at_k",
            "epoch_seconds",
            "losses",
        ];
        let mut got = keys.clone();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
        assert!(v["recall_at_k"].is_null());
        assert_eq!(MetricsReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 1.0));
    }
}
