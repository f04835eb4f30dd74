use crate::EvalReport;

/// The precision column shows k = 10 when measured, otherwise the largest k.
fn headline_k(r: &EvalReport) -> Option<usize> {
    if r.precision.contains_key(&10) {
        Some(10)
    } else {
        r.precision.keys().max().copied()
    }
}

/// Fixed-width table with columns Size (MB), Inference Time (Second) and
/// Precision (%), one row per report.
pub fn report_table(reports: &[EvalReport]) -> String {
    let mut out = format!("{:<12} {:>10} {:>24} {:>14}\n", "Model", "Size (MB)", "Inference Time (Second)", "Precision (%)");
    for r in reports {
        let (k, p) = match headline_k(r) {
            Some(k) => (format!("@{k}"), format!("{:.2}", r.precision[&k] * 100.0)),
            None => (String::new(), "-".into()),
        };
        out.push_str(&format!(
            "{:<12} {:>10.2} {:>24.4} {:>14}\n",
            r.embedder,
            r.model_size_bytes as f64 / 1e6,
            r.median_inference_secs,
            format!("{p}{k}"),
        ));
    }
    out
}

pub fn report_json(reports: &[EvalReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}
