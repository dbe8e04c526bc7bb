use std::collections::BTreeMap;
use std::fmt::Write;

use crate::retrieval::EvalReport;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Rows keyed by (dataset, ipc, ratio), columns by method, cells `mean ± std`
/// of mAP in percent over seeds. One block per code length.
pub fn format_results_table(reports: &[EvalReport]) -> String {
    let mut methods: Vec<String> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut by_bits: BTreeMap<usize, BTreeMap<(String, usize), BTreeMap<String, Vec<f64>>>> = BTreeMap::new();
    let mut ratios: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for r in reports {
        let key = (r.dataset.clone(), r.ipc);
        if let Some(x) = r.ratio {
            ratios.insert(key.clone(), x);
        }
        by_bits
            .entry(r.code_bits)
            .or_default()
            .entry(key)
            .or_default()
            .entry(r.method.clone())
            .or_default()
            .push(r.map_value * 100.0);
    }
    let mut out = String::new();
    for (bits, rows) in by_bits {
        let _ = writeln!(out, "{bits} bits");
        let _ = write!(out, "| Dataset | Img/cls | Ratio (%) |");
        for m in &methods {
            let _ = write!(out, " {m} |");
        }
        out.push('\n');
        out.push_str(&"|---".repeat(3 + methods.len()));
        out.push_str("|\n");
        for ((ds, ipc), cells) in rows {
            let ratio = ratios.get(&(ds.clone(), ipc)).map_or("-".into(), |r| format!("{:.2}", r * 100.0));
            let _ = write!(out, "| {ds} | {ipc} | {ratio} |");
            for m in &methods {
                match cells.get(m) {
                    Some(v) => {
                        let (mean, std) = mean_std(v);
                        let _ = write!(out, " {mean:.2} ± {std:.2} |");
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// One ablation cell: the two switches and the per-seed mAPs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub na: bool,
    pub da: bool,
    pub maps: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        mean_std(&self.maps).0
    }
}

fn mark(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "✗"
    }
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("| NA | DA | mAP (%) |\n|---|---|---|\n");
    for r in rows {
        let (m, s) = mean_std(&r.maps);
        let _ = writeln!(out, "| {} | {} | {:.2} ± {:.2} |", mark(r.na), mark(r.da), m * 100.0, s * 100.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(method: &str, ipc: usize, map: f64) -> EvalReport {
        EvalReport {
            map_value: map,
            precision_at_k: vec![],
            code_bits: 32,
            query_count: 1,
            database_count: 1,
            depth: None,
            method: method.into(),
            dataset: "toy".into(),
            ipc,
            seed: 0,
            loss: "center".into(),
            trained_on: method.into(),
            ratio: Some(0.02),
            query_checksum: String::new(),
            database_checksum: String::new(),
        }
    }

    #[test]
    fn results_layout() {
        let t = format_results_table(&[report("iem", 10, 0.5), report("iem", 10, 0.3), report("random", 10, 0.2)]);
        assert!(t.contains("| Dataset | Img/cls | Ratio (%) | iem | random |"));
        assert!(t.contains("| toy | 10 | 2.00 | 40.00 ± 10.00 | 20.00 ± 0.00 |"));
    }

    #[test]
    fn ablation_layout() {
        let rows = [
            AblationRow { na: false, da: false, maps: vec![0.1] },
            AblationRow { na: true, da: true, maps: vec![0.3] },
        ];
        let t = format_ablation_table(&rows);
        assert!(t.contains("| ✗ | ✗ | 10.00"));
        assert!(t.contains("| ✓ | ✓ | 30.00"));
    }
}
