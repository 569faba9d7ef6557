//! Report serialization: the per-experiment CSV/JSON files and the
//! markdown aggregation used by the report command.

use std::io::Write;
use std::path::Path;

use instcal_data::metrics::MetricsReport;

use crate::error::{HarnessError, Result};

pub const REPORT_CSV_HEADER: &str = "method,domain,severity,miou,ece,n_images,config_hash";

pub fn report_csv(rows: &[MetricsReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{}\n",
            r.method,
            r.domain.label(),
            r.domain.severity(),
            r.miou,
            r.ece,
            r.n_images,
            r.config_hash
        ));
    }
    out
}

pub fn write_report_csv(path: &Path, rows: &[MetricsReport]) -> Result<()> {
    std::fs::write(path, report_csv(rows))?;
    Ok(())
}

pub fn write_report_json(path: &Path, rows: &[MetricsReport]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(rows)?)?;
    Ok(())
}

pub fn load_report_json(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<MetricsReport> = serde_json::from_str(&text)?;
    for r in &rows {
        r.validate()?;
    }
    Ok(rows)
}

/// Aggregate report rows into a method x domain mIoU markdown table with an
/// Avg. column, mirroring the usual cross-domain table layout. Values are
/// percentages with one decimal.
pub fn markdown_summary(rows: &[MetricsReport]) -> Result<String> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no report rows to aggregate".into()));
    }
    let n_classes = rows[0].per_class_iou.len();
    if rows.iter().any(|r| r.per_class_iou.len() != n_classes) {
        return Err(HarnessError::Config(
            "inconsistent class counts across reports".into(),
        ));
    }
    let mut domains: Vec<String> = Vec::new();
    for r in rows {
        let d = domain_column(r);
        if !domains.contains(&d) {
            domains.push(d);
        }
    }
    let mut methods: Vec<String> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }

    let mut md = String::new();
    md.push_str("| Method |");
    for d in &domains {
        md.push_str(&format!(" {d} |"));
    }
    md.push_str(" Avg. |\n");
    md.push_str("|---|");
    for _ in &domains {
        md.push_str("---|");
    }
    md.push_str("---|\n");

    for m in &methods {
        md.push_str(&format!("| {m} |"));
        let mut values = Vec::new();
        for d in &domains {
            let cell = rows
                .iter()
                .find(|r| &r.method == m && &domain_column(r) == d)
                .map(|r| r.miou);
            match cell {
                Some(v) => {
                    values.push(v);
                    md.push_str(&format!(" {:.1} |", v * 100.0));
                }
                None => md.push_str(" - |"),
            }
        }
        if values.is_empty() {
            md.push_str(" - |\n");
        } else {
            let avg = values.iter().sum::<f64>() / values.len() as f64;
            md.push_str(&format!(" {:.1} |\n", avg * 100.0));
        }
    }
    Ok(md)
}

fn domain_column(r: &MetricsReport) -> String {
    if r.domain.severity() > 0 {
        format!("{}:{}", r.domain.label(), r.domain.severity())
    } else {
        r.domain.label()
    }
}

/// Collect every `*.json` report under a directory (one level).
pub fn load_reports_dir(dir: &Path) -> Result<Vec<MetricsReport>> {
    let mut rows = Vec::new();
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .filter(|p| {
            p.file_name()
                .map(|n| n != "resolved_config.json")
                .unwrap_or(true)
        })
        .collect();
    paths.sort();
    for p in paths {
        rows.extend(load_report_json(&p)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use instcal_data::corrupt::CorruptionName;
    use instcal_data::{DomainKind, DomainSpec};

    fn row(method: &str, domain: DomainSpec, miou: f64) -> MetricsReport {
        MetricsReport {
            method: method.into(),
            domain,
            per_class_iou: vec![Some(miou); 3],
            miou,
            ece: 0.1,
            n_images: 10,
            config_hash: "deadbeef00000000".into(),
        }
    }

    #[test]
    fn csv_layout_matches_contract() {
        let rows = vec![row(
            "pretrained",
            DomainSpec::corruption(CorruptionName::Fog, 2, 0),
            0.5,
        )];
        let csv = report_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "pretrained,fog,2,0.500000,0.100000,10,deadbeef00000000"
        );
    }

    #[test]
    fn markdown_single_row() {
        let rows = vec![row("pretrained", DomainSpec::new(DomainKind::Identity, 0), 0.75)];
        let md = markdown_summary(&rows).unwrap();
        assert_eq!(
            md,
            "| Method | identity | Avg. |\n|---|---|---|\n| pretrained | 75.0 | 75.0 |\n"
        );
    }

    #[test]
    fn markdown_avg_is_arithmetic_mean() {
        let rows = vec![
            row("m", DomainSpec::corruption(CorruptionName::Fog, 1, 0), 0.4),
            row("m", DomainSpec::corruption(CorruptionName::Contrast, 1, 0), 0.6),
        ];
        let md = markdown_summary(&rows).unwrap();
        assert!(md.contains("| m | 40.0 | 60.0 | 50.0 |"), "got: {md}");
    }

    #[test]
    fn inconsistent_class_counts_rejected() {
        let mut r2 = row("m", DomainSpec::new(DomainKind::Identity, 0), 0.5);
        r2.per_class_iou = vec![Some(0.5); 4];
        let rows = vec![row("m", DomainSpec::new(DomainKind::Identity, 0), 0.5), r2];
        assert!(markdown_summary(&rows).is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let rows = vec![row(
            "instcal-u",
            DomainSpec::corruption(CorruptionName::GaussNoise, 3, 1),
            0.625,
        )];
        write_report_json(&p, &rows).unwrap();
        let back = load_report_json(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].method, "instcal-u");
        assert_eq!(back[0].miou, 0.625);
    }
}
