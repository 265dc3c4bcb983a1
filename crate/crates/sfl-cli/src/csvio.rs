//! results.csv: fixed column order, fixed float formatting, byte-stable
//! for identical runs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use sfl_eval::MetricsRecord;

pub const HEADER: &str =
    "config_hash,seed,mode,N,attack,queries_used,accuracy,fidelity,mi_mse,asr_fgsm,asr_pgd,wallclock_s";

fn opt(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(v) => format!("{v:.precision$}"),
        None => String::new(),
    }
}

pub fn to_csv(rows: &[MetricsRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{:.4},{},{},{},{:.3}\n",
            r.config_hash,
            r.seed,
            r.mode,
            r.n_server,
            r.attack,
            r.queries_used,
            r.accuracy,
            r.fidelity,
            opt(r.mi_mse, 6),
            opt(r.asr_fgsm, 4),
            opt(r.asr_pgd, 4),
            r.wallclock_s,
        ));
    }
    out
}

pub fn write_results(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    std::fs::write(path, to_csv(rows)).with_context(|| format!("writing {}", path.display()))
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    Ok(Some(field.parse()?))
}

pub fn read_results(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => bail!(
            "results schema mismatch in {}: got {:?}",
            path.display(),
            other
        ),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            bail!("{}:{}: expected 12 fields, got {}", path.display(), lineno + 2, fields.len());
        }
        rows.push(MetricsRecord {
            config_hash: fields[0].to_string(),
            seed: fields[1].parse()?,
            mode: fields[2].to_string(),
            n_server: fields[3].parse()?,
            attack: fields[4].to_string(),
            queries_used: fields[5].parse()?,
            accuracy: fields[6].parse()?,
            fidelity: fields[7].parse()?,
            mi_mse: parse_opt(fields[8])?,
            asr_fgsm: parse_opt(fields[9])?,
            asr_pgd: parse_opt(fields[10])?,
            wallclock_s: fields[11].parse()?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> MetricsRecord {
        MetricsRecord {
            config_hash: "abcd1234".into(),
            seed: 3,
            mode: "fine-tune".into(),
            n_server: 5,
            attack: "craft".into(),
            queries_used: 1000,
            accuracy: 81.2345,
            fidelity: 90.0,
            mi_mse: Some(0.012345),
            asr_fgsm: None,
            asr_pgd: Some(33.25),
            wallclock_s: 0.0,
        }
    }

    #[test]
    fn round_trip_preserves_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![row()];
        write_results(&path, &rows).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].config_hash, "abcd1234");
        assert_eq!(back[0].mi_mse, Some(0.012345));
        assert_eq!(back[0].asr_fgsm, None);
        assert!((back[0].accuracy - 81.2345).abs() < 1e-9);
    }

    #[test]
    fn fixed_column_order() {
        let csv = to_csv(&[row()]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "abcd1234,3,fine-tune,5,craft,1000,81.2345,90.0000,0.012345,,33.2500,0.000"
        );
    }
}
