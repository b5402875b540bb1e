//! Round-trace text format: one tab-separated line per round.
//!
//! Fields: round index, per-particle drafted symbol ids (particles joined by
//! `;`, symbols by `,`, `-` for an idle terminal particle), log weights
//! before and after reweighting (joined by `,`, 12 significant digits), ESS,
//! resample flag (0/1), and the ancestor vector (`,`-joined, `-` when no
//! resample fired).

use std::fmt::Write as _;

use crate::samplers::RoundRecord;

fn sig12(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else {
        format!("{x}")
    }
}

pub fn format_round(record: &RoundRecord) -> String {
    let drafted = record
        .drafted
        .iter()
        .map(|ids| {
            if ids.is_empty() {
                "-".to_string()
            } else {
                ids.iter()
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }
        })
        .collect::<Vec<_>>()
        .join(";");
    let join_lw = |lw: &[f64]| lw.iter().map(|&w| sig12(w)).collect::<Vec<_>>().join(",");
    let ancestors = match &record.ancestors {
        Some(a) => a
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(","),
        None => "-".to_string(),
    };
    let mut line = String::new();
    let _ = write!(
        line,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        record.round,
        drafted,
        join_lw(&record.log_weights_before),
        join_lw(&record.log_weights_after),
        sig12(record.ess),
        u8::from(record.resampled),
        ancestors,
    );
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_carries_all_fields() {
        let record = RoundRecord {
            round: 3,
            drafted: vec![vec![0, 2], vec![]],
            log_weights_before: vec![-0.5, f64::NEG_INFINITY],
            log_weights_after: vec![-0.75, f64::NEG_INFINITY],
            ess: 1.0,
            resampled: true,
            ancestors: Some(vec![0, 0]),
        };
        let line = format_round(&record);
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[0], "3");
        assert_eq!(fields[1], "0,2;-");
        assert!(fields[2].contains("-inf"));
        assert_eq!(fields[5], "1");
        assert_eq!(fields[6], "0,0");
        // 12 significant digits on finite weights.
        assert!(fields[3].starts_with("-7.50000000000e-1"));
    }

    #[test]
    fn no_resample_marks_ancestors_absent() {
        let record = RoundRecord {
            round: 0,
            drafted: vec![vec![1]],
            log_weights_before: vec![0.0],
            log_weights_after: vec![0.0],
            ess: 1.0,
            resampled: false,
            ancestors: None,
        };
        let line = format_round(&record);
        assert!(line.ends_with("\t0\t-"));
    }
}
