//! Feature CSV: one row per ingested packet, optional trailing label column.

use std::io::{BufRead, Write};

use super::{FeatureVector, MacAddr, TelemetryError, FEATURE_COUNT};
use crate::detect::Label;

pub const FEATURE_CSV_HEADER: &str = "timestamp_us,peer,n_peers,packet_size,protocol_efficiency,mean_flow,inter_arrival_us,mov_mean,mov_var,mov_median,scaled_size,scaled_dt,src_ports,clients_per_mac,entropy_bits,kl_bits,label";

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub timestamp_us: u64,
    pub peer: MacAddr,
    pub features: FeatureVector,
    pub label: Option<Label>,
}

/// Writes rows with the label column when `labeled` is set. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_feature_csv<W: Write>(
    mut out: W,
    rows: &[FeatureRow],
    labeled: bool,
) -> Result<(), TelemetryError> {
    let header = if labeled {
        FEATURE_CSV_HEADER
    } else {
        FEATURE_CSV_HEADER
            .strip_suffix(",label")
            .expect("header ends with the label column")
    };
    writeln!(out, "{header}")?;
    for row in rows {
        write!(out, "{},{}", row.timestamp_us, row.peer)?;
        for v in row.features.to_array() {
            write!(out, ",{v}")?;
        }
        if labeled {
            let label = row.label.map(|l| l.as_str()).unwrap_or("");
            write!(out, ",{label}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_feature_csv<R: BufRead>(input: R) -> Result<Vec<FeatureRow>, TelemetryError> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| TelemetryError::Parse("empty feature CSV".into()))??;
    let header = header.trim();
    let labeled = if header == FEATURE_CSV_HEADER {
        true
    } else if Some(header) == FEATURE_CSV_HEADER.strip_suffix(",label") {
        false
    } else {
        return Err(TelemetryError::Parse(format!(
            "unexpected feature CSV header {header:?}"
        )));
    };

    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| TelemetryError::Parse(format!("line {}: {what}", i + 2));
        let cols: Vec<&str> = line.split(',').collect();
        let expected = 2 + FEATURE_COUNT + usize::from(labeled);
        if cols.len() != expected {
            return Err(bad(&format!("expected {expected} columns, got {}", cols.len())));
        }
        let timestamp_us = cols[0].parse().map_err(|_| bad("bad timestamp"))?;
        let peer = cols[1].parse()?;
        let mut values = [0.0; FEATURE_COUNT];
        for (slot, text) in values.iter_mut().zip(&cols[2..2 + FEATURE_COUNT]) {
            *slot = text.parse().map_err(|_| bad("bad feature value"))?;
        }
        let label = if labeled && !cols[expected - 1].is_empty() {
            Some(
                cols[expected - 1]
                    .parse()
                    .map_err(|_| bad("unknown label"))?,
            )
        } else {
            None
        };
        rows.push(FeatureRow {
            timestamp_us,
            peer,
            features: FeatureVector::from_array(values),
            label,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::AttackLabel;

    #[test]
    fn labeled_rows_survive_a_write_read_cycle() {
        let mut a = [0.0; FEATURE_COUNT];
        for (i, v) in a.iter_mut().enumerate() {
            *v = 0.1 * i as f64 + 1.0 / 3.0;
        }
        let rows = vec![
            FeatureRow {
                timestamp_us: 12,
                peer: MacAddr([2, 0, 10, 0, 0, 10]),
                features: FeatureVector::from_array(a),
                label: Some(Label::Normal),
            },
            FeatureRow {
                timestamp_us: 13,
                peer: MacAddr([2, 0, 10, 0, 0, 99]),
                features: FeatureVector::default(),
                label: Some(Label::Attack(AttackLabel::Ex7)),
            },
        ];
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &rows, true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(FEATURE_CSV_HEADER));
        assert!(text.contains(",EX-7\n"));
        assert_eq!(read_feature_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn unlabeled_header_drops_label_column() {
        let rows = vec![FeatureRow {
            timestamp_us: 1,
            peer: MacAddr([0; 6]),
            features: FeatureVector::default(),
            label: None,
        }];
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &rows, false).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().ends_with("kl_bits"));
        assert_eq!(read_feature_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn rejects_foreign_header_and_short_rows() {
        assert!(read_feature_csv(&b"a,b,c\n"[..]).is_err());
        let text = format!("{FEATURE_CSV_HEADER}\n1,00:00:00:00:00:00,1,2\n");
        assert!(read_feature_csv(text.as_bytes()).is_err());
    }
}
