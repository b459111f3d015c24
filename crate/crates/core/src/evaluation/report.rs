use std::io::Write;

use serde::Serialize;

use super::EvalRecord;
use crate::matching::MatchMethod;

pub const CSV_HEADER: &str = "sequence,near,far,gap,method,t_err,r_err,ste,log_ste,failed,match_count";

#[derive(Serialize)]
struct Row<'a> {
    sequence: &'a str,
    near: &'a str,
    far: &'a str,
    gap: Option<usize>,
    method: MatchMethod,
    t_err: Option<f64>,
    r_err: Option<f64>,
    ste: Option<f64>,
    log_ste: Option<f64>,
    failed: bool,
    match_count: usize,
}

/// One CSV row per record; fields that do not apply are left empty.
pub fn write_records_csv<W: Write>(writer: W, records: &[EvalRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(Row {
            sequence: &r.sequence,
            near: &r.near,
            far: &r.far,
            gap: r.pair.as_ref().map(|p| p.gap_j),
            method: r.method,
            t_err: r.t_err,
            r_err: r.r_err,
            ste: r.ste,
            log_ste: r.log_ste(),
            failed: r.failed,
            match_count: r.match_count,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Mean log STE of the records for `method` that carry an STE.
pub fn mean_log_ste(records: &[EvalRecord], method: MatchMethod) -> Option<f64> {
    let logs: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| r.log_ste())
        .collect();
    (!logs.is_empty()).then(|| logs.iter().sum::<f64>() / logs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{PairRecord, STE_MAX};
    use crate::geometry::{RelativePose, UnitQuaternion};
    use nalgebra::Vector3;

    #[test]
    fn header_and_rows() {
        let pair = PairRecord {
            index_near: 5,
            index_far: 15,
            gap_j: 2,
            ground_truth: RelativePose::new(UnitQuaternion::IDENTITY, Vector3::new(0.0, 0.0, 1.0)),
        };
        let kitti = EvalRecord::kitti("07", &pair, MatchMethod::SiftOnly, None, 4);
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[kitti]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "07,5,15,2,sift_only,1.0,1.0,,,true,4");

        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), CSV_HEADER);
    }

    #[test]
    fn mean_log_ste_of_failures() {
        let mut r = EvalRecord::kitti(
            "x",
            &PairRecord {
                index_near: 0,
                index_far: 5,
                gap_j: 1,
                ground_truth: RelativePose::new(UnitQuaternion::IDENTITY, Vector3::zeros()),
            },
            MatchMethod::Combined,
            None,
            0,
        );
        assert_eq!(mean_log_ste(&[r.clone()], MatchMethod::Combined), None);
        r.ste = Some(STE_MAX);
        assert!((mean_log_ste(&[r], MatchMethod::Combined).unwrap() - STE_MAX.ln()).abs() < 1e-12);
    }
}
