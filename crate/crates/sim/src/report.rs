//! CSV output for per-step metrics.

use std::io::Write;
use std::path::Path;

use crate::error::SimError;
use crate::run::MetricsRow;

pub const CSV_HEADER: &str = "step,dyn_ms,solve_ms,iters,residual,max_pen_m,contacts,ke_J";

/// 17 significant digits, round-trips through `f64::from_str`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn render_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            fmt_f64(r.dyn_ms),
            fmt_f64(r.solve_ms),
            r.iters,
            fmt_f64(r.residual),
            fmt_f64(r.max_pen_m),
            r.contacts,
            fmt_f64(r.ke_j)
        ));
    }
    out
}

pub fn report_csv(rows: &[MetricsRow], path: &Path) -> Result<(), SimError> {
    let mut f = std::fs::File::create(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(render_csv(rows).as_bytes()).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>, SimError> {
    let mut lines = text.split('\n');
    if lines.next() != Some(CSV_HEADER) {
        return Err(SimError::Parse("missing metrics header".into()));
    }
    let bad = |n: usize| SimError::Parse(format!("malformed metrics row at line {}", n + 2));
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(n));
        }
        let u = |s: &str| s.parse::<usize>().map_err(|_| bad(n));
        let x = |s: &str| s.parse::<f64>().map_err(|_| bad(n));
        rows.push(MetricsRow {
            step: u(f[0])?,
            dyn_ms: x(f[1])?,
            solve_ms: x(f[2])?,
            iters: u(f[3])?,
            residual: x(f[4])?,
            max_pen_m: x(f[5])?,
            contacts: u(f[6])?,
            ke_j: x(f[7])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(step: usize, x: f64) -> MetricsRow {
        MetricsRow { step, dyn_ms: x, solve_ms: x * 3.0, iters: 7, residual: x / 7.0, max_pen_m: 1e-7 * x, contacts: 4, ke_j: 0.1 + x }
    }

    #[test]
    fn empty_rows_give_header_only() {
        assert_eq!(render_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn two_rows_give_three_lines() {
        let s = render_csv(&[row(0, 0.5), row(1, 0.25)]);
        assert_eq!(s.lines().count(), 3);
        assert!(!s.contains('\r'));
        assert!(s.lines().nth(1).unwrap().starts_with("0,5.0000000000000000e-1,"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![row(0, 1.0 / 3.0), row(1, std::f64::consts::PI)];
        report_csv(&rows, &path).unwrap();
        assert_eq!(parse_csv(&std::fs::read_to_string(&path).unwrap()).unwrap(), rows);
        let missing = dir.path().join("no/such/dir/m.csv");
        assert!(matches!(report_csv(&rows, &missing), Err(SimError::Io(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(xs in proptest::collection::vec((0usize..10_000, -1e300f64..1e300, 0usize..1000), 0..20)) {
            let rows: Vec<MetricsRow> = xs.iter().map(|&(s, x, c)| MetricsRow {
                step: s, dyn_ms: x.abs(), solve_ms: x.abs() / 3.0, iters: c, residual: x, max_pen_m: x.abs() * 1e-300, contacts: c, ke_j: x * 0.1,
            }).collect();
            let back = parse_csv(&render_csv(&rows)).unwrap();
            prop_assert_eq!(back.len(), rows.len());
            for (a, b) in back.iter().zip(&rows) {
                prop_assert_eq!(a.residual.to_bits(), b.residual.to_bits());
                prop_assert_eq!(a.max_pen_m.to_bits(), b.max_pen_m.to_bits());
                prop_assert_eq!(a.ke_j.to_bits(), b.ke_j.to_bits());
                prop_assert_eq!(a, b);
            }
        }
    }
}
