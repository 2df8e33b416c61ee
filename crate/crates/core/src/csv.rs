//! Trace serialization. The column set and number format are a fixed contract:
//! plain ASCII, `.` as decimal separator, 9 significant digits.

use std::io::{self, Write};

use crate::sim::Trace;

pub const COLUMNS: [&str; 14] =
    ["t", "q", "qd", "theta", "thetad", "tau_m", "tau_s", "ref", "sigma", "d2_true", "d2_hat", "d4_true", "d4_hat", "tau_env"];

/// `d.dddddddde[-]x`: always one leading digit, a decimal point and eight
/// more digits, independent of locale.
pub fn format_value(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn write_trace<W: Write>(trace: &Trace, mut w: W) -> io::Result<()> {
    writeln!(w, "{}", COLUMNS.join(","))?;
    let cols: [&[f64]; 14] = [
        &trace.t,
        &trace.q,
        &trace.q_dot,
        &trace.theta,
        &trace.theta_dot,
        &trace.tau_m,
        &trace.tau_s,
        &trace.reference,
        &trace.sigma,
        &trace.d2_true,
        &trace.d2_hat,
        &trace.d4_true,
        &trace.d4_hat,
        &trace.tau_env,
    ];
    let mut line = String::with_capacity(14 * 16);
    for i in 0..trace.len() {
        line.clear();
        for (j, c) in cols.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format_value(c[i]));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

pub fn trace_to_string(trace: &Trace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Reads back a file produced by [`write_trace`]: header plus rows.
pub fn read_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or("empty input")?.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let row = l
            .split(',')
            .map(|f| f.parse::<f64>().map_err(|e| format!("row {}: {f}: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != header.len() {
            return Err(format!("row {}: {} fields, expected {}", i + 1, row.len(), header.len()));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;
    use crate::sim::run_scenario;
    use proptest::prelude::*;

    fn well_formed(s: &str) -> bool {
        let (mant, exp) = match s.split_once('e') {
            Some(p) => p,
            None => return false,
        };
        let mant = mant.strip_prefix('-').unwrap_or(mant);
        let exp = exp.strip_prefix('-').unwrap_or(exp);
        let b = mant.as_bytes();
        b.len() == 10
            && b[0].is_ascii_digit()
            && b[1] == b'.'
            && b[2..].iter().all(u8::is_ascii_digit)
            && !exp.is_empty()
            && exp.bytes().all(|c| c.is_ascii_digit())
    }

    #[test]
    fn format_examples() {
        assert_eq!(format_value(0.0), "0.00000000e0");
        assert_eq!(format_value(1.0), "1.00000000e0");
        assert_eq!(format_value(-0.1592), "-1.59200000e-1");
        assert_eq!(format_value(123456789012.0), "1.23456789e11");
    }

    #[test]
    fn trace_layout() {
        let mut sc = Scenario::position_default("csv");
        sc.sim.duration = 0.01;
        let tr = run_scenario(&sc).unwrap();
        let text = trace_to_string(&tr);
        assert!(text.starts_with("t,q,qd,theta,thetad,tau_m,tau_s,ref,sigma,d2_true,d2_hat,d4_true,d4_hat,tau_env\n"));
        let (header, rows) = read_table(&text).unwrap();
        assert_eq!(header, COLUMNS);
        assert_eq!(rows.len(), tr.len());
        for l in text.lines().skip(1) {
            assert!(l.split(',').all(well_formed), "{l}");
        }
        for (i, r) in rows.iter().enumerate() {
            assert!((r[0] - tr.t[i]).abs() <= 1e-8 * tr.t[i].abs());
            assert!((r[7] - tr.reference[i]).abs() <= 1e-8 * tr.reference[i].abs());
        }
    }

    proptest! {
        #[test]
        fn nine_significant_digits(x in prop::num::f64::NORMAL) {
            let s = format_value(x);
            prop_assert!(well_formed(&s), "{}", s);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - x).abs() <= 6e-9 * x.abs());
        }
    }
}
