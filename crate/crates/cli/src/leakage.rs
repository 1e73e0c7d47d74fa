//! Posterior leakage report for one parameter choice.

use std::io::Write;

use rrstream_core::rr::{leakage, LeakageReport, RrError};
use rrstream_core::PrivacyParams;

pub fn run_leakage_report(p: f64, q: f64, pi_a: f64) -> Result<LeakageReport, RrError> {
    leakage(&PrivacyParams::new(p, q)?, pi_a)
}

fn fixed6(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x:.6}")
    }
}

/// Human-readable table, values rounded to six decimals.
pub fn render_table(p: f64, q: f64, report: &LeakageReport) -> String {
    let rows = [
        ("P(A|Yes)", fixed6(report.p_a_given_yes)),
        ("P(not A|Yes)", fixed6(report.p_not_a_given_yes)),
        ("epsilon", fixed6(report.epsilon)),
    ];
    let mut out = format!("p = {p}, q = {q}, pi_A = {}\n", report.pi_a);
    out.push_str(&format!("{:<14} {:>10}\n", "quantity", "value"));
    for (name, value) in rows {
        out.push_str(&format!("{name:<14} {value:>10}\n"));
    }
    out
}

pub fn write_csv<W: Write>(p: f64, q: f64, report: &LeakageReport, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "p",
        "q",
        "pi_a",
        "p_yes",
        "p_a_given_yes",
        "p_not_a_given_yes",
        "epsilon",
    ])?;
    w.write_record([
        p.to_string(),
        q.to_string(),
        report.pi_a.to_string(),
        format!("{:.9}", report.p_yes),
        format!("{:.9}", report.p_a_given_yes),
        format!("{:.9}", report.p_not_a_given_yes),
        if report.epsilon.is_infinite() {
            "inf".into()
        } else {
            format!("{:.9}", report.epsilon)
        },
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_six_decimals() {
        let r = run_leakage_report(0.995, 0.999, 0.005).unwrap();
        let t = render_table(0.995, 0.999, &r);
        assert!(t.contains("0.501502"));
        assert!(t.contains("0.498498"));
        assert!(t.contains("5.299313"));
    }

    #[test]
    fn no_deniability_prints_inf() {
        let r = run_leakage_report(1.0, 0.5, 0.3).unwrap();
        assert!(render_table(1.0, 0.5, &r).contains("inf"));
        let mut buf = Vec::new();
        write_csv(1.0, 0.5, &r, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with(",inf\n"));
    }
}
