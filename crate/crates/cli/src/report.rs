//! Plain-text rendering for the CLI.

use std::fmt::Write as _;
use std::io::{self, Write};

use solar_uav::harness::{Scheme, SummaryRow};
use solar_uav::solar::BranchLabel;
use solar_uav::validate::ConstraintReport;
use solar_uav::{Instance, Solution};

pub fn solution_text(
    scheme: Scheme,
    instance: &Instance,
    sol: &Solution,
    checks: &ConstraintReport,
) -> String {
    let mut out = String::new();
    let n_f = instance.n_f() as f64;
    let _ = writeln!(out, "scheme        {}", scheme.as_str());
    let _ = writeln!(
        out,
        "objective     {:.6} bits/s/Hz ({:.6} per subcarrier)",
        sol.objective_original,
        sol.objective_original / n_f
    );
    let _ = writeln!(out, "relaxed       {:.6} bits/s/Hz", sol.objective_relaxed);
    let _ = writeln!(
        out,
        "uav           x = {:.3} m, y = {:.3} m, z = {:.3} m ({})",
        sol.r.x,
        sol.r.y,
        sol.r.z,
        BranchLabel::of(sol.r.z, &instance.solar).as_str()
    );
    let _ = writeln!(
        out,
        "status        {} after {} iterations",
        sol.status.as_str(),
        sol.iterations
    );
    let _ = writeln!(out, "\nsubcarrier  user  power [W]        rate [bits/s/Hz]");
    for i in 0..instance.n_f() {
        match (0..instance.k()).find(|&k| sol.s[(k, i)]) {
            Some(k) => {
                let snr = instance.effective_gain(k, i, &sol.r) * sol.p[(k, i)];
                let _ = writeln!(
                    out,
                    "{:>10}  {:>4}  {:<15.9e}  {:.6}",
                    i,
                    k,
                    sol.p[(k, i)],
                    snr.ln_1p() / std::f64::consts::LN_2
                );
            }
            None => {
                let _ = writeln!(out, "{i:>10}     -  0");
            }
        }
    }
    let _ = writeln!(out, "\nconstraints");
    let _ = write!(out, "{checks}");
    out
}

pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "scheme      p_max_dbm  s_area  users      n  failed  mean [bits/s/Hz]  stderr\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10}  {:>9.2}  {:>6.3}  {:>5}  {:>5}  {:>6}  {:>16.6}  {:.6}",
            r.scheme, r.p_max_dbm, r.s_area, r.users, r.n, r.n_failed, r.mean, r.stderr
        );
    }
    out
}

pub struct GapRow {
    pub seed: u64,
    pub sca: f64,
    pub oracle: f64,
}

impl GapRow {
    /// `(sca − oracle)/oracle`.
    pub fn gap(&self) -> f64 {
        (self.sca - self.oracle) / self.oracle
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn gap_table(rows: &[GapRow]) -> String {
    let mut out = String::from("seed      sca [bits/s/Hz]   oracle [bits/s/Hz]   gap\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<8}  {:>15.6}  {:>19.6}  {:+.4}%",
            r.seed,
            r.sca,
            r.oracle,
            100.0 * r.gap()
        );
    }
    if rows.is_empty() {
        return out;
    }
    let mut gaps: Vec<f64> = rows.iter().map(GapRow::gap).collect();
    gaps.sort_by(f64::total_cmp);
    let within = gaps.iter().filter(|g| g.abs() <= 0.02).count();
    let _ = writeln!(
        out,
        "summary: {}/{} within 2%, min {:+.4}%, p10 {:+.4}%, median {:+.4}%, max {:+.4}%",
        within,
        gaps.len(),
        100.0 * gaps[0],
        100.0 * percentile(&gaps, 0.1),
        100.0 * percentile(&gaps, 0.5),
        100.0 * gaps[gaps.len() - 1]
    );
    out
}

pub fn write_gap_csv<W: Write>(w: &mut W, rows: &[GapRow]) -> io::Result<()> {
    writeln!(w, "seed,sca,oracle,gap")?;
    for r in rows {
        writeln!(w, "{},{:.16e},{:.16e},{:.16e}", r.seed, r.sca, r.oracle, r.gap())?;
    }
    Ok(())
}
