//! Gnuplot scripts for the CSV outputs. Scripts reference the data files by
//! path and write a PNG next to them.

use std::io::Write;

use crate::dos::DensityOfStates;
use crate::rs::{entropy_at_lambda, RsPoint};
use crate::Result;

fn preamble(title: &str, png: &str, xlabel: &str, ylabel: &str) -> String {
    format!(
        "set terminal pngcairo size 900,600\n\
         set output '{png}'\n\
         set datafile separator ','\n\
         set datafile commentschars '#'\n\
         set key top right\n\
         set grid\n\
         set title '{title}'\n\
         set xlabel '{xlabel}'\n\
         set ylabel '{ylabel}'\n"
    )
}

/// `Sigma` against `lambda` from an entropy-curve CSV (columns `lambda`, `sigma`).
pub fn entropy_curve_script(csv: &str, png: &str, title: &str) -> String {
    let mut s = preamble(title, png, "lambda", "Sigma(lambda)");
    s.push_str("set xzeroaxis lt -1\n");
    s.push_str(&format!(
        "plot '{csv}' using 9:10 skip 1 with linespoints pt 7 ps 0.5 title 'RS entropy'\n"
    ));
    s
}

/// `delta_min`, `delta_max` and `delta_sym` against `rho` from a RIC table.
pub fn ric_script(csv: &str, png: &str, title: &str) -> String {
    let mut s = preamble(title, png, "rho", "RIC");
    s.push_str(&format!(
        "plot '{csv}' using 2:5 skip 1 with linespoints title 'delta_min', \\\n\
         \x20    '' using 2:6 skip 1 with linespoints title 'delta_max', \\\n\
         \x20    '' using 2:7 skip 1 with linespoints title 'delta_sym'\n"
    ));
    s
}

/// Recovery boundaries `rho*(alpha)` from a phase-diagram CSV.
pub fn phase_script(csv: &str, png: &str, title: &str) -> String {
    let mut s = preamble(title, png, "alpha", "rho*");
    s.push_str("set key top left\n");
    s.push_str(&format!(
        "plot '{csv}' using 1:2 skip 1 with linespoints title 'l0', \\\n\
         \x20    '' using 1:3 skip 1 with linespoints title 'l1 (symmetric)', \\\n\
         \x20    '' using 1:4 skip 1 with linespoints title 'l1 (asymmetric)'\n"
    ));
    s
}

/// Joined comparison table: `lambda,sigma_emc,sigma_rs,samples` on the DOS
/// bins, with `nan` where the RS curve has no support.
pub fn write_comparison_csv<W: Write>(
    mut w: W,
    comments: &[String],
    dos: &DensityOfStates,
    rs: &[RsPoint],
    plateau: f64,
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "lambda,sigma_emc,sigma_rs,samples")?;
    let sigma = dos.entropy();
    for (b, l) in dos.grid.centers().iter().enumerate() {
        if dos.samples[b] == 0 {
            continue;
        }
        let rs = entropy_at_lambda(rs, plateau, *l).unwrap_or(f64::NAN);
        writeln!(w, "{l:e},{:e},{rs:e},{}", sigma[b], dos.samples[b])?;
    }
    Ok(())
}

/// RS curve, EMC/WHAM points and vertical lines at the spectrum edges.
pub fn comparison_script(rs_csv: &str, joined_csv: &str, png: &str, edges: (f64, f64), title: &str) -> String {
    let mut s = preamble(title, png, "lambda", "Sigma(lambda)");
    s.push_str("set xzeroaxis lt -1\n");
    for e in [edges.0, edges.1] {
        s.push_str(&format!(
            "set arrow from {e},graph 0 to {e},graph 1 nohead dt 2 lc rgb 'gray40'\n"
        ));
    }
    s.push_str(&format!(
        "plot '{rs_csv}' using 9:10 skip 1 with lines lw 2 title 'RS', \\\n\
         \x20    '{joined_csv}' using 1:2 skip 1 with points pt 7 ps 0.6 title 'EMC/WHAM'\n"
    ));
    s
}
