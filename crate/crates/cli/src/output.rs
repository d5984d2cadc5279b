//! Deterministic density rendering for stdout.

use naive_core::density::Density;

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Format {
    Csv,
    Json,
}

/// One-line summary: moments and quantiles for cardinal densities, the pmf
/// for discrete ones.
pub(crate) fn summary_line(d: &Density<f64>) -> String {
    if d.is_discrete() {
        return pmf_line(d);
    }
    let (mean, var) = d.moments().expect("cardinal density");
    let q = |p: f64| d.quantile(p).expect("probability in range");
    format!(
        "mean={:.6} var={:.6} q05={:.6} q50={:.6} q95={:.6}",
        mean,
        var,
        q(0.05),
        q(0.5),
        q(0.95)
    )
}

pub(crate) fn pmf_line(d: &Density<f64>) -> String {
    d.pmf_pairs()
        .iter()
        .map(|(label, p)| format!("P({label})={:.6}", p))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders one density: the summary line by default, or a full CSV/JSON
/// export. `resolution` controls the CSV sample count; `prefix` labels
/// series points.
pub(crate) fn print_density(
    d: &Density<f64>,
    format: Option<Format>,
    prefix: Option<&str>,
    resolution: usize,
) {
    match format {
        None => match prefix {
            Some(p) => println!("{p} {}", summary_line(d)),
            None => println!("{}", summary_line(d)),
        },
        Some(Format::Json) => {
            let line = d.to_json().to_string();
            match prefix {
                Some(p) => println!("{p} {line}"),
                None => println!("{line}"),
            }
        }
        Some(Format::Csv) => {
            if let Some(p) = prefix {
                println!("# t={p}");
            }
            print!("{}", d.to_csv(resolution));
        }
    }
}
