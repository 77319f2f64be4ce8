//! Tidy CSVs for the convergence plots.

use std::path::{Path, PathBuf};

use mfergodic::Estimate;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PlotData {
    /// `(β, β v̂^β)`; written with `β` decreasing.
    Tauberian(Vec<(f64, Estimate)>),
    /// `(T, v̂^T / T)`; written with `T` increasing.
    Cesaro(Vec<(f64, Estimate)>),
    /// Mean-square gap of a synchronous coupling; the envelope column is
    /// `gap(0) e^{-2ηt}`.
    Contraction { times: Vec<f64>, gap: Vec<f64>, eta: f64 },
}

impl PlotData {
    pub fn file_name(&self) -> &'static str {
        match self {
            PlotData::Tauberian(_) => "tauberian.csv",
            PlotData::Cesaro(_) => "cesaro.csv",
            PlotData::Contraction { .. } => "contraction.csv",
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let rows = |header: &str, mut r: Vec<(f64, Estimate)>, decreasing: bool| {
            r.sort_by(|a, b| if decreasing { b.0.total_cmp(&a.0) } else { a.0.total_cmp(&b.0) });
            let mut s = format!("{header}\n");
            for (x, e) in r {
                s.push_str(&format!("{x},{},{}\n", e.value, e.stderr));
            }
            s
        };
        Ok(match self {
            PlotData::Tauberian(r) => rows("beta,beta_v_beta,stderr", r.clone(), true),
            PlotData::Cesaro(r) => rows("T,v_T_over_T,stderr", r.clone(), false),
            PlotData::Contraction { times, gap, eta } => {
                if times.len() != gap.len() {
                    return Err(CliError::config(
                        "contraction.gap",
                        format!("{} gap values for {} times", gap.len(), times.len()),
                    ));
                }
                let mut s = String::from("t,gap,envelope\n");
                if let Some(&g0) = gap.first() {
                    for (t, g) in times.iter().zip(gap) {
                        s.push_str(&format!("{t},{g},{}\n", g0 * (-2.0 * eta * t).exp()));
                    }
                }
                s
            }
        })
    }
}

/// Writes the CSV into `dir` and returns its path.
pub fn emit_plot_data(dir: &Path, data: &PlotData) -> Result<PathBuf> {
    let path = dir.join(data.file_name());
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    std::fs::write(&path, data.to_csv()?).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_results_give_header_only() {
        assert_eq!(PlotData::Tauberian(vec![]).to_csv().unwrap(), "beta,beta_v_beta,stderr\n");
        assert_eq!(PlotData::Cesaro(vec![]).to_csv().unwrap(), "T,v_T_over_T,stderr\n");
        let c = PlotData::Contraction {
            times: vec![],
            gap: vec![],
            eta: 1.0,
        };
        assert_eq!(c.to_csv().unwrap(), "t,gap,envelope\n");
    }

    #[test]
    fn tauberian_rows_decrease_in_beta() {
        let rows = [0.05, 0.4, 0.1, 0.2].iter().map(|&b| (b, Estimate::new(b, 0.0))).collect();
        let csv = PlotData::Tauberian(rows).to_csv().unwrap();
        let betas: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(betas, vec![0.4, 0.2, 0.1, 0.05]);
    }

    #[test]
    fn contraction_envelope_is_the_formula() {
        let times = vec![0.0, 0.5, 1.0];
        let c = PlotData::Contraction {
            times: times.clone(),
            gap: vec![2.0, 1.0, 0.3],
            eta: 0.75,
        };
        for (line, t) in c.to_csv().unwrap().lines().skip(1).zip(times) {
            let env: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert_eq!(env, 2.0 * (-1.5 * t).exp());
        }
    }

    #[test]
    fn mismatched_lengths_name_the_input() {
        let c = PlotData::Contraction {
            times: vec![0.0],
            gap: vec![],
            eta: 1.0,
        };
        assert!(c.to_csv().unwrap_err().to_string().contains("contraction.gap"));
    }
}
