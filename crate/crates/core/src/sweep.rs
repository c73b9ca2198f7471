//! Ablation sweeps: the full configuration plus one variant per switched-off axis.

use std::path::Path;

use crate::backtest::{run, Agents, BacktestError, BacktestResult, DataBundle};
use crate::bundle::{write_bundle, BundleError};
use crate::config::{Axis, RunConfig};
use crate::perception::Lexicon;
use crate::report::{render, ReportFormat, ReportRow};

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: RunConfig,
}

/// Single-axis-off variants in canonical axis order, then the full config.
/// Duplicate axes collapse.
pub fn variants(base: &RunConfig, axes: &[Axis]) -> Vec<Variant> {
    let mut out: Vec<Variant> = Axis::ALL
        .into_iter()
        .filter(|a| axes.contains(a))
        .map(|a| {
            let mut config = base.clone();
            config.ablation = base.ablation.without(a);
            Variant {
                name: format!("{}_off", a.as_str()),
                config,
            }
        })
        .collect();
    out.push(Variant {
        name: "full".into(),
        config: base.clone(),
    });
    out
}

pub fn parse_axes(spec: &str) -> Result<Vec<Axis>, String> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Axis::ALL.to_vec());
    }
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Axis::parse(s).ok_or_else(|| format!("unknown ablation axis `{}`; expected rs, fip, mn or mtr", s.trim())))
        .collect()
}

/// Runs every variant on its own thread. Results come back in variant order.
pub fn ablate<F>(
    variants: &[Variant],
    data: &DataBundle,
    make_agents: F,
) -> Vec<Result<BacktestResult, BacktestError>>
where
    F: Fn(&RunConfig, &Lexicon) -> Result<Agents, BacktestError> + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = variants
            .iter()
            .map(|v| {
                let make_agents = &make_agents;
                scope.spawn(move || {
                    let mut agents = make_agents(&v.config, &data.lexicon)?;
                    run(&v.config, data, &mut agents, None)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("backtest thread panicked"))
            .collect()
    })
}

pub fn ablate_stub(variants: &[Variant], data: &DataBundle) -> Vec<Result<BacktestResult, BacktestError>> {
    ablate(variants, data, Agents::stub)
}

pub fn report_rows(variants: &[Variant], results: &[BacktestResult]) -> Vec<ReportRow> {
    variants
        .iter()
        .zip(results)
        .map(|(v, r)| ReportRow::new(v.name.clone(), &r.summary))
        .collect()
}

/// Writes one bundle per variant under `out` and the table as `report.<ext>`.
/// Returns the rendered table.
pub fn write_sweep(
    out: &Path,
    variants: &[Variant],
    results: &[BacktestResult],
    format: ReportFormat,
) -> Result<String, BundleError> {
    for (v, r) in variants.iter().zip(results) {
        write_bundle(&out.join(&v.name), r, &v.config)?;
    }
    let table = render(&report_rows(variants, results), format);
    let path = out.join(format!("report.{}", format.extension()));
    std::fs::write(&path, &table).map_err(|source| BundleError::Io { path, source })?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunSection;

    #[test]
    fn variant_rows_follow_axis_order() {
        let base = RunConfig::new(RunSection::new("X"));
        let names: Vec<String> = variants(&base, &Axis::ALL).into_iter().map(|v| v.name).collect();
        assert_eq!(names, ["rs_off", "fip_off", "mn_off", "mtr_off", "full"]);
        let v = variants(&base, &[Axis::Mtr, Axis::Mtr]);
        assert_eq!(v.len(), 2);
        assert!(!v[0].config.ablation.mtr && v[0].config.ablation.rs);
        assert_eq!(v[1].config, base);
    }

    #[test]
    fn axis_lists() {
        assert_eq!(parse_axes("all").unwrap().len(), 4);
        assert_eq!(parse_axes("mtr, rs").unwrap(), vec![Axis::Mtr, Axis::Rs]);
        assert!(parse_axes("rs,xyz").is_err());
    }
}
