//! `cost`: the analytic on-device workload table. Pure computation:
//! parameter counts, retained activations, train-step MACs, and
//! projected fine-tuning wall time per target SoC.

use crate::config::{descriptor_by_name, Ctx};
use crate::fail::{CliError, CliResult};
use crate::table;
use fieldtune_core::cost::{cost_table, SocProfile};
use fieldtune_core::nn::UpdateStrategy;

pub const CSV_NAME: &str = "cost.csv";
pub const TEXT_NAME: &str = "cost.txt";

pub fn run(ctx: &Ctx) -> CliResult<Vec<String>> {
    let section = ctx.cost();
    let arch = descriptor_by_name(&section.arch)?;
    if section.set_sizes.is_empty() || section.epochs == 0 {
        return Err(CliError::config("cost.set_sizes and cost.epochs must be positive"));
    }
    let profiles: Vec<SocProfile> = section
        .socs
        .iter()
        .map(|name| soc_by_name(name))
        .collect::<CliResult<_>>()?;
    let strategies = UpdateStrategy::presets();
    let reports = cost_table(&arch, &strategies, &profiles, &section.set_sizes, section.epochs)
        .map_err(CliError::config)?;

    let mut header: Vec<String> = [
        "method", "set_size", "updated_params", "updated_share_pct", "activation_kb",
        "train_step_mmac",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for profile in &profiles {
        header.push(format!("{}_s", profile.name));
        header.push(format!("{}_time", profile.name));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

    let mut rows = Vec::new();
    for report in &reports {
        for &set_size in &section.set_sizes {
            let mut row = vec![
                report.strategy.clone(),
                set_size.to_string(),
                report.updated_params.to_string(),
                table::fixed(report.updated_share * 100.0, 2),
                table::fixed(report.activation_kb_on_target, 2),
                table::fixed(report.train_step_macs as f64 / 1e6, 2),
            ];
            for profile in &profiles {
                let seconds = report
                    .times
                    .iter()
                    .find(|(name, size, _)| *name == profile.name && *size == set_size)
                    .map(|(_, _, s)| *s)
                    .unwrap_or(f64::NAN);
                row.push(table::fixed(seconds, 1));
                row.push(mmss(seconds));
            }
            rows.push(row);
        }
    }

    let csv_path = ctx.out.join(CSV_NAME);
    table::write_csv(&csv_path, &header_refs, &rows)?;
    let text = table::aligned_text(&header_refs, &rows);
    let text_path = ctx.out.join(TEXT_NAME);
    std::fs::write(&text_path, &text)
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", text_path.display())))?;

    print!("{text}");
    println!(
        "cost: {} arch, {} epochs, wrote {}",
        section.arch,
        section.epochs,
        csv_path.display()
    );
    Ok(vec![CSV_NAME.to_string(), TEXT_NAME.to_string()])
}

fn soc_by_name(name: &str) -> CliResult<SocProfile> {
    match name {
        "gap9" => Ok(SocProfile::gap9()),
        "gap8" => Ok(SocProfile::gap8()),
        other => Err(CliError::config(format!(
            "unknown soc {other:?}; expected \"gap9\" or \"gap8\""
        ))),
    }
}

/// Minutes:seconds rendering used by the text table, e.g. 123 s ->
/// "2:03".
fn mmss(seconds: f64) -> String {
    if !seconds.is_finite() {
        return String::new();
    }
    let total = seconds.round() as i64;
    format!("{}:{:02}", total / 60, total % 60)
}
