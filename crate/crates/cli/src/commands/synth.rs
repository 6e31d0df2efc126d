//! `synth`: generate labeled flight sequences for the configured
//! domains and subjects.

use crate::config::{domain_by_name, Ctx};
use crate::fail::{CliError, CliResult};
use crate::runs::name_tag;
use crate::table;
use fieldtune_core::data::{save_sequence, synth_sequence};
use fieldtune_core::train::mix_seed;

pub fn run(ctx: &Ctx) -> CliResult<Vec<String>> {
    let section = ctx.synth();
    section.validate()?;
    let mut rows = Vec::new();
    for domain in &section.domains {
        let spec = domain_by_name(domain)?;
        for subject in &section.subjects {
            let seed = mix_seed(ctx.seed, name_tag(&format!("{domain}/{subject}")));
            let records = synth_sequence(&spec, subject, section.frames, seed)
                .map_err(CliError::run)?;
            let rel = format!("data/{domain}/{subject}");
            let dir = ctx.out.join(&rel);
            save_sequence(&dir, &records)
                .map_err(|e| CliError::run(format!("cannot write sequence: {e}")))?;
            rows.push(vec![
                domain.clone(),
                subject.clone(),
                section.frames.to_string(),
                seed.to_string(),
                rel,
            ]);
        }
    }
    let csv = ctx.out.join("synth.csv");
    table::write_csv(&csv, &["domain", "subject", "frames", "seed", "path"], &rows)?;
    println!(
        "synth: {} sequences of {} frames under {}",
        rows.len(),
        section.frames,
        ctx.out.join("data").display()
    );
    Ok(vec!["synth.csv".to_string()])
}
