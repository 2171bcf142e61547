//! `gen-data`: deterministic ground-truth tiles plus a hashed manifest.

use crate::config::Settings;
use crate::report;
use elder::data::{procedural_tile, sample_rng};
use elder::io::write_pgm16;
use elder::Result;

pub fn run(s: &Settings, quiet: bool) -> Result<()> {
    let n = s.image_size;
    let mut manifest = report::csv_writer(&s.out.join("manifest.csv"))?;
    report::write_row(&mut manifest, &["file", "height", "width", "fnv64"])?;
    for i in 0..s.data_count {
        let mut rng = sample_rng(s.seed, i as u64);
        let tile = procedural_tile(n, n, &mut rng);
        let name = format!("tile_{i:04}.pgm");
        let path = s.out.join(&name);
        write_pgm16(&path, &tile)?;
        let hash = report::fnv64(&std::fs::read(&path)?);
        report::write_row(
            &mut manifest,
            &[name, n.to_string(), n.to_string(), format!("{hash:016x}")],
        )?;
    }
    report::finish(manifest)?;
    if !quiet {
        println!("gen-data: {} tiles of {n}x{n} in {}", s.data_count, s.out.display());
    }
    Ok(())
}
