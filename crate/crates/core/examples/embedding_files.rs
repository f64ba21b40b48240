//! Writes a bank in both file formats, reads it back and checks the bits.

use tim::tasks::{generate_synthetic_bank, read_bank, write_bank, SyntheticConfig};

fn main() -> tim::Result<()> {
    let bank = generate_synthetic_bank(&"typical,pool=8,per_class=50".parse::<SyntheticConfig>()?)?;
    let dir = std::env::temp_dir().join("tim-embedding-files");
    std::fs::create_dir_all(&dir)?;
    for name in ["bank.timb", "bank.csv"] {
        let path = dir.join(name);
        write_bank(&bank, &path)?;
        let back = read_bank(&path)?;
        let same = back.labels() == bank.labels()
            && back
                .features()
                .iter()
                .zip(bank.features())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        println!(
            "{}: {} rows, {} bytes, bit-exact {same}",
            path.display(),
            back.len(),
            std::fs::metadata(&path)?.len()
        );
    }
    Ok(())
}
