//! Regenerates `src/eval/wada_table.txt`.
//!
//! Usage: `cargo run --release --example build_wada_table [SAMPLES] [SEED] > src/eval/wada_table.txt`

use voicegan::eval::WadaTable;

fn main() {
    let mut args = std::env::args().skip(1);
    let samples = args
        .next()
        .map_or(4_000_000, |s| s.parse().expect("SAMPLES is an integer"));
    let seed = args.next().map_or(0, |s| s.parse().expect("SEED is an integer"));
    let table = WadaTable::build(samples, seed);
    if !table.is_monotone() {
        eprintln!("warning: table is not monotone; raise SAMPLES");
    }
    print!("{}", table.to_text());
}
