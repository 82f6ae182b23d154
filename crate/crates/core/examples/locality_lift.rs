//! Raw retrieval against locality matching when every body lives in five
//! version directories and some functions also have near-duplicate
//! variants elsewhere.

use binsca::eval::run_simulation;
use binsca::locality::DEFAULT_MIN_SIMILARITY;
use binsca::scan::ScanOptions;
use binsca::simulate::SimConfig;

fn main() -> anyhow::Result<()> {
    println!("seed  recall@1  recall@10  final   intervals");
    for seed in 0..5 {
        let config = SimConfig {
            seed,
            clone_fanout: 5,
            mutation_rate: 0.05,
            variant_rate: 0.5,
            ..Default::default()
        };
        let run = run_simulation(&config, 256, &ScanOptions { k: 10, min_similarity: DEFAULT_MIN_SIMILARITY, ..Default::default() })?;
        let m = &run.matching;
        println!(
            "{seed:>4}  {:>8.3}  {:>9.3}  {:>5.3}   {}",
            m.retrieval.recall_at_1,
            m.retrieval.recall_at_k,
            m.recall_exact,
            run.scan.matches.intervals.len()
        );
    }
    Ok(())
}
