//! Exact top-k retrieval over random unit vectors, with MRR and recall@k
//! for noisy copies of known rows.

use binsca::embed::Embedding;
use binsca::retrieval::{compute_mrr, compute_recall_at_k, VectorCorpus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 64;
    let random_vec = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let rows: Vec<(String, Embedding)> = (0..1000)
        .map(|i| (format!("fn{i:04}"), Embedding::from_vec(random_vec(&mut rng))))
        .collect();
    let corpus = VectorCorpus::build(rows.clone())?;

    let mut queries = Vec::new();
    let mut truth = Vec::new();
    for i in (0..1000).step_by(10) {
        let noise = random_vec(&mut rng);
        let v: Vec<f64> = rows[i].1.as_slice().iter().zip(&noise).map(|(a, n)| a + 0.45 * n).collect();
        queries.push(Embedding::from_vec(v));
        truth.push(rows[i].0.clone());
    }
    let hits = corpus.query_batch(&queries, 10)?;
    let ranked: Vec<Vec<String>> = hits.iter().map(|h| h.iter().map(|x| x.func_id.clone()).collect()).collect();

    println!("first query top-3:");
    for h in hits[0].iter().take(3) {
        println!("  {} {:.4}", h.func_id, h.similarity);
    }
    println!("MRR {:.4}", compute_mrr(&ranked, &truth)?);
    for k in [1, 5, 10] {
        let r = compute_recall_at_k(&ranked, &truth, k)?;
        println!("recall@{k} {:.3} ({} of {})", r.recall, r.count, truth.len());
    }
    Ok(())
}
