//! Synthetic inputs shared by the criterion benches.

/// Deterministic label sequences over `k` categories with a tunable agreement rate.
pub fn label_pair(n: usize, k: usize, agree_every: usize) -> (Vec<String>, Vec<String>) {
    let a: Vec<String> = (0..n).map(|i| format!("c{}", (i * 7 + i / 3) % k)).collect();
    let b: Vec<String> = a
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if agree_every > 0 && i % agree_every == 0 {
                format!("c{}", (i + 1) % k)
            } else {
                l.clone()
            }
        })
        .collect();
    (a, b)
}

/// `n` short pseudo-sentences drawn from a fixed vocabulary.
pub fn outputs(n: usize) -> Vec<String> {
    const WORDS: [&str; 16] = [
        "model", "training", "loss", "refactor", "cache", "energy", "batch", "gpu", "fix", "loader",
        "inference", "quantize", "prune", "schedule", "memory", "config",
    ];
    (0..n)
        .map(|i| {
            (0..12)
                .map(|j| WORDS[(i * 31 + j * 7 + (i * j) % 5) % WORDS.len()])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}
