//! Runs every arm on one generated cohort and prints metrics and rounds.
//!
//! cargo run --release --example arms -- <seed> [k ...]

use std::time::Instant;

use cbfl::datagen::{generate_cohort_with_structure, split_within_hospital, GeneratorConfig, Task};
use cbfl::federation::{
    model_specs, run_cbfl_with_encoder, run_centralized, run_fedavg, train_encoder_federated, ClientState, EvalSet,
    FederationConfig,
};

fn main() {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let seed = args.first().copied().unwrap_or(0);
    let ks: Vec<usize> = if args.len() > 1 { args[1..].iter().map(|&k| k as usize).collect() } else { vec![5, 15, 50] };
    let (ds, truth) = generate_cohort_with_structure(&GeneratorConfig { seed, ..GeneratorConfig::default() }).unwrap();
    let (train, test) = split_within_hospital(&ds, 400, 160, seed).unwrap();
    let clients = ClientState::<f64>::from_cohort(&train, Task::Mortality).unwrap();
    let eval = EvalSet::from_cohort(&test, Task::Mortality).unwrap();
    let specs = model_specs(ds.n_features);
    let cfg = FederationConfig { seed, ..FederationConfig::default() };

    let t = Instant::now();
    let c = run_centralized(&clients, &specs, &eval, &cfg).unwrap();
    println!("centralized auc {:.4} best {} ({:.1?})", c.history[c.best_epoch - 1], c.best_epoch, t.elapsed());
    let t = Instant::now();
    let f = run_fedavg(&clients, &specs, &eval, &cfg).unwrap();
    println!("fedavg      auc {:.4} best {} ({:.1?})", f.history[f.best_round - 1], f.best_round, t.elapsed());
    let t = Instant::now();
    let enc = train_encoder_federated(&clients, &cfg).unwrap();
    println!("encoder ({:.1?})", t.elapsed());
    for k in ks {
        let t = Instant::now();
        let r = run_cbfl_with_encoder(&clients, enc.clone(), &specs, &eval, &FederationConfig { k, ..cfg }).unwrap();
        let sizes: Vec<usize> = (0..k).map(|j| r.cluster.counts.iter().map(|m| m[j]).sum()).collect();
        println!(
            "cbfl k={k:<3} auc {:.4} best {} ({:.1?}) sizes {:?}",
            r.history[r.best_round - 1],
            r.best_round,
            t.elapsed(),
            &sizes[..sizes.len().min(15)]
        );
        if k <= 15 {
            let mut table = vec![vec![0usize; k]; 5];
            for (ci, &h) in r.cluster.client_ids.iter().enumerate() {
                let g = truth.hospital_group[&(h as u32)];
                for j in 0..k {
                    table[g][j] += r.cluster.counts[ci][j];
                }
            }
            for row in table {
                println!("  group {row:?}");
            }
        }
    }
}
