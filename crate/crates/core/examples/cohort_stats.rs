use cbfl::datagen::{generate_cohort, GeneratorConfig};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let t = std::time::Instant::now();
    let ds = generate_cohort(&GeneratorConfig { seed, ..GeneratorConfig::default() }).unwrap();
    println!("generated in {:.2?}", t.elapsed());
    print!("{}", ds.summary());
}
