//! Trains on the bundled synthetic corpus with memory reads on and off and
//! prints the final train loss and strict F1 of each run.
//!
//! ```text
//! cargo run --release -p memrex --example tiny -- '{"train.epochs": 200}' [seeds]
//! ```

use std::time::Instant;

use memrex::config::RunConfig;
use memrex::corpus::parse_docred;
use memrex::encoder::TokenVocab;
use memrex::training::train;

fn main() -> memrex::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let overrides = args.first().map_or("{}", String::as_str);
    let seeds: u64 = args.get(1).map_or(5, |s| s.parse().expect("seed count"));
    let base = RunConfig::from_flat_json(overrides)?;

    let (docs, types) = parse_docred(memrex::TINY_CORPUS, None)?;
    let tokens = TokenVocab::build(&docs, base.encoder.vocab_size);
    let mut wins = 0;
    for seed in 0..seeds {
        let mut losses = [0.0; 2];
        for (arm, reads) in [true, false].into_iter().enumerate() {
            let mut cfg = base.clone();
            cfg.train.seed = seed;
            cfg.memory.set_all_reads(reads);
            let model = cfg.build_model(types.clone(), tokens.clone())?;
            let t = Instant::now();
            let out = train(&model, &docs, &[], &cfg.train, &cfg.eval, &mut ())?;
            let last = out.log.last().expect("at least one epoch");
            losses[arm] = last.loss.joint;
            println!(
                "seed {seed} reads {:<5} loss {:.5} final f1 {:.3} best f1 {:.3} @ {:>3}  {:.1}s",
                reads,
                last.loss.joint,
                last.selection.f1,
                out.best_score,
                out.best_epoch,
                t.elapsed().as_secs_f64()
            );
        }
        if losses[0] <= losses[1] {
            wins += 1;
        }
    }
    println!("reads-enabled loss <= ablation on {wins}/{seeds} seeds");
    Ok(())
}
