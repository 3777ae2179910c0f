//! Temperature, top-k and top-p filtering, then sampling from a small model.

use rsdpo::toylm::{filter_logits, sample_k_responses, GenerationConfig, Prompt, ToyLMParams, Vocab};
use rsdpo::RngStream;

fn main() -> anyhow::Result<()> {
    let logits = [2.0, 1.0, 0.5, 0.0, -1.0];
    for (t, k, p) in [(1.0, 5, 1.0), (0.5, 5, 1.0), (1.0, 2, 1.0), (1.0, 5, 0.8)] {
        let probs = filter_logits(&logits, t, k, p)?;
        let shown: Vec<String> = probs.iter().map(|x| format!("{x:.3}")).collect();
        println!("T={t} top_k={k} top_p={p}: [{}]", shown.join(", "));
    }

    let vocab = Vocab::new(10)?;
    let model = ToyLMParams::random(vocab, 2, 1.5, &mut RngStream::new(0, "decoding-model", 0).rng())?;
    let prompt = Prompt::from_content(&[4, 5, 6], &vocab)?;
    let gen = GenerationConfig {
        k: 4,
        max_new_tokens: 8,
        ..GenerationConfig::default()
    };
    for r in sample_k_responses(&model, &prompt, &gen, &RngStream::new(0, "decoding", 0))? {
        println!("{:?}", r.tokens());
    }
    Ok(())
}
