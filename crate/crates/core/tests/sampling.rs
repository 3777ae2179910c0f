//! Frequency checks against exact sampling laws. Bounds are 3 standard
//! errors, or a chi-square critical value at the 0.999 level.

mod common;

use common::{random_candidates, rng};
use rsdpo::pdgrs::{select_best_vs_random, subsample};
use rsdpo::reward::PreferenceDataset;
use rsdpo::synth::{gen_preference_dataset, gen_sft_dataset, AnnotatorConfig, TaskSpec};
use rsdpo::toylm::vocab::EOS;
use rsdpo::toylm::{sample_k_responses, GenerationConfig, RngStream, ToyLMParams, Vocab};

const DRAWS: usize = 10_000;

fn within_3se(observed: usize, n: usize, p: f64) -> bool {
    let se = (p * (1.0 - p) / n as f64).sqrt();
    (observed as f64 / n as f64 - p).abs() <= 3.0 * se
}

/// Chi-square upper 0.999 quantile, Wilson-Hilferty approximation.
fn chi2_critical(df: usize) -> f64 {
    let d = df as f64;
    let z = 3.090_232;
    d * (1.0 - 2.0 / (9.0 * d) + z * (2.0 / (9.0 * d)).sqrt()).powi(3)
}

fn chi2(counts: &[usize], expected: f64) -> f64 {
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn best_vs_random_loser_is_uniform_over_the_rest() {
    let v = Vocab::new(40).unwrap();
    let mut r = rng("bvr", 0);
    // Distinct responses so every draw yields a triple.
    let c = loop {
        let c = random_candidates(&v, 8, &mut r);
        let distinct = (0..c.k()).all(|i| (0..i).all(|j| c.scored[i].response != c.scored[j].response));
        let best = c.best_index();
        if distinct && c.scored.iter().filter(|s| s.reward == c.scored[best].reward).count() == 1 {
            break c;
        }
    };
    let best = c.best_index();
    let mut counts = vec![0usize; c.k()];
    let stream = RngStream::new(1, "bvr", 0);
    for i in 0..DRAWS {
        let t = select_best_vs_random(&c, &stream.child(i as u64)).unwrap();
        assert_eq!(t.chosen, c.scored[best].response);
        let l = c.scored.iter().position(|s| s.response == t.rejected).unwrap();
        counts[l] += 1;
    }
    assert_eq!(counts[best], 0);
    let p = 1.0 / (c.k() - 1) as f64;
    for (i, &n) in counts.iter().enumerate() {
        if i != best {
            assert!(within_3se(n, DRAWS, p), "index {i}: {n} of {DRAWS}");
        }
    }
    let others: Vec<usize> = counts.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, &n)| n).collect();
    assert!(chi2(&others, DRAWS as f64 * p) < chi2_critical(others.len() - 1));
}

#[test]
fn subsample_includes_every_triple_equally_often() {
    let v = Vocab::new(12).unwrap();
    let task = TaskSpec::random(v, (3, 3), 0.5, &RngStream::new(0, "task", 0)).unwrap();
    let data: PreferenceDataset =
        gen_preference_dataset(&task, 20, &AnnotatorConfig::default(), &RngStream::new(0, "pool", 0)).unwrap();
    let n = 5;
    let mut counts = vec![0usize; data.len()];
    let stream = RngStream::new(2, "subsample", 0);
    for i in 0..DRAWS {
        let s = subsample(&data, n, &stream.child(i as u64)).unwrap();
        assert_eq!(s.len(), n);
        let mut last = None;
        for t in s.triples() {
            let idx = data.triples().iter().position(|u| u == t).unwrap();
            assert!(last.is_none_or(|l| idx > l), "subsample keeps dataset order without repeats");
            last = Some(idx);
            counts[idx] += 1;
        }
    }
    let expected = (DRAWS * n) as f64 / data.len() as f64;
    assert!(chi2(&counts, expected) < chi2_critical(data.len() - 1), "{counts:?}");
}

#[test]
fn corruption_and_flip_rates_match_their_settings() {
    let v = Vocab::new(16).unwrap();
    let task = TaskSpec::random(v, (6, 6), 0.5, &RngStream::new(0, "task", 0)).unwrap();
    let annot = AnnotatorConfig {
        flip_prob: 0.2,
        corruption_rate: 0.3,
    };

    let sft = gen_sft_dataset(&task, 2000, &annot, &RngStream::new(0, "sft", 0)).unwrap();
    let (mut changed, mut total) = (0, 0);
    for rec in sft.records() {
        let ideal = task.ideal_response(&rec.prompt);
        assert_eq!(rec.response.len(), ideal.len());
        for (a, b) in rec.response.content().iter().zip(ideal.content()) {
            changed += usize::from(a != b);
            total += 1;
        }
    }
    assert!(within_3se(changed, total, annot.corruption_rate), "{changed} of {total}");

    // A flip is visible whenever the oracle strictly separates the pair.
    let pool = gen_preference_dataset(&task, 4000, &annot, &RngStream::new(0, "pool", 0)).unwrap();
    let (mut flipped, mut decided) = (0, 0);
    for t in pool.triples() {
        let w = task.oracle_reward(&t.prompt, &t.chosen).unwrap();
        let l = task.oracle_reward(&t.prompt, &t.rejected).unwrap();
        if w != l {
            decided += 1;
            flipped += usize::from(w < l);
        }
    }
    assert!(decided > 3000);
    assert!(within_3se(flipped, decided, annot.flip_prob), "{flipped} of {decided}");
}

#[test]
fn full_scale_decoding_handles_long_prompts() {
    let v = Vocab::new(32).unwrap();
    let mut r = rng("full-scale", 0);
    let gen = GenerationConfig::full_scale();
    assert_eq!(gen.k, 16);
    for len in [1, 16, 64] {
        let prompt = common::random_prompt(&v, (len, len), &mut r);
        for model in [
            ToyLMParams::zeros(v, 4).unwrap(),
            ToyLMParams::random(v, 4, 2.0, &mut r).unwrap(),
        ] {
            let ys = sample_k_responses(&model, &prompt, &gen, &RngStream::new(len as u64, "full", 0)).unwrap();
            assert_eq!(ys.len(), 16);
            for y in &ys {
                assert!(y.len() <= gen.max_new_tokens);
                assert!(y.validate(&v).is_ok());
                assert!(y.tokens().last() == Some(&EOS) || y.len() == gen.max_new_tokens);
            }
        }
    }
}
