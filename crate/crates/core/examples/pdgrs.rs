//! Candidate generation and threshold selection: how the number of accepted
//! pairs moves with the threshold and the temperature.

use rsdpo::pdgrs::{pdgrs_dataset, pdgrs_pairs, select_pairs, CandidateSet, PdgrsConfig, ScoredResponse, SelectionPolicy};
use rsdpo::pipeline::experiment::prepare;
use rsdpo::pipeline::ExperimentConfig;
use rsdpo::toylm::{Prompt, Response, Vocab};
use rsdpo::RngStream;

fn main() -> anyhow::Result<()> {
    // Three scored responses: only the (0, 2) ordering clears η = 0.85.
    let v = Vocab::new(8)?;
    let scored = [2.0, 0.5, -1.0]
        .iter()
        .zip([4, 5, 6])
        .map(|(&reward, t)| Ok(ScoredResponse { response: Response::new(vec![t, 2], &v)?, reward }))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let set = CandidateSet::new(Prompt::from_content(&[4], &v)?, scored)?;
    for t in pdgrs_pairs(&set, &PdgrsConfig::default())? {
        println!("{:?} over {:?}, gap {:.6}", t.chosen.tokens(), t.rejected.tokens(), t.gap_sigma.unwrap_or(f64::NAN));
    }

    let cfg = ExperimentConfig::default();
    let up = prepare(&cfg, 0)?;
    let cands = &up.candidates_rich;
    println!("{} prompts x {} candidates", cands.len(), cfg.generation.k);
    for eta in [0.80, 0.85, 0.90] {
        let n = pdgrs_dataset(cands, &PdgrsConfig { threshold: eta, temperature: 1.0 })?.len();
        println!("eta {eta:.2} tau 1.0: {n} pairs");
    }
    for tau in [0.8, 0.9, 1.0, 1.1, 1.2] {
        let n = pdgrs_dataset(cands, &PdgrsConfig { threshold: 0.85, temperature: tau })?.len();
        println!("eta 0.85 tau {tau:.1}: {n} pairs");
    }
    for p in [SelectionPolicy::BestVsWorst, SelectionPolicy::BestVsRandom] {
        let (d, stats) = select_pairs(p, cands, &cfg.pdgrs, &RngStream::new(0, "select", 0))?;
        println!("{p}: {} pairs, {} prompts skipped", d.len(), stats.skipped);
    }
    Ok(())
}
