use formula_distill_core::history::{HistoryRecord, TerminatedBy, MAX_HISTORY_TOKENS};
use formula_distill_core::registry::Registry;
use formula_distill_core::reward::SOLVE_THRESHOLD;
use formula_distill_core::rl::search::{run_search, SearchConfig, SearchOutcome};

#[test]
fn nguyen_one_is_solved_by_most_seeds() {
    let entry = Registry::builtin().lookup("Nguyen-1").unwrap().clone();
    let mut solved = 0;
    for seed in 0..10 {
        let pts = entry.sample_default(seed).unwrap();
        let cfg = SearchConfig { seed, epochs: 400, ..SearchConfig::default() };
        let run = run_search(&pts, &cfg).unwrap();
        let h = run.outcome.history();
        assert!(run.trace.len() <= 400);
        if let SearchOutcome::Retained(h) = &run.outcome {
            assert!(h.flattened_len() <= MAX_HISTORY_TOKENS);
            assert_eq!(h.terminated_by, TerminatedBy::Solved);
            assert!(h.entries.last().unwrap().r2 > SOLVE_THRESHOLD);
            let rec = HistoryRecord::new(format!("n1-{seed}"), &pts, h, seed);
            rec.validate(MAX_HISTORY_TOKENS).unwrap();
            solved += 1;
        } else {
            assert!(h.entries.iter().all(|e| e.r2 <= SOLVE_THRESHOLD));
        }
    }
    assert!(solved >= 8, "solved {solved}/10");
}
