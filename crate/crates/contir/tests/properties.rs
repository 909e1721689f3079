//! Property tests over the pure kernels: structural invariants that hold
//! for arbitrary well-formed inputs.

use std::collections::BTreeSet;

use proptest::prelude::*;

use contir::autodiff::{ParameterSet, Tape, Tensor};
use contir::metrics::{mrr, pearson, RankedRun};
use contir::rankers::{margin_ranking_loss, matching_histogram};
use contir::strategies::{constraints_satisfied, gem_project, l2_importance, penalty_term, CONSTRAINT_TOL};
use contir::data::Sample;
use contir::strategies::MemoryBuffer;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parameter_flatten_unflatten_round_trips(
        blocks in prop::collection::vec((1usize..5, 1usize..5), 1..4),
        values in prop::collection::vec(-10.0f64..10.0, 0..64),
    ) {
        let mut params = ParameterSet::new();
        let mut offset = 0usize;
        for (i, (r, c)) in blocks.iter().enumerate() {
            let n = r * c;
            let data: Vec<f64> = (0..n)
                .map(|j| values.get((offset + j) % values.len().max(1)).copied().unwrap_or(0.5))
                .collect();
            offset += n;
            params.insert(format!("p{i}"), Tensor::matrix(*r, *c, data));
        }
        let flat = params.flatten();
        prop_assert_eq!(params.unflatten(&flat), params);
    }

    #[test]
    fn histogram_mass_matches_unmasked_count(
        cosines in prop::collection::vec(-1.5f64..1.5, 1..30),
        bins in 2usize..12,
        mask_bits in prop::collection::vec(prop::bool::ANY, 1..30),
    ) {
        let cols = cosines.len().min(mask_bits.len());
        let values = Tensor::matrix(1, cols, cosines[..cols].to_vec());
        let mask: Vec<f64> = mask_bits[..cols].iter().map(|&b| f64::from(u8::from(b))).collect();
        let hist = matching_histogram(&values, &mask, bins);
        let mass: f64 = hist.data().iter().map(|v| v.exp() - 1.0).sum();
        let unmasked: f64 = mask.iter().sum();
        prop_assert!((mass - unmasked).abs() < 1e-9);
    }

    #[test]
    fn pearson_stays_in_unit_interval(
        points in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40),
    ) {
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson(&xs, &ys) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn mrr_is_bounded_and_input_order_free(
        scores in prop::collection::vec(0.0f64..1.0, 2..12),
        relevant_idx in 0usize..12,
        rotation in 0usize..12,
    ) {
        let docs: Vec<(String, f64)> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (format!("d{i}"), s))
            .collect();
        let relevant: BTreeSet<String> =
            BTreeSet::from([format!("d{}", relevant_idx % docs.len())]);
        let value = |cands: Vec<(String, f64)>| {
            let run = RankedRun::from_scores([("q".to_string(), cands, relevant.clone())]);
            mrr(&run, None).unwrap().value
        };
        let base = value(docs.clone());
        prop_assert!((0.0..=1.0).contains(&base));
        // Candidate list order must not matter: the ranking tie-break is
        // (score desc, doc id asc), independent of input order.
        let mut rotated = docs.clone();
        rotated.rotate_left(rotation % docs.len());
        prop_assert_eq!(base.to_bits(), value(rotated).to_bits());
    }

    #[test]
    fn margin_loss_is_nonnegative(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..10),
        margin in 0.0f64..3.0,
    ) {
        let tape = Tape::new();
        let pos = tape.constant(Tensor::from_vec(pairs.iter().map(|p| p.0).collect()));
        let neg = tape.constant(Tensor::from_vec(pairs.iter().map(|p| p.1).collect()));
        let loss = margin_ranking_loss(&pos, &neg, margin, 1.0).scalar_value().unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn penalty_is_nonnegative_and_zero_at_anchor(
        values in prop::collection::vec(-3.0f64..3.0, 1..8),
        displacement in prop::collection::vec(-2.0f64..2.0, 1..8),
        lambda in 0.0f64..10.0,
    ) {
        let n = values.len().min(displacement.len());
        let mut anchor = ParameterSet::new();
        anchor.insert("w", Tensor::from_vec(values[..n].to_vec()));
        let moved_values: Vec<f64> = values[..n]
            .iter()
            .zip(&displacement[..n])
            .map(|(v, d)| v + d)
            .collect();
        let mut moved = ParameterSet::new();
        moved.insert("w", Tensor::from_vec(moved_values));
        let omega = l2_importance(&anchor);

        let tape = Tape::new();
        let tp = moved.attach(&tape);
        let p = penalty_term(&tape, &tp, &anchor, &omega, lambda).value().item();
        prop_assert!(p >= 0.0);

        let tape = Tape::new();
        let tp = anchor.attach(&tape);
        let at_anchor = penalty_term(&tape, &tp, &anchor, &omega, lambda).value().item();
        prop_assert_eq!(at_anchor, 0.0);
    }

    #[test]
    fn gem_projection_respects_constraints(
        memory_flat in prop::collection::vec(-1.0f64..1.0, 4..16),
        gradient in prop::collection::vec(-1.0f64..1.0, 2..4),
    ) {
        let dim = gradient.len();
        let rows = (memory_flat.len() / dim).max(1);
        let memory: Vec<Vec<f64>> = (0..rows)
            .map(|r| (0..dim).map(|c| memory_flat[(r * dim + c) % memory_flat.len()]).collect())
            .collect();
        let outcome = gem_project(&gradient, &memory, 1e-3);
        if outcome.qp_converged {
            prop_assert!(constraints_satisfied(&outcome.gradient, &memory, CONSTRAINT_TOL));
        }
    }

    #[test]
    fn memory_never_exceeds_capacity(
        capacity in 0usize..40,
        task_sizes in prop::collection::vec(1usize..30, 1..6),
    ) {
        let mut memory = MemoryBuffer::new(capacity);
        for (t, &size) in task_sizes.iter().enumerate() {
            let rows: Vec<Sample> = (0..size)
                .map(|i| Sample {
                    query_id: format!("q{t}_{i}"),
                    query_text: "q".into(),
                    doc_id: format!("d{t}_{i}"),
                    doc_text: "d".into(),
                    relevance: f64::from(u8::from(i % 2 == 0)),
                })
                .collect();
            memory.update(t + 1, &rows, 5);
            prop_assert!(memory.total_len() <= capacity);
        }
    }
}
