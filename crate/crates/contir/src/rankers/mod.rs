//! Embedding-based neural ranking models and the pairwise training loss.

mod config;
mod heads;
mod loss;
mod pair;
mod tfidf;

pub use config::{default_kernels, HeadKind, KernelSpec, RankerConfig};
pub use heads::{kernel_pooling, matching_histogram, Ranker};
pub use loss::{margin_ranking_loss, relu};
pub use pair::TokenizedPair;
pub use tfidf::TfidfStats;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ParameterSet, Tape, TapeParams, Tensor};
    use crate::data::{EmbeddingMatrix, Vocabulary};
    use crate::seeding;
    use rand::seq::SliceRandom;
    use rand::RngExt;

    fn small_config(head: HeadKind) -> RankerConfig {
        RankerConfig {
            embedding_dim: 6,
            query_len: 4,
            doc_len: 8,
            hist_bins: 5,
            drmm_hidden: 3,
            kernels: default_kernels(4),
            conv_channels: 2,
            conv_window: 2,
            ..RankerConfig::new(head)
        }
    }

    fn test_vocab() -> Vocabulary {
        let mut vocab = Vocabulary::new();
        for t in ["red", "fox", "jumps", "high", "blue", "bird", "sings", "low"] {
            vocab.add(t);
        }
        vocab
    }

    fn setup(head: HeadKind, seed: u64) -> (Ranker, ParameterSet, Vocabulary) {
        let vocab = test_vocab();
        let config = small_config(head);
        let mut ranker = Ranker::new(config.clone()).unwrap();
        let embedding = EmbeddingMatrix::random(&vocab, config.embedding_dim, seed);
        let params = ranker.init_params(&embedding, seed).unwrap();
        let docs: Vec<Vec<usize>> = vec![vec![2, 3, 4], vec![5, 6, 7], vec![2, 5, 8]];
        ranker.set_tfidf(TfidfStats::from_docs(docs.iter().map(Vec::as_slice), vocab.len()));
        (ranker, params, vocab)
    }

    fn pair_of(vocab: &Vocabulary, q: &str, d: &str, cfg: &RankerConfig) -> TokenizedPair {
        TokenizedPair::from_texts(q, d, vocab, cfg.query_len, cfg.doc_len).unwrap()
    }

    #[test]
    fn histogram_hand_binned_example() {
        // b=5, row [-1, -0.2, 0.3, 1] -> counts [1, 0, 1, 1, 1]
        let cos = Tensor::matrix(1, 4, vec![-1.0, -0.2, 0.3, 1.0]);
        let hist = matching_histogram(&cos, &[1.0; 4], 5);
        let expected: Vec<f64> = [1.0, 0.0, 1.0, 1.0, 1.0]
            .iter()
            .map(|c| f64::ln(1.0 + c))
            .collect();
        assert_eq!(hist.data(), expected.as_slice());
    }

    #[test]
    fn histogram_masked_row_is_zero() {
        let cos = Tensor::matrix(1, 3, vec![0.5, -0.5, 0.9]);
        let hist = matching_histogram(&cos, &[0.0; 3], 4);
        assert!(hist.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn histogram_mass_equals_unmasked_count() {
        let mut rng = seeding::stream(3, "hist-mass", 0);
        for _ in 0..20 {
            let cols = rng.random_range(2..10usize);
            let vals: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mask: Vec<f64> = (0..cols).map(|_| f64::from(rng.random_range(0..2))).collect();
            let hist = matching_histogram(&Tensor::matrix(1, cols, vals), &mask, 6);
            let mass: f64 = hist.data().iter().map(|v| v.exp() - 1.0).sum();
            let unmasked: f64 = mask.iter().sum();
            assert!((mass - unmasked).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel_values_match_the_formula() {
        let tape = Tape::new();
        // single position, cosine 1 vs kernel mu=1: exp(0) = 1 before log
        let inter = tape.constant(Tensor::matrix(1, 1, vec![1.0]));
        let pooled = kernel_pooling(
            &tape,
            &inter,
            &[1.0],
            &[1.0],
            &[KernelSpec { mu: 1.0, sigma: 0.1 }],
            false,
        );
        assert!((pooled.value().data()[0] - 1.0).abs() < 1e-12);

        // cosine 0 vs mu=1, sigma=0.1: exp(-50)
        let inter = tape.constant(Tensor::matrix(1, 1, vec![0.0]));
        let pooled = kernel_pooling(
            &tape,
            &inter,
            &[1.0],
            &[1.0],
            &[KernelSpec { mu: 1.0, sigma: 0.1 }],
            false,
        );
        assert!((pooled.value().data()[0] - (-50.0f64).exp()).abs() < 1e-24);

        // fully masked doc: sum 0, then log(1+0) = 0
        let inter = tape.constant(Tensor::matrix(1, 2, vec![0.9, 0.3]));
        let pooled = kernel_pooling(
            &tape,
            &inter,
            &[1.0],
            &[0.0, 0.0],
            &default_kernels(3),
            true,
        );
        assert!(pooled.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn knrm_zero_head_scores_half() {
        let (ranker, mut params, vocab) = setup(HeadKind::Knrm, 5);
        for name in ["knrm.out", "knrm.out_bias"] {
            let t = params.get_mut(name).unwrap();
            t.data_mut().fill(0.0);
        }
        let pair = pair_of(&vocab, "red fox", "blue bird sings", ranker.config());
        let scores = ranker.score_batch(&[pair], &params).unwrap();
        assert_eq!(scores, vec![0.5]);
    }

    #[test]
    fn maxsim_identical_texts_score_token_count() {
        let (ranker, params, vocab) = setup(HeadKind::Maxsim, 6);
        let pair = pair_of(&vocab, "red fox jumps", "red fox jumps", ranker.config());
        let scores = ranker.score_batch(&[pair], &params).unwrap();
        assert!((scores[0] - 3.0).abs() < 1e-9, "got {}", scores[0]);
    }

    #[test]
    fn doc_permutation_invariance_holds_except_duet() {
        let text = "blue bird sings low red fox";
        let mut rng = seeding::stream(11, "perm", 0);
        for head in HeadKind::ALL {
            let (ranker, params, vocab) = setup(head, 21);
            let cfg = ranker.config();
            let base = pair_of(&vocab, "red fox", text, cfg);
            let base_score = ranker.score_batch(std::slice::from_ref(&base), &params).unwrap()[0];
            let mut any_changed = false;
            for _ in 0..5 {
                let real = base.doc_real_count();
                let mut order: Vec<usize> = (0..real).collect();
                order.shuffle(&mut rng);
                let mut ids = base.doc_ids.clone();
                for (to, &from) in order.iter().enumerate() {
                    ids[to] = base.doc_ids[from];
                }
                let permuted = TokenizedPair::new(
                    base.query_ids.clone(),
                    ids,
                    base.query_mask.clone(),
                    base.doc_mask.clone(),
                )
                .unwrap();
                let score = ranker.score_batch(&[permuted], &params).unwrap()[0];
                if (score - base_score).abs() > 1e-9 {
                    any_changed = true;
                }
                if head != HeadKind::Duet {
                    assert!(
                        (score - base_score).abs() < 1e-9,
                        "{}: permutation moved score {base_score} -> {score}",
                        head.tag()
                    );
                }
            }
            if head == HeadKind::Duet {
                assert!(any_changed, "duet should be position-sensitive");
            }
        }
    }

    #[test]
    fn masked_token_ids_never_influence_scores() {
        for head in HeadKind::ALL {
            let (ranker, params, vocab) = setup(head, 33);
            let cfg = ranker.config();
            let base = pair_of(&vocab, "red fox", "blue bird sings", cfg);
            let mut garbled = base.clone();
            for (id, m) in garbled.query_ids.iter_mut().zip(&garbled.query_mask) {
                if *m == 0.0 {
                    *id = 7;
                }
            }
            for (id, m) in garbled.doc_ids.iter_mut().zip(&garbled.doc_mask) {
                if *m == 0.0 {
                    *id = 4;
                }
            }
            let a = ranker.score_batch(&[base], &params).unwrap()[0];
            let b = ranker.score_batch(&[garbled], &params).unwrap()[0];
            assert_eq!(a.to_bits(), b.to_bits(), "{} leaked padding", head.tag());
        }
    }

    #[test]
    fn longer_padding_leaves_scores_unchanged() {
        // Heads without length-shaped parameters must score identically
        // when the fixed lengths grow and the extra positions are padding.
        for head in [HeadKind::Knrm, HeadKind::Drmm, HeadKind::PooledDot, HeadKind::Maxsim] {
            let vocab = test_vocab();
            let short_cfg = small_config(head);
            let long_cfg = RankerConfig {
                query_len: short_cfg.query_len + 3,
                doc_len: short_cfg.doc_len + 5,
                ..short_cfg.clone()
            };
            let embedding = EmbeddingMatrix::random(&vocab, short_cfg.embedding_dim, 9);
            let short = Ranker::new(short_cfg.clone()).unwrap();
            let long = Ranker::new(long_cfg.clone()).unwrap();
            let params = short.init_params(&embedding, 9).unwrap();
            let a = short
                .score_batch(
                    &[pair_of(&vocab, "red fox", "blue bird sings", &short_cfg)],
                    &params,
                )
                .unwrap()[0];
            let b = long
                .score_batch(
                    &[pair_of(&vocab, "red fox", "blue bird sings", &long_cfg)],
                    &params,
                )
                .unwrap()[0];
            assert_eq!(a.to_bits(), b.to_bits(), "{} not padding-stable", head.tag());
        }
    }

    #[test]
    fn drmm_histogram_path_blocks_embedding_gradient() {
        // Zero the gate weight (keeping a nonzero gate bias) so only the
        // histogram path could reach the embedding table; its gradient must
        // then vanish entirely.
        let (ranker, mut params, vocab) = setup(HeadKind::Drmm, 13);
        params.get_mut("drmm.gate").unwrap().data_mut().fill(0.0);
        params.get_mut("drmm.gate_bias").unwrap().data_mut().fill(1.0);
        let cfg = ranker.config().clone();
        let pair = pair_of(&vocab, "red fox", "blue bird sings low", &cfg);
        let tape = Tape::new();
        let tp = params.attach(&tape);
        let score = ranker.score_pair(&tape, &tp, &pair);
        let grads = tape.backward(&score, &params).unwrap();
        assert!(grads
            .get("embedding")
            .unwrap()
            .data()
            .iter()
            .all(|&g| g == 0.0));
        // MLP parameters still learn from the histogram features.
        assert!(grads
            .get("drmm.mlp1")
            .unwrap()
            .data()
            .iter()
            .any(|&g| g != 0.0));
    }

    #[test]
    fn drmm_gate_passes_embedding_gradient() {
        let (ranker, params, vocab) = setup(HeadKind::Drmm, 14);
        let cfg = ranker.config().clone();
        let pair = pair_of(&vocab, "red fox", "blue bird sings low", &cfg);
        let tape = Tape::new();
        let tp = params.attach(&tape);
        let score = ranker.score_pair(&tape, &tp, &pair);
        let grads = tape.backward(&score, &params).unwrap();
        assert!(grads
            .get("embedding")
            .unwrap()
            .data()
            .iter()
            .any(|&g| g != 0.0));
        assert!(grads
            .get("drmm.gate")
            .unwrap()
            .data()
            .iter()
            .any(|&g| g != 0.0));
    }

    #[test]
    fn every_head_passes_margin_loss_gradient_check() {
        for head in HeadKind::ALL {
            let (ranker, params, vocab) = setup(head, 41);
            let cfg = ranker.config().clone();
            let pos = [
                pair_of(&vocab, "red fox", "red fox jumps high", &cfg),
                pair_of(&vocab, "blue bird", "blue bird sings", &cfg),
            ];
            let neg = [
                pair_of(&vocab, "red fox", "blue bird sings low", &cfg),
                pair_of(&vocab, "blue bird", "red fox jumps", &cfg),
            ];
            let build = |tape: &Tape, tp: &TapeParams| {
                let pos_scores: Vec<_> = pos
                    .iter()
                    .map(|p| ranker.score_pair(tape, tp, p).reshape(&[1]))
                    .collect();
                let neg_scores: Vec<_> = neg
                    .iter()
                    .map(|p| ranker.score_pair(tape, tp, p).reshape(&[1]))
                    .collect();
                let p = tape.concat(&pos_scores.iter().collect::<Vec<_>>(), 0);
                let n = tape.concat(&neg_scores.iter().collect::<Vec<_>>(), 0);
                margin_ranking_loss(&p, &n, 1.0, 1.0)
            };
            let err = grad_check(&build, &params, 1e-5).unwrap();
            assert!(err < 1e-4, "{}: gradient error {err}", head.tag());
        }
    }

    #[test]
    fn frozen_pad_row_is_re_zeroed() {
        let (ranker, mut params, _) = setup(HeadKind::Knrm, 50);
        let _ = &ranker;
        params.get_mut("embedding").unwrap().data_mut()[0..6].fill(0.7);
        Ranker::enforce_frozen_rows(&mut params);
        assert_eq!(&params.get("embedding").unwrap().data()[0..6], &[0.0; 6]);
    }
}
