use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::univariate_counts;

fn repeated(row: &[f64], n_rows: usize) -> ProbabilityMatrix {
    ProbabilityMatrix::new(n_rows, row.len(), row.iter().copied().cycle().take(row.len() * n_rows).collect()).unwrap()
}

fn random_probs(n_rows: usize, n_cols: usize, seed: u64) -> ProbabilityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProbabilityMatrix::new(n_rows, n_cols, (0..n_rows * n_cols).map(|_| rng.random_range(0.01..0.99)).collect()).unwrap()
}

fn random_rows(layout: &BlockLayout, n: usize, seed: u64) -> ResponseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<u32> = (0..n)
        .flat_map(|_| layout.sizes().into_iter().map(|s| rng.random_range(0..s as u32)).collect::<Vec<_>>())
        .collect();
    ResponseMatrix::from_codes(layout.clone(), &codes).unwrap()
}

fn normalized(probs: &ProbabilityMatrix, layout: &BlockLayout, r: usize) -> Vec<f64> {
    let p = probs.row(r);
    let mut out = vec![0.0; p.len()];
    for b in layout.blocks() {
        let s: f64 = p[b.clone()].iter().sum();
        for c in b {
            out[c] = p[c] / s;
        }
    }
    out
}

#[test]
fn entropy_of_uniform_and_near_certain_blocks() {
    assert!((block_entropy_bits(&[0.25; 4]) - 2.0).abs() < 1e-6);
    assert!((block_entropy_bits(&[0.5; 2]) - 1.0).abs() < 1e-6);
    // the stabilizer leaves a few nanobits on a degenerate block
    assert!(block_entropy_bits(&[1.0, 0.0, 0.0]) < 1e-8);

    let layout = BlockLayout::from_sizes(&[4, 2]).unwrap();
    let probs = repeated(&[0.3, 0.3, 0.3, 0.3, 0.6, 0.6], 3);
    let s = instantiate(&probs, &layout, 1, 0).unwrap();
    for r in 0..3 {
        assert!((s.block_entropy_row(r)[0] - 2.0).abs() < 1e-6);
        assert!((s.block_entropy_row(r)[1] - 1.0).abs() < 1e-6);
        assert!((s.entropy_bits[r] - 3.0).abs() < 1e-6);
    }

    let eps = 1e-13;
    let layout = BlockLayout::from_sizes(&[3]).unwrap();
    let probs = repeated(&[1.0 - eps, eps, eps], 1000);
    let s = instantiate(&probs, &layout, 2, 0).unwrap();
    assert!(s.rows.codes().iter().all(|&c| c == 0));
    assert!(s.entropy_bits.iter().all(|&e| (0.0..1e-8).contains(&e)));
}

#[test]
fn draws_follow_a_fixed_block_distribution() {
    // unnormalized on purpose: the block sums to 0.5
    let layout = BlockLayout::from_sizes(&[3]).unwrap();
    let n = 100_000;
    let probs = repeated(&[0.1, 0.15, 0.25], n);
    let s = instantiate(&probs, &layout, 2024, 0).unwrap();
    let counts = univariate_counts(&s.rows);
    let chi2: f64 = counts
        .iter()
        .zip([0.2, 0.3, 0.5])
        .map(|(&o, p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // upper 0.001 point of chi-square with 2 degrees of freedom
    assert!(chi2 < 13.8155, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn expected_diagonal_matches_normalized_column_sums() {
    let layout = BlockLayout::from_sizes(&[2, 3, 2]).unwrap();
    let probs = random_probs(5, 7, 3);
    let seeds = 4000;
    let mut totals = vec![0u64; 7];
    for seed in 0..seeds {
        let s = instantiate(&probs, &layout, seed, 0).unwrap();
        for (t, c) in totals.iter_mut().zip(univariate_counts(&s.rows)) {
            *t += c;
        }
    }
    for c in 0..7 {
        let (mean, var): (f64, f64) = (0..5)
            .map(|r| normalized(&probs, &layout, r)[c])
            .fold((0.0, 0.0), |(m, v), q| (m + q, v + q * (1.0 - q)));
        let expected = mean * seeds as f64;
        let sd = (var * seeds as f64).sqrt();
        assert!((totals[c] as f64 - expected).abs() < 3.0 * sd, "column {c}: {} vs {expected} +- {sd}", totals[c]);
    }
}

#[test]
fn draws_are_reproducible_and_instances_independent() {
    let layout = BlockLayout::from_sizes(&[2, 3, 4]).unwrap();
    let probs = random_probs(3000, 9, 4);
    let a = instantiate(&probs, &layout, 7, 0).unwrap();
    let b = instantiate(&probs, &layout, 7, 0).unwrap();
    let c = instantiate(&probs, &layout, 7, 1).unwrap();
    let d = instantiate(&probs, &layout, 8, 0).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.rows, c.rows);
    assert_ne!(a.rows, d.rows);
    assert_eq!(c.instances, vec![1; 3000]);
    // a prefix of the rows draws exactly what the full matrix drew
    let head = ProbabilityMatrix::new(100, 9, probs.data()[..900].to_vec()).unwrap();
    let h = instantiate(&head, &layout, 7, 0).unwrap();
    assert_eq!(h.rows.cells(), &a.rows.cells()[..900]);
}

#[test]
fn randomized_response_endpoints() {
    let layout = BlockLayout::from_sizes(&[2, 3, 2]).unwrap();
    let truth = random_rows(&layout, 300, 5);
    let synth = instantiate(&random_probs(300, 7, 6), &layout, 1, 0).unwrap();
    let all = randomized_response(&truth, &synth, 1.0, 3).unwrap();
    assert_eq!(all.rows, truth);
    assert!(all.entropy_bits.iter().all(|&e| e == 0.0));
    let none = randomized_response(&truth, &synth, 0.0, 3).unwrap();
    assert_eq!(none, synth);
    assert!(matches!(randomized_response(&truth, &synth, 1.5, 3), Err(Error::InvalidParameter(_))));
    assert!(matches!(randomized_response(&truth, &synth, -0.1, 3), Err(Error::InvalidParameter(_))));

    let half = randomized_response(&truth, &synth, 0.5, 3).unwrap();
    for r in 0..300 {
        let blocks = half.block_entropy_row(r);
        assert!((half.entropy_bits[r] - blocks.iter().sum::<f64>()).abs() < 1e-12);
        for (qi, b) in layout.blocks().enumerate() {
            if blocks[qi] == 0.0 && synth.block_entropy_row(r)[qi] > 0.0 {
                assert_eq!(&half.rows.row(r)[b.clone()], &truth.row(r)[b]);
            }
        }
    }
}

#[test]
fn randomized_response_interpolates_marginals() {
    let layout = BlockLayout::from_sizes(&[3, 2]).unwrap();
    let truth = random_rows(&layout, 20, 9);
    let probs = random_probs(20, 5, 10);
    let p = 1.0 / 3.0;
    let seeds = 3000u64;
    let true_counts = univariate_counts(&truth);
    let mut totals = vec![0u64; 5];
    for seed in 0..seeds {
        let synth = instantiate(&probs, &layout, seed, 0).unwrap();
        let mixed = randomized_response(&truth, &synth, p, seed + 1_000_000).unwrap();
        for (t, c) in totals.iter_mut().zip(univariate_counts(&mixed.rows)) {
            *t += c;
        }
    }
    for c in 0..5 {
        let model_mean: f64 = (0..20).map(|r| normalized(&probs, &layout, r)[c]).sum();
        let expected = p * true_counts[c] as f64 + (1.0 - p) * model_mean;
        // per row the cell is Bernoulli; its variance is at most 1/4
        let per_row: f64 = (0..20)
            .map(|r| {
                let m = p * f64::from(truth.row(r)[c]) + (1.0 - p) * normalized(&probs, &layout, r)[c];
                m * (1.0 - m)
            })
            .sum();
        let sd = (per_row * seeds as f64).sqrt();
        let got = totals[c] as f64 / seeds as f64;
        assert!(
            (totals[c] as f64 - expected * seeds as f64).abs() < 3.0 * sd,
            "column {c}: mean {got} vs {expected}"
        );
    }
}

fn from_codes(layout: &BlockLayout, codes: &[u32]) -> SynthesisResult {
    let rows = ResponseMatrix::from_codes(layout.clone(), codes).unwrap();
    let n = rows.n_rows();
    SynthesisResult {
        rows,
        entropy_bits: vec![1.0; n],
        block_entropy: vec![0.5; n * layout.n_questions()],
        source_rows: (0..n).collect(),
        instances: vec![0; n],
        removed: Vec::new(),
    }
}

#[test]
fn structural_zero_toy() {
    let layout = BlockLayout::from_sizes(&[2, 2]).unwrap();
    // true data never pairs Q1=a with Q2=x
    let truth = ResponseMatrix::from_codes(layout.clone(), &[0, 1, 1, 0, 1, 1]).unwrap();
    let ct = crosstab(&truth);
    let synth = from_codes(&layout, &[1, 1, 0, 0, 0, 1]);
    let (kept, removed) = remove_structural_zero_rows(&ct, &synth).unwrap();
    assert_eq!(removed, vec![1]);
    assert_eq!(kept.source_rows, vec![0, 2]);
    assert_eq!(kept.removed.len(), 1);
    assert_eq!(kept.removed[0].source, 1);
    let side = kept.sidecar();
    assert_eq!(side, "row,entropy_bits,removed,instance\n0,1,0,0\n1,1,1,0\n2,1,0,0\n");

    let copies = from_codes(&layout, &truth.codes());
    let (same, removed) = remove_structural_zero_rows(&ct, &copies).unwrap();
    assert!(removed.is_empty());
    assert_eq!(same.rows, truth);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn instantiate_yields_one_hot_rows_within_entropy_bounds(
        seed in any::<u64>(),
        sizes in prop::collection::vec(1usize..6, 1..5),
        rows in 1usize..40,
    ) {
        let layout = BlockLayout::from_sizes(&sizes).unwrap();
        let probs = random_probs(rows, layout.n_cols(), seed);
        let s = instantiate(&probs, &layout, seed, 0).unwrap();
        prop_assert!(ResponseMatrix::from_cells(layout.clone(), s.rows.cells().to_vec()).is_ok());
        let cap: f64 = sizes.iter().map(|&k| (k as f64).log2()).sum();
        for r in 0..rows {
            let e = s.entropy_bits[r];
            prop_assert!(e >= 0.0 && e <= cap + 1e-12);
            let parts: f64 = s.block_entropy_row(r).iter().sum();
            prop_assert_eq!(e, parts);
        }
    }

    #[test]
    fn structural_zero_removal_is_exact_and_idempotent(seed in any::<u64>()) {
        let layout = BlockLayout::from_sizes(&[3, 3, 2]).unwrap();
        let truth = random_rows(&layout, 12, seed);
        let ct = crosstab(&truth);
        let synth = instantiate(&random_probs(200, 8, seed ^ 1), &layout, seed, 0).unwrap();
        let (kept, removed) = remove_structural_zero_rows(&ct, &synth).unwrap();
        prop_assert_eq!(kept.n_rows() + removed.len(), 200);
        let kept_ct = crosstab(&kept.rows);
        for (t, s) in ct.counts().iter().zip(kept_ct.counts()) {
            if *t == 0 {
                prop_assert_eq!(*s, 0);
            }
        }
        let (again, none) = remove_structural_zero_rows(&ct, &kept).unwrap();
        prop_assert!(none.is_empty());
        prop_assert_eq!(again.rows, kept.rows);
    }

    #[test]
    fn infinite_thresholds_pick_whole_instances(seed in any::<u64>()) {
        let layout = BlockLayout::from_sizes(&[2, 3, 2]).unwrap();
        let truth = random_rows(&layout, 50, seed);
        let ct = crosstab(&truth);
        let probs = random_probs(50, 7, seed);
        let i1 = instantiate(&probs, &layout, seed, 0).unwrap();
        let i2 = instantiate(&probs, &layout, seed, 1).unwrap();
        let keep = two_instance_select(&ct, &i1, &i2, f64::INFINITY, 0.5, CellWeight::Abs).unwrap();
        prop_assert_eq!(&keep, &i1);
        let swap = two_instance_select(&ct, &i1, &i2, f64::NEG_INFINITY, 0.5, CellWeight::Abs).unwrap();
        prop_assert_eq!(&swap.rows, &i2.rows);
        prop_assert_eq!(&swap.entropy_bits, &i2.entropy_bits);
        prop_assert_eq!(&swap.instances, &i2.instances);
    }
}

#[test]
fn two_instance_selection_swaps_only_lossy_rows() {
    let layout = BlockLayout::from_sizes(&[2, 2, 2]).unwrap();
    let truth = random_rows(&layout, 400, 1);
    let ct = crosstab(&truth);
    let probs = random_probs(400, 6, 2);
    let i1 = instantiate(&probs, &layout, 3, 0).unwrap();
    let i2 = instantiate(&probs, &layout, 3, 1).unwrap();
    let losses = rowwise_losses(&ct, &i1, 0.5, CellWeight::Abs).unwrap();
    let t = quantile(&losses, 0.75);
    let out = two_instance_select(&ct, &i1, &i2, t, 0.5, CellWeight::Abs).unwrap();
    for r in 0..400 {
        let want = if losses[r] > t { &i2 } else { &i1 };
        assert_eq!(out.rows.row(r), want.rows.row(r));
    }
    let swapped = out.instances.iter().filter(|&&i| i == 1).count();
    assert!(swapped <= 100);

    let mut shifted = i2.clone();
    shifted.source_rows[0] = 5;
    assert!(two_instance_select(&ct, &i1, &shifted, t, 0.5, CellWeight::Abs).is_err());
}

#[test]
fn quantile_interpolates() {
    assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.0), 1.0);
    assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 1.0), 4.0);
    assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.75), 3.25);
    assert_eq!(quantile(&[7.0], 0.3), 7.0);
    assert!(quantile(&[], 0.5).is_nan());
}

#[test]
fn pipeline_is_deterministic_and_orders_post_processes() {
    let layout = BlockLayout::from_sizes(&[3, 2, 3]).unwrap();
    let truth = random_rows(&layout, 500, 4);
    let model = MultiBladeModel::new(layout.clone(), 2, 3, 5).unwrap();
    let cfg = SynthesisConfig {
        seed: 11,
        instances: 2,
        rr_p: Some(0.5),
        fix_structural_zeros: true,
        ..SynthesisConfig::default()
    };
    let a = synthesize(&model, &truth, &cfg).unwrap();
    let b = synthesize(&model, &truth, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_rows() + a.removed.len(), 500);
    let ct = crosstab(&truth);
    let out_ct = crosstab(&a.rows);
    for (t, s) in ct.counts().iter().zip(out_ct.counts()) {
        assert!(*t > 0 || *s == 0);
    }
    assert_eq!(a.sidecar().lines().count(), 501);

    let bad = SynthesisConfig {
        instances: 3,
        ..SynthesisConfig::default()
    };
    assert!(synthesize(&model, &truth, &bad).is_err());
}

#[test]
fn cell_weights() {
    let up = (110.5f64 / 100.5).ln();
    assert_eq!(CellWeight::Signed.weight(110.0, 100.0, 0.5), up);
    assert_eq!(CellWeight::Signed.weight(100.0, 110.0, 0.5), (100.5f64 / 110.5).ln());
    assert!((CellWeight::Abs.weight(100.0, 110.0, 0.5) - up).abs() < 1e-15);
    assert_eq!(CellWeight::Excess.weight(100.0, 110.0, 0.5), 0.0);
    assert_eq!(CellWeight::Excess.weight(110.0, 100.0, 0.5), up);
    assert_eq!(SynthesisConfig::default().cell_weight, CellWeight::Signed);
    assert_eq!(SynthesisConfig::default().threshold, Threshold::Quantile(0.9));
}

#[test]
fn sidecar_round_trip() {
    let layout = BlockLayout::from_sizes(&[2, 3]).unwrap();
    let truth = ResponseMatrix::from_codes(layout.clone(), &[0, 0, 1, 2, 0, 1]).unwrap();
    let ct = crosstab(&truth);
    let probs = random_probs(3, 5, 8);
    let s = instantiate(&probs, &layout, 4, 0).unwrap();
    let (kept, _) = remove_structural_zero_rows(&ct, &s).unwrap();
    let back = SynthesisResult::from_sidecar(kept.rows.clone(), &kept.sidecar()).unwrap();
    assert_eq!(back.rows, kept.rows);
    assert_eq!(back.source_rows, kept.source_rows);
    assert_eq!(back.entropy_bits, kept.entropy_bits);
    assert_eq!(back.instances, kept.instances);
    assert_eq!(back.removed, kept.removed);
    assert!(!back.has_block_entropy());
    assert!(matches!(randomized_response(&truth, &back, 0.5, 1), Err(Error::Format(_))));
    assert_eq!(remove_structural_zero_rows(&ct, &back).unwrap().0.rows, kept.rows);

    assert!(SynthesisResult::from_sidecar(s.rows.clone(), "row,bits\n0,1\n").is_err());
    let short = "row,entropy_bits,removed,instance\n0,1.5,0,0\n";
    assert!(matches!(SynthesisResult::from_sidecar(s.rows.clone(), short), Err(Error::Shape(_))));
    let flag = "row,entropy_bits,removed,instance\n0,1.5,2,0\n1,1,0,0\n2,1,0,0\n";
    assert!(matches!(SynthesisResult::from_sidecar(s.rows.clone(), flag), Err(Error::Format(_))));
}
