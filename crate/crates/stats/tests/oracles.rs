use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use storygraph_stats::{
    aggregate_rating, format_cell, group_aggregate_mean, mean_sd, mean_sd_with, p_value_exact, p_value_normal,
    round_half_up_2, wilcoxon_signed_rank, ConditionGroup, Criterion, Method, RatingRecord, SdDenominator,
};

/// Average ranks by counting, independent of any sorting.
fn oracle_ranks(abs: &[f64]) -> Vec<f64> {
    abs.iter()
        .map(|a| {
            let less = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided p by flipping every sign combination.
fn brute_force_p(diffs: &[f64]) -> (f64, f64) {
    let used: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let ranks = oracle_ranks(&used.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = used.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w_obs = w_plus.min(total - w_plus);
    let n = used.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let wp: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if wp.min(total - wp) <= w_obs + 1e-9 {
            hits += 1;
        }
    }
    (w_obs, hits as f64 / (1u64 << n) as f64)
}

#[test]
fn exact_p_matches_sign_flip_enumeration() {
    let mut runner = TestRunner::deterministic();
    let strategy = prop::collection::vec(-4i8..=4, 1..=12);
    let mut checked = 0;
    for _ in 0..500 {
        let diffs: Vec<f64> = strategy
            .new_tree(&mut runner)
            .unwrap()
            .current()
            .into_iter()
            .map(f64::from)
            .collect();
        let Ok(result) = wilcoxon_signed_rank(&diffs) else {
            assert!(diffs.iter().all(|d| *d == 0.0));
            continue;
        };
        if result.n_used > 8 {
            continue;
        }
        let (w, p) = brute_force_p(&diffs);
        assert_eq!(result.w, w, "{diffs:?}");
        assert!((result.p_two_sided - p).abs() <= 1e-12, "{diffs:?}: {} vs {p}", result.p_two_sided);
        checked += 1;
    }
    assert!(checked > 200, "only {checked} vectors had n_used <= 8");
}

#[test]
fn hand_case_one_two_three() {
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(r.w, 0.0);
    assert_eq!(r.p_two_sided, 0.25);
    let (w, p) = brute_force_p(&[5.0, -1.0, 3.0, -2.0, 4.0]);
    let r = wilcoxon_signed_rank(&[5.0, -1.0, 3.0, -2.0, 4.0]).unwrap();
    assert_eq!((r.w, r.p_two_sided), (w, p));
}

#[test]
fn exact_and_normal_agree_for_moderate_n() {
    let mut runner = TestRunner::deterministic();
    for n in 12..=20usize {
        for _ in 0..40 {
            let signs = prop::collection::vec(any::<bool>(), n).new_tree(&mut runner).unwrap().current();
            let ranks: Vec<f64> = (1..=n).map(|r| r as f64).collect();
            let w_plus: f64 = ranks.iter().zip(&signs).filter(|(_, s)| **s).map(|(r, _)| r).sum();
            let total = (n * (n + 1) / 2) as f64;
            let w = w_plus.min(total - w_plus);
            let exact = p_value_exact(&ranks, w);
            let approx = p_value_normal(&ranks, w);
            assert!((exact - approx).abs() <= 0.02, "n={n} w={w}: {exact} vs {approx}");
        }
    }
}

#[test]
fn exact_cutoff() {
    let d20: Vec<f64> = (1..=20).map(f64::from).collect();
    assert_eq!(wilcoxon_signed_rank(&d20).unwrap().method, Method::Exact);
    let d21: Vec<f64> = (1..=21).map(f64::from).collect();
    assert_eq!(wilcoxon_signed_rank(&d21).unwrap().method, Method::NormalApprox);
}

fn fixture() -> Vec<RatingRecord> {
    // 15 participants, ratings from a fixed linear congruence so the fixture is varied.
    (0..15u32)
        .map(|p| {
            let rating = |k: u32| ((p * 7 + k * 3 + p * k) % 5 + 1) as u8;
            RatingRecord {
                participant_id: format!("p{p:02}"),
                condition: "kg".into(),
                genre_group: Some(if p < 8 { "kinetic" } else { "introspective" }.into()),
                ratings: Criterion::ALL.into_iter().zip((0..8).map(rating)).collect(),
                holistic: rating(8),
                free_text: None,
            }
        })
        .collect()
}

/// Spreadsheet-style recomputation: sum of squares minus n times the squared mean.
fn oracle_mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|v| v * v).sum();
    let mean = sum / n;
    (mean, ((sum_sq - sum * sum / n) / n).sqrt())
}

#[test]
fn fifteen_record_fixture_matches_recomputation() {
    let data = fixture();
    let group = ConditionGroup::new("kg", data.clone()).unwrap();
    for c in Criterion::ALL {
        let values: Vec<f64> = data.iter().map(|r| f64::from(r.ratings[&c])).collect();
        let (m, s) = group.criterion_mean_sd(c, SdDenominator::Population).unwrap();
        let (om, os) = oracle_mean_sd(&values);
        assert!((m - om).abs() <= 1e-12 && (s - os).abs() <= 1e-12, "{c}");
        assert_eq!(mean_sd(&values).unwrap(), (m, s));
    }
    let aggregates: Vec<f64> = data
        .iter()
        .map(|r| r.ratings.values().map(|v| f64::from(*v)).sum::<f64>() / 8.0)
        .collect();
    let (m, s) = group_aggregate_mean(&group).unwrap();
    let (om, os) = oracle_mean_sd(&aggregates);
    assert!((m - om).abs() <= 1e-12 && (s - os).abs() <= 1e-12);
}

#[test]
fn holistic_mutation_changes_no_aggregate() {
    let data = fixture();
    let before = group_aggregate_mean(&ConditionGroup::new("kg", data.clone()).unwrap()).unwrap();
    for h in 1..=5 {
        let mutated: Vec<RatingRecord> = data
            .iter()
            .cloned()
            .map(|mut r| {
                r.holistic = h;
                r
            })
            .collect();
        for (a, b) in data.iter().zip(&mutated) {
            assert_eq!(aggregate_rating(a), aggregate_rating(b));
        }
        assert_eq!(group_aggregate_mean(&ConditionGroup::new("kg", mutated).unwrap()).unwrap(), before);
    }
}

#[test]
fn half_up_on_every_three_decimal_boundary() {
    for whole in 0..6i64 {
        for q in 0..100i64 {
            let text = format!("{whole}.{q:02}5");
            let x: f64 = text.parse().unwrap();
            assert_eq!(round_half_up_2(x), whole * 100 + q + 1, "{text}");
            let below: f64 = format!("{whole}.{q:02}4999").parse().unwrap();
            assert_eq!(round_half_up_2(below), whole * 100 + q, "{below}");
        }
    }
    assert_eq!(format_cell(3.7312, 1.0349), "3.73 (1.03)");
    assert_eq!(format_cell(3.725, 1.035), "3.73 (1.04)");
}

/// Every multiset of `n` Likert ratings, as sorted vectors.
fn multisets(n: usize) -> Vec<Vec<f64>> {
    fn go(n: usize, min: u8, acc: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if acc.len() == n {
            out.push(acc.clone());
            return;
        }
        for v in min..=5 {
            acc.push(f64::from(v));
            go(n, v, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    go(n, 1, &mut Vec::new(), &mut out);
    out
}

fn reachable(cell: &str, n: usize, denominator: SdDenominator) -> bool {
    multisets(n).iter().any(|v| {
        let (m, s) = mean_sd_with(v, denominator).unwrap();
        format_cell(m, s) == cell
    })
}

#[test]
fn reference_cells_need_the_sample_denominator() {
    // Known single-criterion reference cells, with their group sizes.
    let cells = [
        ("2.38 (0.74)", 8),
        ("3.75 (0.89)", 8),
        ("4.14 (0.69)", 7),
        ("2.86 (0.69)", 7),
        ("3.73 (1.03)", 15),
        ("3.13 (1.13)", 15),
    ];
    for (cell, n) in cells {
        assert!(reachable(cell, n, SdDenominator::Sample), "{cell} with n = {n}");
    }
    assert!(!reachable("2.38 (0.74)", 8, SdDenominator::Population));
    assert!(!reachable("4.14 (0.69)", 7, SdDenominator::Population));
}

proptest! {
    #[test]
    fn aggregate_ignores_criterion_order(ratings in prop::array::uniform8(1u8..=5), holistic in 1u8..=5) {
        let a = RatingRecord {
            participant_id: "p".into(),
            condition: "c".into(),
            genre_group: None,
            ratings: Criterion::ALL.into_iter().zip(ratings).collect(),
            holistic,
            free_text: None,
        };
        let mut reversed = ratings;
        reversed.reverse();
        let b = RatingRecord {
            ratings: Criterion::ALL.into_iter().zip(reversed).collect(),
            holistic: 6 - holistic,
            ..a.clone()
        };
        prop_assert!((aggregate_rating(&a) - aggregate_rating(&b)).abs() < 1e-12);
    }

    #[test]
    fn paired_subset_monotone_in_subgroup(
        a_ids in prop::collection::btree_set(0u8..12, 0..12),
        b_ids in prop::collection::btree_set(0u8..12, 0..12),
        g_small in prop::collection::btree_set(0u8..12, 0..6),
        g_extra in prop::collection::btree_set(0u8..12, 0..6),
    ) {
        use storygraph_stats::{paired_subset, Subgroup};
        let group = |label: &str, ids: &std::collections::BTreeSet<u8>| {
            ConditionGroup::new(label, ids.iter().map(|i| RatingRecord {
                participant_id: format!("p{i:02}"),
                condition: label.into(),
                genre_group: None,
                ratings: Criterion::ALL.into_iter().map(|c| (c, 3)).collect(),
                holistic: 3,
                free_text: None,
            }).collect()).unwrap()
        };
        let sub = |ids: &std::collections::BTreeSet<u8>| Subgroup {
            label: "G".into(),
            participants: ids.iter().map(|i| format!("p{i:02}")).collect(),
        };
        let (a, b) = (group("A", &a_ids), group("B", &b_ids));
        let all = paired_subset(&a, &b, None);
        let small = paired_subset(&a, &b, Some(&sub(&g_small)));
        let big_ids = g_small.union(&g_extra).copied().collect();
        let big = paired_subset(&a, &b, Some(&sub(&big_ids)));
        let expected: Vec<String> = a_ids.intersection(&b_ids).map(|i| format!("p{i:02}")).collect();
        prop_assert_eq!(all.participants(), expected.iter().map(String::as_str).collect::<Vec<_>>());
        prop_assert!(small.participants().iter().all(|p| big.participants().contains(p)));
        prop_assert!(big.participants().iter().all(|p| all.participants().contains(p)));
    }
}
