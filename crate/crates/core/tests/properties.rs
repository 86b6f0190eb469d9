use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use uq_retrieval::bayes::bayes_coverage;
use uq_retrieval::calibration::make_plan;
use uq_retrieval::constraints::{ConstraintSet, Descriptor};
use uq_retrieval::interval::{IntervalOptions, IntervalSolver, RadiusMode};
use uq_retrieval::io;
use uq_retrieval::model::{whiten_operator, LinearProblem, NoiseCovariance, ProblemFile, WhitenedProblem};
use uq_retrieval::simulation::{matern, streams, substream};
use uq_retrieval::study::{interval_indicator, Method, PerXRow};

/// Well-conditioned tall operator, positive weights and a box-constrained
/// truth, all from one flat vector of draws.
fn instance() -> impl Strategy<Value = (WhitenedProblem, ConstraintSet, DVector<f64>)> {
    (1usize..=4, 0usize..=6).prop_flat_map(|(p, extra)| {
        let n = p + 1 + extra;
        (
            proptest::collection::vec(-1.0..1.0f64, n * p),
            proptest::collection::vec(0.1..1.0f64, p),
            proptest::collection::vec(-2.0..2.0f64, n),
            proptest::collection::vec(0.0..1.0f64, p),
        )
            .prop_map(move |(k, h, noise, bound)| {
                let mut k = DMatrix::from_row_slice(n, p, &k);
                for i in 0..p {
                    k[(i, i)] += 2.0;
                }
                let h = DVector::from_vec(h);
                let x_true = DVector::from_element(p, 0.5);
                let y = &k * &x_true + DVector::from_vec(noise);
                let set = ConstraintSet::from_descriptors(
                    p,
                    (0..p)
                        .map(|i| Descriptor::Box {
                            index: i,
                            lo: 0.0,
                            hi: 1.0 + bound[i],
                        })
                        .collect(),
                )
                .unwrap();
                (WhitenedProblem::from_whitened(k, h).unwrap(), set, y)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coverage_is_a_probability_and_even_in_bias(bias in -5.0..5.0f64, se in 0.05..3.0f64, ratio in 0.5..3.0f64, alpha in 0.001..0.5f64) {
        let sd = se * ratio;
        let c = bayes_coverage(bias, se, sd, alpha);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((c - bayes_coverage(-bias, se, sd, alpha)).abs() < 1e-12);
        prop_assert!(bayes_coverage(bias.abs() + 0.1, se, sd, alpha) <= c + 1e-12);
    }

    #[test]
    fn endpoints_are_attained_by_feasible_points((w, set, y) in instance()) {
        let solver = IntervalSolver::new(&w, &set, IntervalOptions::default()).unwrap();
        let res = solver.solve(&y, 0.05, RadiusMode::OneAtATime).unwrap();
        prop_assert!(res.lower <= res.upper);
        prop_assert!(res.radius_sq >= res.slack_sq);
        // The slack minimiser sits inside the confidence set.
        let theta = w.h.dot(&res.x_feas);
        prop_assert!(res.lower - 1e-7 <= theta && theta <= res.upper + 1e-7);
        for (x, value) in [(&res.x_at_lower, res.lower), (&res.x_at_upper, res.upper)] {
            prop_assert!(set.max_violation(x) <= 1e-7);
            prop_assert!((&y - &w.k_w * x).norm_squared() <= res.radius_sq * (1.0 + 1e-6) + 1e-9);
            prop_assert!((w.h.dot(x) - value).abs() <= 1e-6 * (1.0 + value.abs()));
        }
        prop_assert!(res.certified);
    }

    #[test]
    fn tightening_a_box_never_widens_at_fixed_radius((w, set, y) in instance()) {
        let solver = IntervalSolver::new(&w, &set, IntervalOptions::default()).unwrap();
        let wide = solver.solve(&y, 0.05, RadiusMode::OneAtATime).unwrap();
        let tight_set = set.clone().with(Descriptor::Box { index: 0, lo: f64::NEG_INFINITY, hi: 1.0 }).unwrap();
        let tight = IntervalSolver::new(&w, &tight_set, IntervalOptions::default()).unwrap();
        if let Ok(t) = tight.solve_at_radius(&y, wide.radius_sq) {
            prop_assert!(t.lower >= wide.lower - 1e-7 * (1.0 + wide.lower.abs()));
            prop_assert!(t.upper <= wide.upper + 1e-7 * (1.0 + wide.upper.abs()));
        }
    }

    #[test]
    fn indicator_is_a_closed_interval(lo in -10.0..10.0f64, width in 0.0..5.0f64, t in 0.0..1.0f64) {
        let hi = lo + width;
        prop_assert_eq!(interval_indicator(&(lo, hi), lo + t * width), 1);
        prop_assert_eq!(interval_indicator(&(lo, hi), lo), 1);
        prop_assert_eq!(interval_indicator(&(lo, hi), hi), 1);
        prop_assert_eq!(interval_indicator(&(lo, hi), hi + 1e-9 + t), 0);
    }

    #[test]
    fn matern_is_a_decreasing_correlation(d1 in 0.0..50.0f64, dd in 0.0..50.0f64, rho in 0.1..20.0f64, k in 0usize..3) {
        let nu = 0.5 + k as f64;
        let a = matern(nu, rho, d1);
        let b = matern(nu, rho, d1 + dd);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-15);
        prop_assert!((matern(nu, rho, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn plan_budget_is_exact(total in 0.01..0.2f64, share in 0.05..0.95f64) {
        let gamma = total * share;
        let plan = make_plan(total, &[total - gamma], Some(gamma)).unwrap();
        prop_assert!((plan.gamma + plan.alphas.iter().sum::<f64>() - total).abs() <= 1e-12);
        prop_assert!(make_plan(total, &[total], Some(gamma)).is_err());
    }

    #[test]
    fn substreams_are_reproducible_and_distinct(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        let a: u64 = substream(seed, streams::NOISE, i, j).random();
        let b: u64 = substream(seed, streams::NOISE, i, j).random();
        let c: u64 = substream(seed, streams::NOISE, i, j + 1).random();
        let d: u64 = substream(seed, streams::STATE, i, j).random();
        prop_assert_eq!(a, b);
        prop_assert_ne!(a, c);
        prop_assert_ne!(a, d);
    }

    #[test]
    fn problem_file_round_trips(n in 1usize..6, p in 1usize..5, vals in proptest::collection::vec(-3.0..3.0f64, 60)) {
        let k = DMatrix::from_fn(n, p, |i, j| vals[i * p + j]);
        let var = DVector::from_fn(n, |i, _| 0.5 + vals[30 + i].abs());
        let h = DVector::from_fn(p, |i, _| 1.0 + vals[50 + i].abs());
        let problem = LinearProblem::new(k, NoiseCovariance::Diagonal(var), h).unwrap();
        let text = io::to_json(&ProblemFile::from_problem(&problem));
        let back: ProblemFile = serde_json::from_str(&text).unwrap();
        let again = back.into_problem().unwrap();
        prop_assert_eq!(again.k(), problem.k());
        prop_assert_eq!(again.h(), problem.h());
        let wa = whiten_operator(&again).unwrap();
        let wb = whiten_operator(&problem).unwrap();
        prop_assert_eq!(wa.k_w, wb.k_w);
    }

    #[test]
    fn csv_rows_round_trip(rows in proptest::collection::vec((0usize..50, any::<bool>(), 0.0..1.0f64, 0.0..10.0f64), 0..8)) {
        let rows: Vec<PerXRow> = rows
            .into_iter()
            .map(|(x_id, bayes, c, len)| PerXRow {
                x_id,
                method: if bayes { Method::Bayes } else { Method::Frequentist },
                bias: bayes.then_some(len - 5.0),
                analytic_coverage: bayes.then_some(c),
                empirical_coverage: c,
                mean_length: len,
                length_sd: 0.0,
                n_noise_draws: 100,
                failures: 0,
            })
            .collect();
        let bytes = io::to_csv(io::PER_X_HEADER, &rows).unwrap();
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let back: Vec<PerXRow> = r.deserialize().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, rows);
    }
}
