use nalgebra::DMatrix;
use proptest::prelude::*;

use ces_demand::cli::Method;
use ces_demand::density::{adjust_moments, isotonic_increasing};
use ces_demand::io::format_f64;
use ces_demand::model::{elasticities, marshallian_quantities, predicted_shares, ProductPoint, QualityKernelParams};
use ces_demand::numerics::{gaussian_kernel, inverse_mills, normal_cdf};
use ces_demand::secondstage::pairwise_moments;

const DX: usize = 2;
const DW: usize = 2;

fn params() -> impl Strategy<Value = QualityKernelParams> {
    (
        0.3f64..5.0,
        -1.0f64..1.0,
        prop::collection::vec(-1.0f64..1.0, DX),
        -1.0f64..1.0,
        prop::collection::vec(-1.0f64..1.0, DW),
    )
        .prop_map(|(sigma, alpha, beta, gamma, delta)| {
            QualityKernelParams::new(sigma, alpha, beta, gamma, delta).unwrap()
        })
}

fn product(open: bool) -> impl Strategy<Value = ProductPoint> {
    (
        0.2f64..5.0,
        prop::collection::vec(-2.0f64..2.0, DX),
        prop::collection::vec(-2.0f64..2.0, DW),
        -1.0f64..1.0,
        -3.0f64..3.0,
    )
        .prop_map(move |(price, x, w, xi, eta)| ProductPoint {
            price,
            x,
            w,
            xi,
            // far above any reachable gate threshold when forced open
            eta: if open { 1e6 } else { eta },
        })
}

fn market(open: bool) -> impl Strategy<Value = Vec<ProductPoint>> {
    prop::collection::vec(product(open), 1..7)
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn budget_shares(products: &[ProductPoint], q: &[f64], budget: f64) -> Vec<f64> {
    products.iter().zip(q).map(|(p, q)| p.price * q / budget).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shares_lie_on_the_simplex(params in params(), mut products in market(false)) {
        products.push(ProductPoint::numeraire(DX, DW));
        let s = predicted_shares(&products, &params).unwrap();
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (p, &sj) in products.iter().zip(&s) {
            prop_assert!(sj >= 0.0);
            let open = params.gamma + p.w.iter().zip(&params.delta).map(|(a, b)| a * b).sum::<f64>() + p.eta > 0.0;
            prop_assert_eq!(sj > 0.0, open);
        }
    }

    #[test]
    fn demand_is_homogeneous_of_degree_zero(
        params in params(),
        products in market(false),
        budget in 0.5f64..100.0,
        scale in 0.1f64..10.0,
    ) {
        let mut products = products;
        products.push(ProductPoint { eta: 1e6, ..products[0].clone() });
        let q = marshallian_quantities(&products, &params, budget).unwrap();
        let scaled: Vec<ProductPoint> =
            products.iter().map(|p| ProductPoint { price: p.price * scale, ..p.clone() }).collect();
        let q2 = marshallian_quantities(&scaled, &params, budget * scale).unwrap();
        for (a, b) in q.iter().zip(&q2) {
            prop_assert!(a == b || relative(*a, *b) < 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn spending_exhausts_the_budget(params in params(), products in market(true), budget in 0.5f64..100.0) {
        let q = marshallian_quantities(&products, &params, budget).unwrap();
        let spend: f64 = products.iter().zip(&q).map(|(p, q)| p.price * q).sum();
        prop_assert!(relative(spend, budget) < 1e-10);
    }

    #[test]
    fn elasticities_match_finite_differences(params in params(), products in market(true), budget in 1.0f64..10.0) {
        let q = marshallian_quantities(&products, &params, budget).unwrap();
        let b = budget_shares(&products, &q, budget);
        let table = elasticities(&b, params.sigma).unwrap();
        let h = 1e-5;
        for c in 0..products.len() {
            let bump = |t: f64| {
                let mut moved = products.clone();
                moved[c].price *= t.exp();
                marshallian_quantities(&moved, &params, budget).unwrap()
            };
            let (up, down) = (bump(h), bump(-h));
            for j in 0..products.len() {
                let fd = (up[j].ln() - down[j].ln()) / (2.0 * h);
                prop_assert!((fd - table.marshallian[(j, c)]).abs() < 1e-6, "({}, {}): {} vs {}", j, c, fd, table.marshallian[(j, c)]);
            }
            let up_y = marshallian_quantities(&products, &params, budget * h.exp()).unwrap();
            let down_y = marshallian_quantities(&products, &params, budget * (-h).exp()).unwrap();
            let income = (up_y[c].ln() - down_y[c].ln()) / (2.0 * h);
            prop_assert!((income - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn slutsky_and_aggregation_identities(raw in prop::collection::vec(0.01f64..1.0, 1..8), sigma in 0.3f64..5.0) {
        let total: f64 = raw.iter().sum();
        let b: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let t = elasticities(&b, sigma).unwrap();
        let n = b.len();
        for j in 0..n {
            for c in 0..n {
                // ε^H = ε^M + b_c · income elasticity
                let slutsky = t.marshallian[(j, c)] + b[c] * t.income[j];
                prop_assert!((t.hicksian[(j, c)] - slutsky).abs() <= 4.0 * f64::EPSILON * sigma.max(1.0));
            }
            prop_assert_eq!(t.income[j], 1.0);
        }
        // Cournot: Σ_j b_j ε^M_jc = −b_c; compensated rows sum to zero
        for c in 0..n {
            let cournot: f64 = (0..n).map(|j| b[j] * t.marshallian[(j, c)]).sum();
            prop_assert!((cournot + b[c]).abs() < 1e-10 * sigma.max(1.0));
            let row: f64 = (0..n).map(|k| t.hicksian[(c, k)]).sum();
            prop_assert!(row.abs() < 1e-10 * sigma.max(1.0));
        }
        let engel: f64 = b.iter().zip(&t.income).map(|(b, e)| b * e).sum();
        prop_assert!((engel - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_and_mills_shapes(u in -30.0f64..30.0, d in 0.0f64..5.0) {
        prop_assert_eq!(gaussian_kernel(u), gaussian_kernel(-u));
        prop_assert!(gaussian_kernel(u.abs() + d) <= gaussian_kernel(u.abs()));
        prop_assert!(normal_cdf(u) <= normal_cdf(u + d));
        prop_assert!((normal_cdf(u) + normal_cdf(-u) - 1.0).abs() < 1e-14);
        let m = inverse_mills(u);
        prop_assert!(m > 0.0 && m.is_finite());
        prop_assert!(m >= -u, "λ(u) exceeds max(0, −u)");
    }

    #[test]
    fn isotonic_fit_is_monotone_and_mean_preserving(v in prop::collection::vec(-5.0f64..5.0, 1..60)) {
        let fit = isotonic_increasing(&v);
        prop_assert_eq!(fit.len(), v.len());
        prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        let (a, b): (f64, f64) = (v.iter().sum(), fit.iter().sum());
        prop_assert!((a - b).abs() < 1e-9);
        let again = isotonic_increasing(&fit);
        for (x, y) in fit.iter().zip(&again) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn moment_adjustment_hits_its_targets(
        v in prop::collection::vec(-5.0f64..5.0, 3..100),
        mean in -3.0f64..3.0,
        var in 0.1f64..9.0,
    ) {
        let m0 = v.iter().sum::<f64>() / v.len() as f64;
        prop_assume!(v.iter().map(|x| (x - m0).powi(2)).sum::<f64>() > 1e-6);
        let out = adjust_moments(&v, mean, var).unwrap();
        let n = out.len() as f64;
        let m = out.iter().sum::<f64>() / n;
        let s2 = out.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((m - mean).abs() < 1e-9);
        prop_assert!(relative(s2, var) < 1e-9);
    }

    #[test]
    fn pair_moments_ignore_index_location(
        v in prop::collection::vec(-3.0f64..3.0, 2..40),
        shift in -50.0f64..50.0,
        h in 0.2f64..3.0,
    ) {
        let n = v.len();
        let m = DMatrix::from_fn(n, 2, |i, c| ((i * 7 + c * 3) % 5) as f64 - 2.0 + v[i]);
        let counts = vec![1.0; n];
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let a = pairwise_moments(&v, h, &counts, &m);
        let b = pairwise_moments(&shifted, h, &counts, &m);
        let scale = a.amax().max(1e-12);
        prop_assert!((a - b).amax() / scale < 1e-9);
    }

    #[test]
    fn csv_floats_round_trip(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        prop_assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn impute_method_names_round_trip(v in 1e-300f64..1.0) {
        let m: Method = format!("logit-impute:{v:e}").parse().unwrap();
        prop_assert_eq!(m, Method::LogitImpute(v));
        prop_assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
    }
}
