use proptest::prelude::*;

use predflow::distributions::DiagGaussian;
use predflow::flows::{fit_cholesky_whitening, fit_zca, AffineFlow, FlowStack, TemporalPredictor};
use predflow::inference::{
    elbo_objective, iterative_infer, map_gradient, map_objective, pc_inference, ElboMode, GradEstimator, InferenceNet,
    IterativeConfig, PcConfig, PosteriorEstimate,
};
use predflow::models::{GenerativeModel, LinearGaussianModel, Link};
use predflow::{Rng, Tensor};

fn model(k: usize, m: usize, seed: u64) -> LinearGaussianModel {
    let mut rng = Rng::new(seed);
    let mut l = LinearGaussianModel::random(k, m, &mut rng);
    l.prior_mean = rng.normal_vec(k);
    l
}

fn q1(mean: f64, log_std: f64) -> PosteriorEstimate {
    PosteriorEstimate { levels: vec![DiagGaussian::new(vec![mean], vec![log_std]).unwrap()] }
}

fn analytic(model: &GenerativeModel, q: &PosteriorEstimate, x: &[f64]) -> f64 {
    elbo_objective(model, q, x, 1.0, &ElboMode::Analytic, None).unwrap().0.elbo
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn elbo_never_exceeds_log_marginal(x in -4.0..4.0f64, mu in -4.0..4.0f64, ls in -3.0..2.0f64) {
        let unit = LinearGaussianModel::unit();
        let g: GenerativeModel = unit.clone().into();
        prop_assert!(analytic(&g, &q1(mu, ls), &[x]) <= unit.exact_log_marginal(&[x]).unwrap() + 1e-9);
    }

    #[test]
    fn exact_posterior_is_tight(x in -4.0..4.0f64, seed in any::<u64>()) {
        let l = model(1, 1, seed);
        let post = l.exact_posterior(&[x]).unwrap();
        let q = q1(post.mean()[0], 0.5 * post.covariance().get(0, 0).ln());
        let g: GenerativeModel = l.clone().into();
        prop_assert!((analytic(&g, &q, &[x]) - l.exact_log_marginal(&[x]).unwrap()).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn map_gradient_matches_differences(k in 1usize..5, m in 1usize..5, tanh in any::<bool>(), seed in any::<u64>()) {
        let mut l = model(k, m, seed);
        if tanh {
            l.link = Link::Tanh;
        }
        let mut rng = Rng::new(seed ^ 1);
        let x = rng.normal_vec(m);
        let z = rng.normal_vec(k);
        let g: GenerativeModel = l.into();
        let grad = map_gradient(&g, &x, &[z.clone()]).unwrap();
        let h = 1e-5;
        for i in 0..k {
            let (mut up, mut dn) = (z.clone(), z.clone());
            up[i] += h;
            dn[i] -= h;
            let n = (map_objective(&g, &x, &[up]).unwrap() - map_objective(&g, &x, &[dn]).unwrap()) / (2.0 * h);
            prop_assert!((grad[0][i] - n).abs() < 1e-6);
        }
    }

    #[test]
    fn pc_fixed_point_is_posterior_mean(k in 1usize..5, m in 1usize..5, seed in any::<u64>()) {
        let l = model(k, m, seed);
        let x = Rng::new(seed ^ 2).normal_vec(m);
        let exact = l.exact_posterior(&x).unwrap();
        let (z, _) = pc_inference(&l.into(), &x, &[vec![0.0; k]], &PcConfig::default()).unwrap();
        for (a, b) in z[0].iter().zip(exact.mean()) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn pc_trace_is_monotone(k in 1usize..4, m in 1usize..4, tanh in any::<bool>(), seed in any::<u64>()) {
        let mut l = model(k, m, seed);
        if tanh {
            l.link = Link::Tanh;
        }
        let x = Rng::new(seed ^ 3).normal_vec(m);
        let cfg = PcConfig { step: 1.0, max_steps: 300, ..PcConfig::default() };
        let (_, trace) = pc_inference(&l.into(), &x, &[vec![0.0; k]], &cfg).unwrap();
        for w in trace.objective.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn diagonal_gap_is_kl_to_posterior(k in 1usize..5, m in 1usize..5, seed in any::<u64>()) {
        let l = model(k, m, seed);
        let mut rng = Rng::new(seed ^ 4);
        let x = rng.normal_vec(m);
        let mu = rng.normal_vec(k);
        let ls: Vec<f64> = (0..k).map(|_| rng.uniform_range(-1.5, 1.0)).collect();
        let post = l.exact_posterior(&x).unwrap();
        let p_inv = predflow::tensor::inverse(post.covariance()).unwrap();
        let d: Vec<f64> = mu.iter().zip(post.mean()).map(|(a, b)| a - b).collect();
        let quad: f64 = d.iter().zip(p_inv.matvec(&d).unwrap()).map(|(a, b)| a * b).sum();
        let trace: f64 = (0..k).map(|i| p_inv.get(i, i) * (2.0 * ls[i]).exp()).sum();
        let q_logdet: f64 = ls.iter().map(|s| 2.0 * s).sum();
        let kl = 0.5 * (trace + quad - k as f64 + predflow::tensor::logdet(post.covariance()).unwrap() - q_logdet);
        let q = PosteriorEstimate { levels: vec![DiagGaussian::new(mu, ls).unwrap()] };
        let g: GenerativeModel = l.clone().into();
        let gap = l.exact_log_marginal(&x).unwrap() - analytic(&g, &q, &x);
        prop_assert!((gap - kl).abs() < 1e-9);
    }

    #[test]
    fn plain_mode_is_gradient_ascent(steps in 1usize..20, alpha in 0.01..0.5f64, x in -3.0..3.0f64) {
        let g: GenerativeModel = LinearGaussianModel::unit().into();
        let cfg = IterativeConfig { n_iters: steps, estimator: GradEstimator::Analytic, beta: 1.0 };
        let init = PosteriorEstimate::standard(&[1]);
        let (q, _) = iterative_infer(&InferenceNet::Plain { step: alpha }, &g, &[x], &init, &cfg, &mut Rng::new(0)).unwrap();
        let mut lam = init.to_flat();
        for _ in 0..steps {
            let cur = PosteriorEstimate::from_flat(&[1], &lam).unwrap();
            let (_, grad) = elbo_objective(&g, &cur, &[x], 1.0, &ElboMode::Analytic, None).unwrap();
            lam.iter_mut().zip(grad.to_flat()).for_each(|(l, d)| *l += alpha * d);
        }
        prop_assert_eq!(q.to_flat(), lam);
    }

    #[test]
    fn affine_stack_roundtrip(d in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let steps: Vec<AffineFlow> = (0..3)
            .map(|_| {
                let mut b = Tensor::matrix(d, d, rng.normal_vec(d * d)).unwrap().scale(0.4);
                for i in 0..d {
                    b.set(i, i, b.get(i, i) + 2.0);
                }
                AffineFlow::constant(rng.normal_vec(d), b).unwrap()
            })
            .collect();
        let stack = FlowStack::new(steps, DiagGaussian::standard(d)).unwrap();
        let u = rng.normal_vec(d);
        let (v, fwd) = stack.push_forward_with(&u, &[]).unwrap();
        let (back, inv) = stack.normalize_with(&v, &[]).unwrap();
        for (a, b) in u.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!((fwd + inv).abs() < 1e-12);
    }

    #[test]
    fn whitening_gives_identity_covariance(m in 1usize..9, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mix = Tensor::matrix(m, m, rng.normal_vec(m * m)).unwrap().add(&Tensor::identity(m)).unwrap();
        let rows: Vec<Vec<f64>> = (0..400).map(|_| mix.matvec(&rng.normal_vec(m)).unwrap()).collect();
        let data = Tensor::from_rows(&rows).unwrap();
        for flow in [fit_zca(&data).unwrap(), fit_cholesky_whitening(&data).unwrap()] {
            let white: Vec<Vec<f64>> = rows.iter().map(|r| flow.inverse(r).unwrap().0).collect();
            let (_, cov) = Tensor::from_rows(&white).unwrap().sample_moments().unwrap();
            prop_assert!(cov.max_abs_diff(&Tensor::identity(m)) < 1e-8);
        }
    }

    #[test]
    fn temporal_roundtrip(t in 2usize..30, m in 1usize..5, seed in any::<u64>()) {
        let x = Tensor::matrix(t, m, Rng::new(seed).normal_vec(t * m)).unwrap();
        let p = TemporalPredictor::previous_frame(m);
        let prefix = Tensor::matrix(1, m, x.row(0).to_vec()).unwrap();
        let back = p.denormalize(&p.normalize(&x).unwrap(), &prefix).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-10);
    }
}
