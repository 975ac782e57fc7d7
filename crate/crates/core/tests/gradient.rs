use explor::latent::{expand, ExpansionConfig};
use explor::model::{backward, loss_explor, Batch, ExplorNet, LossMode, LossWeights};
use explor::seed;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, floor)`.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

struct Case {
    net: ExplorNet,
    z: Array2<f64>,
    g: Array2<f64>,
    ze: Array2<f64>,
    ge: Array2<f64>,
    w: LossWeights,
}

fn random_case(rng: &mut seed::Rng, mode: LossMode) -> Case {
    let s = rng.random_range(1..=6);
    let depth = rng.random_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8)).collect();
    let k = if mode == LossMode::SingleHead { 1 } else { rng.random_range(1..=4) };
    let b = rng.random_range(1..=6);
    let mut net = ExplorNet::init(s, &hidden, k, rng.random()).unwrap();
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let z = Array2::from_shape_simple_fn((b, s), || rng.sample::<f64, _>(StandardNormal));
    let ze = expand(z.view(), &ExpansionConfig { sigma: 0.5, seed: rng.random() }).unwrap();
    let targets = if mode == LossMode::SingleHead { rng.random_range(1..=4) } else { k };
    let g = Array2::from_shape_simple_fn((b, targets), || f64::from(rng.random_range(0..2u8)));
    let ge = Array2::from_shape_simple_fn((b, targets), || f64::from(rng.random_range(0..2u8)));
    let w = LossWeights { lambda: rng.random_range(0.0..1.0), mean_weight: 1.0 };
    Case { net, z, g, ze, ge, w }
}

fn loss(case: &Case, net: &ExplorNet, mode: LossMode) -> f64 {
    let batch = Batch { z: case.z.view(), pseudo: case.g.view(), z_expanded: case.ze.view(), pseudo_expanded: case.ge.view() };
    loss_explor(net, &batch, case.w, mode).unwrap().total
}

/// Distance from every mean-matching gap to the ℓ1 kink.
fn min_gap(case: &Case) -> f64 {
    let p = case.net.head_probabilities(case.z.view()).unwrap();
    let k = p.ncols() as f64;
    p.rows()
        .into_iter()
        .zip(case.g.rows())
        .map(|(p, g)| (p.sum() / k - g.sum() / k).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter of the case.
fn max_error(case: &Case, mode: LossMode, floor: f64) -> f64 {
    let batch = Batch { z: case.z.view(), pseudo: case.g.view(), z_expanded: case.ze.view(), pseudo_expanded: case.ge.view() };
    let (_, grads) = backward(&case.net, &batch, case.w, mode).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.to_vec()).collect();
    let mut worst = 0.0f64;
    let mut net = case.net.clone();
    for (t, a_t) in analytic.iter().enumerate() {
        for (i, &a) in a_t.iter().enumerate() {
            let orig = net.params_mut()[t][i];
            net.params_mut()[t][i] = orig + H;
            let up = loss(case, &net, mode);
            net.params_mut()[t][i] = orig - H;
            let down = loss(case, &net, mode);
            net.params_mut()[t][i] = orig;
            let n = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(a, n, floor));
        }
    }
    worst
}

#[test]
fn analytic_gradients_match_central_differences_in_every_mode() {
    let mut rng = seed::rng(2024);
    for mode in LossMode::all() {
        let mut checked = 0;
        while checked < 60 {
            let case = random_case(&mut rng, mode);
            if mode == LossMode::Full && min_gap(&case) < 1e-4 {
                continue;
            }
            let err = max_error(&case, mode, 1e-4);
            assert!(err < 1e-5, "{mode:?}: relative error {err:e}");
            checked += 1;
        }
    }
}

#[test]
fn degenerate_expansion_counts_matching_one_plus_lambda_times() {
    let mut rng = seed::rng(5);
    let case = random_case(&mut rng, LossMode::Full);
    let batch = Batch { z: case.z.view(), pseudo: case.g.view(), z_expanded: case.z.view(), pseudo_expanded: case.g.view() };
    let p = loss_explor(&case.net, &batch, case.w, LossMode::Full).unwrap();
    let want = p.mean + (1.0 + case.w.lambda) * p.matching;
    assert!((p.total - want).abs() < 1e-12);
}
