mod common;

use caglow::autodiff::{Real, Tape, Tensor};
use caglow::flow::{ActNorm, Coupling, FlowConfig, FlowLayer, FlowModel, GaussianPrior, InvLinear, LayerKind, Layout, Split, Squeeze};
use caglow::nn::Module;
use caglow::SeedStream;
use common::{det_by_minors, jacobian_fd, random_tensor, rng};

fn single(layer: FlowLayer) -> FlowModel {
    FlowModel::from_layers(layer.input_layout(), vec![layer]).unwrap()
}

/// Worst |reported logdet − log|det J|| over a few random points, with J from
/// central differences and the determinant from minor expansion.
fn logdet_oracle_gap(model: &FlowModel, seed: u64) -> Real {
    let d = model.dim();
    let mut r = rng(seed);
    let mut worst: Real = 0.0;
    for _ in 0..3 {
        let x = random_tensor(&[1, d], -1.0, 1.0, &mut r);
        let f = |v: &[Real]| {
            let t = Tensor::new(vec![1, d], v.to_vec()).unwrap();
            model.forward_values(&t).unwrap().0.into_data()
        };
        let jac = jacobian_fd(&f, x.data());
        let oracle = det_by_minors(&jac, d).abs().ln();
        let (_, ld) = model.forward_values(&x).unwrap();
        worst = worst.max((ld.item() - oracle).abs());
    }
    worst
}

fn perturbed_actnorm(layout: Layout, seed: u64) -> ActNorm {
    let mut a = ActNorm::new("an", layout);
    let mut r = rng(seed);
    a.log_scale.tensor = random_tensor(&[layout.channels], -0.5, 0.5, &mut r);
    a.bias.tensor = random_tensor(&[layout.channels], -0.5, 0.5, &mut r);
    a
}

fn perturbed_invlinear(layout: Layout, seed: u64) -> InvLinear {
    let mut r = rng(seed);
    let mut l = InvLinear::new("il", layout, &mut r);
    for v in l.weight.tensor.data_mut() {
        *v += 0.3 * (rand::Rng::random::<f64>(&mut r) - 0.5);
    }
    l
}

fn perturbed_coupling(layout: Layout, parity: usize, seed: u64) -> Coupling {
    let mut r = rng(seed);
    let mut c = Coupling::new("cp", layout, 8, parity, &mut r).unwrap();
    let last = c.net.layers.last_mut().unwrap();
    last.weight.tensor = random_tensor(last.weight.shape(), -0.5, 0.5, &mut r);
    last.bias.tensor = random_tensor(last.bias.shape(), -0.5, 0.5, &mut r);
    c
}

fn small_model(seed: u64) -> FlowModel {
    let cfg = FlowConfig::image(4, 4, 1, 2, 2, 8);
    let mut m = FlowModel::new(cfg, "flow", SeedStream::new(seed)).unwrap();
    let mut r = rng(seed);
    m.initialize(&random_tensor(&[32, 16], 0.0, 1.0, &mut r)).unwrap();
    m.perturb_couplings(0.3, &mut r);
    m
}

#[test]
fn logdet_matches_dense_jacobian_per_layer_kind() {
    let grid = Layout::image(2, 2, 4);
    let cases = vec![
        ("actnorm", single(FlowLayer::ActNorm(perturbed_actnorm(grid, 1)))),
        ("invlinear", single(FlowLayer::InvLinear(perturbed_invlinear(grid, 2)))),
        ("coupling-channels", single(FlowLayer::Coupling(perturbed_coupling(grid, 0, 3)))),
        (
            "coupling-checkerboard",
            single(FlowLayer::Coupling(perturbed_coupling(Layout::image(4, 4, 1), 1, 4))),
        ),
        ("composed", small_model(5)),
    ];
    for (name, model) in cases {
        let gap = logdet_oracle_gap(&model, 11);
        assert!(gap < 1e-5, "{name}: gap {gap}");
    }
}

#[test]
fn squeeze_and_split_have_zero_logdet() {
    let sq = single(FlowLayer::Squeeze(Squeeze::new(Layout::image(4, 4, 1)).unwrap()));
    let sp = single(FlowLayer::Split(Split::new(Layout::image(2, 2, 4)).unwrap()));
    let mut r = rng(6);
    for m in [sq, sp] {
        let x = random_tensor(&[3, 16], -1.0, 1.0, &mut r);
        let (z, ld) = m.forward_values(&x).unwrap();
        assert!(ld.data().iter().all(|&v| v == 0.0));
        let mut a = x.clone().into_data();
        let mut b = z.into_data();
        a.sort_by(|p, q| p.partial_cmp(q).unwrap());
        b.sort_by(|p, q| p.partial_cmp(q).unwrap());
        assert_eq!(a, b, "permutation layers keep the multiset of values");
    }
}

#[test]
fn invlinear_logdet_is_sites_times_lu_logabsdet() {
    let layout = Layout::image(2, 3, 4);
    let l = perturbed_invlinear(layout, 7);
    let (lu, _) = caglow::autodiff::lu_factor(&l.weight.tensor).unwrap().log_abs_det();
    let m = single(FlowLayer::InvLinear(l));
    let x = random_tensor(&[2, layout.dim()], -1.0, 1.0, &mut rng(8));
    let (_, ld) = m.forward_values(&x).unwrap();
    assert!((ld.data()[0] - 6.0 * lu).abs() < 1e-12);
}

#[test]
fn coupling_leaves_conditioning_half_bit_identical() {
    for (layout, parity) in [(Layout::image(2, 2, 4), 0), (Layout::image(4, 4, 1), 1)] {
        let c = perturbed_coupling(layout, parity, 9);
        let cond = c.cond.clone();
        let m = single(FlowLayer::Coupling(c));
        let x = random_tensor(&[4, layout.dim()], -1.0, 1.0, &mut rng(10));
        let (z, _) = m.forward_values(&x).unwrap();
        for b in 0..4 {
            for &i in &cond {
                assert_eq!(z.row(b)[i].to_bits(), x.row(b)[i].to_bits());
            }
        }
    }
}

#[test]
fn round_trip_and_inverse_logdet_symmetry() {
    let m = small_model(12);
    let x = random_tensor(&[8, 16], 0.0, 1.0, &mut rng(13));
    let (z, ld) = m.forward_values(&x).unwrap();
    let back = m.inverse(&z).unwrap();
    assert!(back.max_abs_diff(&x) < 1e-8);
    let (z2, _) = m.forward_values(&back).unwrap();
    assert!(z2.max_abs_diff(&z) < 1e-8);
    // inverse logdet at z equals -forward logdet at x: log|det J_inv(z)| via FD
    let d = 16;
    for b in 0..2 {
        let zb = z.row(b).to_vec();
        let f = |v: &[Real]| m.inverse(&Tensor::new(vec![1, d], v.to_vec()).unwrap()).unwrap().into_data();
        let inv_ld = det_by_minors(&jacobian_fd(&f, &zb), d).abs().ln();
        assert!((inv_ld + ld.data()[b]).abs() < 1e-5);
    }
}

#[test]
fn multiscale_latent_layout_covers_input() {
    let m = FlowModel::new(FlowConfig::image(14, 14, 1, 3, 4, 16), "flow", SeedStream::new(0)).unwrap();
    assert_eq!(m.latent_layout().iter().sum::<usize>(), 196);
    assert_eq!(m.latent_layout(), vec![98, 49, 49]);
    let kinds = m.layer_kinds();
    assert_eq!(kinds.iter().filter(|k| **k == LayerKind::Squeeze).count(), 1);
    assert_eq!(kinds.iter().filter(|k| **k == LayerKind::Split).count(), 2);
    assert_eq!(kinds.iter().filter(|k| **k == LayerKind::AffineCoupling).count(), 12);
}

#[test]
fn actnorm_init_gives_zero_mean_unit_variance() {
    let mut m = FlowModel::new(FlowConfig::image(4, 4, 1, 2, 2, 8), "flow", SeedStream::new(1)).unwrap();
    let x = random_tensor(&[64, 16], 0.0, 1.0, &mut rng(14));
    m.initialize(&x).unwrap();
    // replay layer by layer and check each actnorm output
    let mut h = x;
    for layer in &m.layers {
        let sub = FlowModel::from_layers(layer.input_layout(), vec![layer.clone()]).unwrap();
        let tape = Tape::new();
        let out = sub.forward(&tape, tape.constant(&h)).unwrap();
        // for split layers forward emits (out ++ kept); continue with the kept part
        let y = if let FlowLayer::Split(s) = layer {
            out.z.slice_cols(s.out.len(), s.keep.len()).unwrap().value()
        } else {
            out.z.value()
        };
        if let FlowLayer::ActNorm(a) = layer {
            let c = a.layout.channels;
            let rows = (y.numel() / c) as Real;
            for ch in 0..c {
                let vals: Vec<Real> = y.data().iter().skip(ch).step_by(c).copied().collect();
                let mean = vals.iter().sum::<Real>() / rows;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<Real>() / rows;
                assert!(mean.abs() < 1e-9, "mean {mean}");
                assert!((var - 1.0).abs() < 1e-4, "var {var}");
            }
        }
        h = y;
    }
}

#[test]
fn squeeze_only_model_has_zero_logdet() {
    let l1 = Layout::image(4, 4, 1);
    let s1 = Squeeze::new(l1).unwrap();
    let s2 = Squeeze::new(Squeeze::output_layout(l1)).unwrap();
    let m = FlowModel::from_layers(l1, vec![FlowLayer::Squeeze(s1), FlowLayer::Squeeze(s2)]).unwrap();
    let (_, ld) = m.forward_values(&random_tensor(&[5, 16], 0.0, 1.0, &mut rng(15))).unwrap();
    assert!(ld.data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_latent_through_identity_couplings_is_constant_image() {
    let mut m = FlowModel::new(FlowConfig::image(4, 4, 1, 1, 2, 8), "flow", SeedStream::new(2)).unwrap();
    m.initialize(&random_tensor(&[16, 16], 0.0, 1.0, &mut rng(16))).unwrap();
    let x = m.inverse(&Tensor::zeros(vec![2, 16])).unwrap();
    assert_eq!(x.row(0), x.row(1));
}

#[test]
fn nll_of_identity_flow_on_standard_normal_is_entropy() {
    let layout = Layout::vector(4);
    let m = FlowModel::from_layers(layout, vec![FlowLayer::ActNorm(ActNorm::new("an", layout))]).unwrap();
    let mut r = rng(17);
    let n = 20_000;
    let x = caglow::rng::normal_tensor(&[n, 4], 1.0, &mut r);
    let tape = Tape::new();
    let out = m.nll_loss(&tape, &GaussianPrior::default(), tape.constant(&x)).unwrap();
    let entropy = 4.0 * 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    // per-sample NLL has std sqrt(D/2) ≈ 1.41; 5 standard errors
    let se = (2.0 as Real).sqrt() / (n as Real).sqrt();
    assert!((out.loss.item() - entropy).abs() < 5.0 * se, "{} vs {entropy}", out.loss.item());
}

#[test]
fn duplicated_batch_entries_have_identical_losses() {
    let m = small_model(18);
    let row = random_tensor(&[1, 16], 0.0, 1.0, &mut rng(19));
    let x = Tensor::concat_rows(&[&row, &row, &row]).unwrap();
    let tape = Tape::new();
    let out = m.nll_loss(&tape, &GaussianPrior::default(), tape.constant(&x)).unwrap();
    let v = out.per_sample.value();
    assert_eq!(v.data()[0], v.data()[1]);
    assert_eq!(v.data()[1], v.data()[2]);
}

#[test]
fn scaling_flow_contributes_minus_ln2() {
    let layout = Layout::vector(1);
    let mut a = ActNorm::new("an", layout);
    a.log_scale.tensor.data_mut()[0] = (2.0 as Real).ln();
    let m = FlowModel::from_layers(layout, vec![FlowLayer::ActNorm(a)]).unwrap();
    let x = Tensor::new(vec![3, 1], vec![0.1, -0.4, 0.7]).unwrap();
    let prior = GaussianPrior::default();
    let tape = Tape::new();
    let nll = m.nll_loss(&tape, &prior, tape.constant(&x)).unwrap().per_sample.value();
    let (z, _) = m.forward_values(&x).unwrap();
    let lp = prior.log_prob_values(&z);
    for i in 0..3 {
        assert!((nll.data()[i] - (-lp[i] - (2.0 as Real).ln())).abs() < 1e-14);
    }
}

#[test]
fn sampling_limits_and_determinism() {
    let m = small_model(20);
    let cold = GaussianPrior::new(1e-12);
    let s = m.sample(&cold, 4, SeedStream::new(1)).unwrap();
    let x0 = m.inverse(&Tensor::zeros(vec![1, 16])).unwrap();
    for i in 0..4 {
        for (a, b) in s.row(i).iter().zip(x0.row(0)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    let warm = GaussianPrior::new(0.7);
    let a = m.sample(&warm, 8, SeedStream::new(3)).unwrap();
    let b = m.sample(&warm, 8, SeedStream::new(3)).unwrap();
    assert_eq!(a, b);
    assert!(m.sample(&warm, 0, SeedStream::new(3)).is_err());
    assert!(m.sample(&GaussianPrior::new(0.0), 1, SeedStream::new(3)).is_err());
}

#[test]
fn prior_sample_moments_match_temperature() {
    let prior = GaussianPrior::new(0.7);
    let z = prior.sample(10_000, 3, &mut SeedStream::new(4).rng());
    let n = z.numel() as Real;
    let mean = z.data().iter().sum::<Real>() / n;
    let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<Real>() / n;
    // standard errors: 0.7/sqrt(n) for the mean, 0.49*sqrt(2/n) for the variance
    assert!(mean.abs() < 5.0 * 0.7 / n.sqrt());
    assert!((var - 0.49).abs() < 5.0 * 0.49 * (2.0 / n).sqrt());
}

#[test]
fn divergence_names_the_layer() {
    let layout = Layout::vector(2);
    let mut a = ActNorm::new("an", layout);
    a.log_scale.tensor.data_mut()[0] = 1e6;
    let m = FlowModel::from_layers(
        layout,
        vec![FlowLayer::ActNorm(ActNorm::new("ok", layout)), FlowLayer::ActNorm(a)],
    )
    .unwrap();
    let err = m.forward_values(&Tensor::full(vec![1, 2], 1.0)).unwrap_err();
    assert!(matches!(err, caglow::Error::FlowDiverged { layer: 1 }), "{err}");
}

#[test]
fn singular_weight_is_reported_on_inverse() {
    let layout = Layout::vector(2);
    let mut l = InvLinear::new("il", layout, &mut rng(21));
    l.weight.tensor = Tensor::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
    let m = single(FlowLayer::InvLinear(l));
    assert!(matches!(m.inverse(&Tensor::zeros(vec![1, 2])), Err(caglow::Error::SingularTransform { .. })));
}

#[test]
fn parameter_names_are_unique() {
    let m = FlowModel::new(FlowConfig::image(8, 8, 1, 2, 3, 16), "flow", SeedStream::new(0)).unwrap();
    let mut names: Vec<&str> = m.parameters().iter().map(|p| p.name.as_str()).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
}
