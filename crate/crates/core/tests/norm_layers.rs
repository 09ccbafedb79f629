use proptest::prelude::*;
use rand::Rng;
use sepbn_core::norm::{
    apply_mapping, channel_stats, Aggregation, BatchNorm, BruteForceSepBn, ForwardCtx, Mode, NormLayer, SepBn,
    SimpleSepBn,
};
use sepbn_core::rng;
use sepbn_core::tensor::{grad_check, Differentiable, GradCheckOptions, Param, Tensor};

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut r = rng::stream(seed, &[99]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

fn sepbn(c: usize, k: usize, g: usize, t: usize, agg: Aggregation, seed: u64) -> SepBn {
    SepBn::new("sep", c, k, g, t, agg, 1e-5, 0.1, 0.1, &mut rng::stream(seed, &[])).unwrap()
}

/// Makes the attention MLP's output non-trivial so π is not uniform.
fn randomize_attention(layer: &mut SepBn, seed: u64) {
    let mut r = rng::stream(seed, &[7]);
    for v in layer.att_fc2.weight.value.data_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    for v in layer.att_fc2.bias.value.data_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    for v in layer.beta.value.data_mut() {
        *v = r.random_range(-0.5..0.5);
    }
}

#[test]
fn simple_sepbn_single_set_equals_bn() {
    let x = random(&[4, 16, 3, 3], 1, 2.0);
    let mut simple = SimpleSepBn::new("s", 16, 1, 4, 1e-5, 0.1, 0.1, &mut rng::stream(2, &[])).unwrap();
    let gamma = simple.gamma.value.data().to_vec();
    let mut bn = BatchNorm::with_affine("bn", gamma, vec![0.0; 16], 1e-5, 0.1).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        let ctx = ForwardCtx { mode, ..ForwardCtx::train(5.0) };
        let a = simple.forward(&x, &ctx).unwrap();
        let b = bn.forward(&x, mode).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn simple_sepbn_matches_composition_oracle() {
    let (n, c, k, r) = (3, 8, 3, 4);
    let x = random(&[n, c, 2, 3], 3, 1.5);
    let mut layer = SimpleSepBn::new("s", c, k, r, 1e-5, 0.1, 0.1, &mut rng::stream(4, &[])).unwrap();
    let mut rr = rng::stream(5, &[]);
    for v in layer.beta.value.data_mut() {
        *v = rr.random_range(-1.0..1.0);
    }
    for v in layer.excite.bias.value.data_mut() {
        *v = rr.random_range(-1.0..1.0);
    }
    let tau = 0.7;
    let y = layer.forward(&x, &ForwardCtx::train(tau)).unwrap();

    let h = c / r;
    let (w1, b1) = (layer.squeeze.weight.value.data(), layer.squeeze.bias.value.data());
    let (w2, b2) = (layer.excite.weight.value.data(), layer.excite.bias.value.data());
    let (g, b) = (layer.gamma.value.data(), layer.beta.value.data());
    let (mean, var) = channel_stats(&x).unwrap();
    let plane = 6;
    for s in 0..n {
        let gap: Vec<f64> = (0..c)
            .map(|ch| x.data()[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        let sq: Vec<f64> = (0..h)
            .map(|j| {
                let v = b1[j] + (0..c).map(|i| w1[j * c + i] * gap[i]).sum::<f64>();
                if v >= 0.0 { v } else { 0.01 * v }
            })
            .collect();
        let ex: Vec<f64> = (0..k)
            .map(|j| {
                let v = b2[j] + (0..h).map(|i| w2[j * h + i] * sq[i]).sum::<f64>();
                1.0 / (1.0 + (-v).exp())
            })
            .collect();
        let z: f64 = ex.iter().map(|e| (e / tau).exp()).sum();
        let lambda: Vec<f64> = ex.iter().map(|e| (e / tau).exp() / z).collect();
        for ch in 0..c {
            let gh: f64 = (0..k).map(|kk| lambda[kk] * g[kk * c + ch]).sum();
            let bh: f64 = (0..k).map(|kk| lambda[kk] * b[kk * c + ch]).sum();
            for p in 0..plane {
                let idx = (s * c + ch) * plane + p;
                let xhat = (x.data()[idx] - mean[ch]) / (var[ch] + 1e-5).sqrt();
                assert!((y.data()[idx] - (gh * xhat + bh)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_mlp_gives_uniform_attention() {
    let x = random(&[2, 4, 6, 6], 6, 1.0);
    let mut layer = sepbn(4, 3, 2, 3, Aggregation::Soft, 7);
    let pi = layer.attention(&x, 1.0).unwrap();
    assert_eq!(pi.shape(), &[2, 2, 3]);
    assert!(pi.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn huge_temperature_flattens_attention() {
    let x = random(&[2, 4, 6, 6], 8, 3.0);
    let mut layer = sepbn(4, 3, 2, 3, Aggregation::Soft, 9);
    randomize_attention(&mut layer, 10);
    let pi = layer.attention(&x, 1e6).unwrap();
    assert!(pi.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-3));
}

#[test]
fn sepbn_rejects_indivisible_groups() {
    assert!(SepBn::new("s", 5, 3, 2, 3, Aggregation::Soft, 1e-5, 0.1, 0.1, &mut rng::stream(0, &[])).is_err());
    assert!(SimpleSepBn::new("s", 8, 3, 16, 1e-5, 0.1, 0.1, &mut rng::stream(0, &[])).is_err());
}

#[test]
fn adaptive_pool_larger_than_input_is_rejected() {
    let mut layer = sepbn(4, 3, 2, 3, Aggregation::Soft, 9);
    assert!(layer.forward(&Tensor::zeros(&[2, 4, 2, 2]), &ForwardCtx::train(1.0)).is_err());
}

#[test]
fn equal_sets_collapse_to_bn() {
    let x = random(&[4, 6, 5, 5], 11, 2.0);
    let mut layer = sepbn(6, 3, 3, 3, Aggregation::Soft, 12);
    randomize_attention(&mut layer, 13);
    let gamma_star: Vec<f64> = (0..6).map(|i| 0.5 + 0.1 * i as f64).collect();
    let beta_star: Vec<f64> = (0..6).map(|i| -0.3 + 0.2 * i as f64).collect();
    for kk in 0..3 {
        layer.gamma.value.data_mut()[kk * 6..(kk + 1) * 6].copy_from_slice(&gamma_star);
        layer.beta.value.data_mut()[kk * 6..(kk + 1) * 6].copy_from_slice(&beta_star);
    }
    let mut bn = BatchNorm::with_affine("bn", gamma_star, beta_star, 1e-5, 0.1).unwrap();
    let a = layer.forward(&x, &ForwardCtx::train(1.0)).unwrap();
    let b = bn.forward(&x, Mode::Train).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() <= 1e-12);
    }
}

#[test]
fn one_hot_attention_makes_soft_and_hard_identical() {
    let x = random(&[3, 4, 5, 5], 14, 2.0);
    let mut soft = sepbn(4, 3, 2, 3, Aggregation::Soft, 15);
    randomize_attention(&mut soft, 16);
    // logit gaps far beyond exp underflow make the softmax exactly one-hot
    for v in soft.att_fc2.weight.value.data_mut() {
        *v = 0.0;
    }
    soft.att_fc2.bias.value.data_mut().copy_from_slice(&[0.0, 2000.0, 0.0, 2000.0, 0.0, 0.0]);
    let mut hard = soft.clone();
    hard.aggregation = Aggregation::Hard;
    let pi = soft.attention(&x, 1.0).unwrap();
    assert!(pi.data().iter().all(|&p| p == 0.0 || p == 1.0));
    let a = soft.forward(&x, &ForwardCtx::train(1.0)).unwrap();
    let b = hard.forward(&x, &ForwardCtx::train(1.0)).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn hard_mode_uses_the_argmax_set() {
    let x = random(&[3, 4, 5, 5], 17, 2.0);
    let mut layer = sepbn(4, 3, 2, 3, Aggregation::Hard, 18);
    randomize_attention(&mut layer, 19);
    let pi = layer.attention(&x, 1.0).unwrap();
    let y = layer.forward(&x, &ForwardCtx::train(1.0)).unwrap();
    let (mean, var) = channel_stats(&x).unwrap();
    for s in 0..3 {
        for ch in 0..4 {
            let row = &pi.data()[(s * 2 + ch / 2) * 3..(s * 2 + ch / 2 + 1) * 3];
            let best = (0..3).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            let (g, b) = (layer.gamma.value.data()[best * 4 + ch], layer.beta.value.data()[best * 4 + ch]);
            let idx = (s * 4 + ch) * 25;
            let xhat = (x.data()[idx] - mean[ch]) / (var[ch] + 1e-5).sqrt();
            assert!((y.data()[idx] - (g * xhat + b)).abs() < 1e-12);
        }
    }
    // no gradient reaches the attention path
    layer.backward(&Tensor::filled(y.shape(), 1.0)).unwrap();
    assert!(layer.att_fc2.weight.grad().is_empty() || layer.att_fc2.weight.grad().iter().all(|&g| g == 0.0));
}

#[test]
fn brute_force_statistics_match_filtered_oracle() {
    let mut layer = BruteForceSepBn::new("bf", 2, 2, 1e-5, 0.1).unwrap();
    let mut x = random(&[6, 2, 2, 2], 20, 1.0);
    let labels = vec![0, 1, 0, 1, 1, 0];
    for (s, &d) in labels.iter().enumerate() {
        for v in &mut x.data_mut()[s * 8..(s + 1) * 8] {
            *v += if d == 0 { 0.0 } else { 10.0 };
        }
    }
    layer.forward(&x, &ForwardCtx::train(1.0).with_domains(Some(labels.clone()))).unwrap();
    for d in 0..2 {
        let idx: Vec<usize> = (0..6).filter(|&s| labels[s] == d).collect();
        let (mean, var) = channel_stats(&x.gather_rows(&idx)).unwrap();
        for ch in 0..2 {
            assert!((layer.branches[d].stats().mean[ch] - 0.1 * mean[ch]).abs() < 1e-12);
            assert!((layer.branches[d].stats().var[ch] - (0.9 + 0.1 * var[ch])).abs() < 1e-12);
        }
    }
    assert!(layer.branches[0].stats().mean[0] < 0.1);
    assert!(layer.branches[1].stats().mean[0] > 0.9);
}

struct NormProbe {
    layer: NormLayer,
    input: Tensor,
    proj: Tensor,
    ctx: ForwardCtx,
}

impl NormProbe {
    fn new(layer: NormLayer, shape: &[usize], ctx: ForwardCtx, seed: u64) -> Self {
        NormProbe { layer, input: random(shape, seed, 2.0), proj: random(shape, seed + 1, 1.0), ctx }
    }

    fn input_grad_error(&mut self) -> f64 {
        self.loss().unwrap();
        let dx = self.layer.backward(&self.proj).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..self.input.numel() {
            let orig = self.input.data()[i];
            self.input.data_mut()[i] = orig + h;
            let p = self.loss().unwrap();
            self.input.data_mut()[i] = orig - h;
            let m = self.loss().unwrap();
            self.input.data_mut()[i] = orig;
            let num = (p - m) / (2.0 * h);
            let a = dx.data()[i];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-7));
        }
        worst
    }
}

impl Differentiable for NormProbe {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layer.params_mut()
    }

    fn loss(&mut self) -> sepbn_core::Result<f64> {
        let y = self.layer.forward(&self.input, &self.ctx)?;
        Ok(y.data().iter().zip(self.proj.data()).map(|(a, b)| a * b).sum())
    }

    fn backward(&mut self) -> sepbn_core::Result<()> {
        self.layer.backward(&self.proj).map(|_| ())
    }
}

fn check_layer(layer: NormLayer, shape: &[usize], ctx: ForwardCtx, seed: u64) {
    let mut probe = NormProbe::new(layer, shape, ctx, seed);
    let report = grad_check(&mut probe, &GradCheckOptions::default()).unwrap();
    assert!(report.passed(), "{report:?}");
    let dx_err = probe.input_grad_error();
    assert!(dx_err <= 1e-4, "input gradient error {dx_err}");
}

#[test]
fn batch_norm_gradients() {
    for mode in [Mode::Train, Mode::Eval] {
        let layer = NormLayer::Bn(BatchNorm::with_affine("bn", vec![1.5, 0.5, 2.0], vec![0.1, 0.2, 0.3], 1e-5, 0.1).unwrap());
        check_layer(layer, &[3, 3, 2, 2], ForwardCtx { mode, ..ForwardCtx::train(1.0) }, 30);
    }
}

#[test]
fn brute_force_gradients() {
    let layer = NormLayer::BruteForce(BruteForceSepBn::new("bf", 2, 3, 1e-5, 0.1).unwrap());
    let ctx = ForwardCtx::train(1.0).with_domains(Some(vec![0, 2, 0, 2, 1, 1]));
    check_layer(layer, &[6, 2, 2, 2], ctx, 31);
}

#[test]
fn simple_sepbn_gradients() {
    let mut l = SimpleSepBn::new("s", 8, 3, 4, 1e-5, 0.1, 0.1, &mut rng::stream(32, &[])).unwrap();
    for v in l.beta.value.data_mut() {
        *v = 0.3;
    }
    l.beta.value.data_mut()[3] = -0.4;
    check_layer(NormLayer::Simple(l), &[3, 8, 3, 3], ForwardCtx::train(0.8), 33);
}

#[test]
fn sepbn_soft_gradients() {
    for mode in [Mode::Train, Mode::Eval] {
        let mut l = sepbn(4, 3, 2, 3, Aggregation::Soft, 34);
        randomize_attention(&mut l, 35);
        check_layer(NormLayer::SepBn(l), &[3, 4, 5, 4], ForwardCtx { mode, ..ForwardCtx::train(1.3) }, 36);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_lies_on_simplex(seed in 0u64..10_000, tau in 0.05f64..50.0) {
        let x = random(&[2, 4, 5, 5], seed, 4.0);
        let mut layer = sepbn(4, 3, 2, 3, Aggregation::Soft, seed);
        randomize_attention(&mut layer, seed + 1);
        let pi = layer.attention(&x, tau).unwrap();
        for row in pi.data().chunks(3) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let mut simple = SimpleSepBn::new("s", 4, 3, 2, 1e-5, 0.1, 0.1, &mut rng::stream(seed, &[3])).unwrap();
        let lambda = simple.attention(&x, tau).unwrap();
        for row in lambda.data().chunks(3) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn argmax_is_stable_under_temperature(seed in 0u64..10_000, tau in 0.01f64..100.0) {
        let x = random(&[2, 4, 5, 5], seed, 4.0);
        let mut layer = sepbn(4, 3, 2, 3, Aggregation::Soft, seed);
        randomize_attention(&mut layer, seed + 1);
        let argmax = |t: &Tensor| -> Vec<usize> {
            t.data().chunks(3).map(|r| (0..3).fold(0, |b, i| if r[i] > r[b] { i } else { b })).collect()
        };
        let a = argmax(&layer.attention(&x, 1.0).unwrap());
        let b = argmax(&layer.attention(&x, tau).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mapping_with_convex_weights_of_equal_sets_is_exact(seed in 0u64..10_000) {
        let xhat = random(&[2, 4, 2, 2], seed, 2.0);
        let g = random(&[1, 4], seed + 1, 1.0);
        let b = random(&[1, 4], seed + 2, 1.0);
        let mut gamma = g.data().to_vec();
        gamma.extend_from_slice(g.data());
        let mut beta = b.data().to_vec();
        beta.extend_from_slice(b.data());
        let gamma = Tensor::new(vec![2, 4], gamma).unwrap();
        let beta = Tensor::new(vec![2, 4], beta).unwrap();
        let w = rng::stream(seed, &[4]).random_range(0.0..1.0);
        let mix = Tensor::new(vec![2, 2, 2], vec![w, 1.0 - w, 1.0 - w, w, 0.5, 0.5, 1.0, 0.0]).unwrap();
        let one = Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let (y1, _) = apply_mapping(&xhat, &gamma, &beta, &mix).unwrap();
        let (y2, _) = apply_mapping(&xhat, &gamma, &beta, &one).unwrap();
        for (u, v) in y1.data().iter().zip(y2.data()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }
}
