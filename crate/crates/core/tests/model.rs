use sepbn_core::model::{
    network_grad_check, perturb_zero_weights, BackboneConfig, HeadSpec, MultiHeadConfig, NormKind, VanillaConfig,
};
use sepbn_core::norm::SepBnParams;
use sepbn_core::tensor::GradCheckOptions;
use sepbn_core::{rng, Error, ForwardCtx, MultiHeadNet, Param, Regressor, Tensor, VanillaCnn};
use rand::Rng;

fn images(n: usize, s: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, &[]);
    let data = (0..n * 3 * s * s).map(|_| r.random_range(0.0..1.0)).collect();
    Tensor::new(vec![n, 3, s, s], data).unwrap()
}

fn norm_params(kind: NormKind, c: usize, p: &SepBnParams) -> usize {
    let (k, g, t, r) = (p.k, p.g, p.t, p.reduction);
    match kind {
        NormKind::Bn => 2 * c,
        NormKind::BruteForce => k * 2 * c,
        NormKind::Simple => 2 * k * c + (c * (c / r) + c / r) + (c / r * k + k),
        NormKind::SepBn => {
            let gtt = g * t * t;
            2 * k * c + (g * c + g) + (gtt * gtt + gtt) + (gtt * g * k + g * k)
        }
    }
}

fn closed_form_count(cfg: &VanillaConfig) -> usize {
    let b = &cfg.backbone;
    let mut total = 0;
    let mut cin = 3;
    for (&c, &kind) in b.base_channels.iter().zip(&b.norm_mask) {
        total += 9 * cin * c + c + norm_params(kind, c, &b.sepbn);
        cin = c;
    }
    let flat = cin * (b.input_size >> b.base_channels.len()).pow(2);
    total + flat * cfg.hidden + cfg.hidden + cfg.hidden * 2 * cfg.landmarks + 2 * cfg.landmarks
}

#[test]
fn desk_parameter_count_matches_closed_form() {
    for kind in [NormKind::Bn, NormKind::SepBn, NormKind::BruteForce, NormKind::Simple] {
        let cfg = VanillaConfig::desk(5, kind);
        let net = VanillaCnn::new(cfg.clone(), 1).unwrap();
        assert_eq!(net.param_count(), closed_form_count(&cfg), "{kind:?}");
    }
    // BN hand count: convs 224+1168+4640+18496, BN 240, head 131200+1290
    assert_eq!(VanillaCnn::new(VanillaConfig::desk(5, NormKind::Bn), 1).unwrap().param_count(), 157_258);
}

#[test]
fn desk_output_shape_and_zero_start() {
    let mut net = VanillaCnn::new(VanillaConfig::desk(5, NormKind::SepBn), 2).unwrap();
    let y = net.forward(&images(8, 64, 3), &ForwardCtx::train(1.0)).unwrap();
    assert_eq!(y.shape(), &[8, 10]);
    let zero = Tensor::zeros(&[1, 3, 64, 64]);
    let y = net.forward(&zero, &ForwardCtx::eval(1.0)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn full_network_stage_shapes() {
    let cfg = VanillaConfig::full(19, NormKind::Bn);
    let mut net = VanillaCnn::new(cfg, 4).unwrap();
    let ctx = ForwardCtx::eval(1.0);
    let mut x = images(1, 128, 5);
    let expected = [(64, 64), (128, 32), (256, 16), (512, 8), (1024, 4), (2048, 2)];
    for (stage, &(c, s)) in net.backbone.stages.iter_mut().zip(&expected) {
        x = stage.forward(&x, &ctx).unwrap();
        assert_eq!(x.shape(), &[1, c, s, s]);
    }
    assert_eq!(x.numel(), 8192);
    let y = net.forward(&images(1, 128, 5), &ctx).unwrap();
    assert_eq!(y.shape(), &[1, 38]);
}

#[test]
fn late_stage_sepbn_mask() {
    let mut cfg = VanillaConfig::full(5, NormKind::Bn);
    cfg.backbone.norm_mask[4] = NormKind::SepBn;
    cfg.backbone.norm_mask[5] = NormKind::SepBn;
    cfg.validate().unwrap();
    let mut bad = cfg.clone();
    bad.backbone.norm_mask.pop();
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn wrong_spatial_size_is_dimension_error() {
    let mut net = VanillaCnn::new(VanillaConfig::desk(5, NormKind::Bn), 1).unwrap();
    let err = net.forward(&images(1, 32, 1), &ForwardCtx::eval(1.0)).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn input_size_must_divide_by_stage_count() {
    let mut cfg = VanillaConfig::desk(5, NormKind::Bn);
    cfg.backbone.input_size = 40;
    assert!(matches!(VanillaCnn::new(cfg, 0), Err(Error::Config(_))));
}

fn trained_like(kind: NormKind, seed: u64) -> VanillaCnn {
    let mut net = VanillaCnn::new(VanillaConfig::desk(5, kind), seed).unwrap();
    perturb_zero_weights(net.params_mut(), 0.05, seed);
    let ctx = ForwardCtx::train(1.0).with_domains(Some(vec![0, 1, 2, 0]));
    for i in 0..3 {
        net.forward(&images(4, 64, seed + i), &ctx).unwrap();
    }
    net
}

#[test]
fn eval_output_independent_of_batch() {
    for kind in [NormKind::Bn, NormKind::SepBn, NormKind::Simple] {
        let mut net = trained_like(kind, 10);
        let ctx = ForwardCtx::eval(1.0);
        let x = images(5, 64, 11);
        let batched = net.forward(&x, &ctx).unwrap();
        for i in 0..5 {
            let single = net.forward(&x.gather_rows(&[i]), &ctx).unwrap();
            for (a, b) in single.data().iter().zip(&batched.data()[i * 10..(i + 1) * 10]) {
                assert!((a - b).abs() <= 1e-12, "{kind:?}: {a} vs {b}");
            }
        }
    }
}

fn small(kind: NormKind) -> VanillaConfig {
    let mut cfg = VanillaConfig::desk(3, kind);
    cfg.backbone.input_size = 32;
    cfg.backbone.sepbn.k = 2;
    cfg.hidden = 16;
    cfg
}

#[test]
fn whole_network_grad_check() {
    let opts = GradCheckOptions { max_elements_per_layer: 24, ..GradCheckOptions::default() };
    for (i, kind) in [NormKind::Bn, NormKind::SepBn, NormKind::BruteForce, NormKind::Simple].into_iter().enumerate() {
        let mut net = VanillaCnn::new(small(kind), 20 + i as u64).unwrap();
        perturb_zero_weights(net.params_mut(), 0.3, 7);
        let ctx = ForwardCtx::train(1.0).with_domains(Some(vec![0, 1, 1]));
        let report = network_grad_check(&mut net, &images(3, 32, 40), &ctx, &opts).unwrap();
        assert!(report.passed(), "{kind:?}: {:?}", report.layers);
    }
}

fn multihead(heads: &[(&str, usize)]) -> MultiHeadConfig {
    let mut backbone = BackboneConfig::desk(NormKind::SepBn);
    backbone.input_size = 32;
    MultiHeadConfig {
        backbone,
        hidden: 16,
        heads: heads.iter().map(|&(id, l)| HeadSpec { id: id.into(), landmarks: l }).collect(),
    }
}

#[test]
fn multihead_output_lengths() {
    let mut net = MultiHeadNet::new(multihead(&[("a19", 19), ("w98", 98)]), 3).unwrap();
    let x = images(2, 32, 1);
    let ctx = ForwardCtx::train(1.0);
    assert_eq!(net.forward_head(&x, "a19", &ctx).unwrap().shape(), &[2, 38]);
    assert_eq!(net.forward_head(&x, "w98", &ctx).unwrap().shape(), &[2, 196]);
    assert!(matches!(net.forward_head(&x, "cofw", &ctx), Err(Error::Routing(_))));
}

#[test]
fn multihead_config_errors() {
    assert!(matches!(MultiHeadNet::new(multihead(&[("a", 5)]), 0), Err(Error::Config(_))));
    assert!(matches!(MultiHeadNet::new(multihead(&[("a", 5), ("a", 9)]), 0), Err(Error::Config(_))));
}

fn snapshot(params: Vec<&Param>) -> Vec<(String, Vec<f64>)> {
    params.into_iter().map(|p| (p.name.clone(), p.value.data().to_vec())).collect()
}

fn step(params: Vec<&mut Param>, lr: f64) {
    for p in params {
        let g = p.grad().to_vec();
        for (v, g) in p.value.data_mut().iter_mut().zip(g) {
            *v -= lr * g;
        }
    }
}

#[test]
fn head_isolation_and_backbone_sharing() {
    let mut net = MultiHeadNet::new(multihead(&[("a", 5), ("b", 9)]), 4).unwrap();
    perturb_zero_weights(net.all_params_mut(), 0.1, 1);
    let x = images(2, 32, 2);
    let ctx = ForwardCtx::eval(1.0);
    let before_b = net.forward_head(&x, "b", &ctx).unwrap();
    let head_b = snapshot(net.head("b").unwrap().params());

    let mut a = net.select("a").unwrap();
    a.zero_grad();
    let y = a.forward(&x, &ForwardCtx::train(1.0)).unwrap();
    a.backward(&Tensor::filled(y.shape(), 1.0)).unwrap();
    step(a.params_mut(), 0.1);

    assert_eq!(snapshot(net.head("b").unwrap().params()), head_b);
    let after_b = net.forward_head(&x, "b", &ctx).unwrap();
    assert_ne!(before_b.data(), after_b.data());
}

#[test]
fn backbone_gradient_sums_over_routed_samples() {
    let mut net = MultiHeadNet::new(multihead(&[("a", 5), ("b", 9)]), 5).unwrap();
    perturb_zero_weights(net.all_params_mut(), 0.1, 2);
    let ctx = ForwardCtx::eval(1.0);
    let xa = images(2, 32, 3);
    let xb = images(2, 32, 4);

    let backward = |net: &mut MultiHeadNet, x: &Tensor, id: &str| {
        let y = net.forward_head(x, id, &ctx).unwrap();
        let g = sepbn_core::model::projection_for(y.shape()[0], y.shape()[1], 9);
        net.backward_head(&g).unwrap();
    };

    for p in net.all_params_mut() {
        p.zero_grad();
    }
    backward(&mut net, &xa, "a");
    backward(&mut net, &xb, "b");
    let batched: Vec<Vec<f64>> = net.backbone.params().iter().map(|p| p.grad().to_vec()).collect();

    let mut summed: Vec<Vec<f64>> = batched.iter().map(|g| vec![0.0; g.len()]).collect();
    for (x, id) in [(&xa, "a"), (&xb, "b")] {
        for i in 0..2 {
            for p in net.all_params_mut() {
                p.zero_grad();
            }
            let xi = x.gather_rows(&[i]);
            let y = net.forward_head(&xi, id, &ctx).unwrap();
            let g = sepbn_core::model::projection_for(2, y.shape()[1], 9).gather_rows(&[i]);
            net.backward_head(&g).unwrap();
            for (acc, p) in summed.iter_mut().zip(net.backbone.params()) {
                for (a, g) in acc.iter_mut().zip(p.grad()) {
                    *a += g;
                }
            }
        }
    }
    for (b, s) in batched.iter().zip(&summed) {
        for (x, y) in b.iter().zip(s) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn retain_head_keeps_target() {
    let mut net = MultiHeadNet::new(multihead(&[("a", 5), ("b", 9)]), 6).unwrap();
    net.retain_head("b").unwrap();
    assert_eq!(net.head_ids().collect::<Vec<_>>(), vec!["b"]);
    assert_eq!(net.select("b").unwrap().output_len(), 18);
    assert!(net.select("a").is_err());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = VanillaConfig::desk(5, NormKind::SepBn);
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<VanillaConfig>(&text).unwrap(), cfg);
    let bad = text.replacen("\"hidden\"", "\"hiden\"", 1);
    assert!(serde_json::from_str::<VanillaConfig>(&bad).is_err());
}
