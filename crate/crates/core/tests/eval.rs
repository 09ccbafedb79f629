use sepbn_core::data::{crop_resize, synth_protocol, synth_samples, BBox, Dataset, SynthConfig};
use sepbn_core::eval::{
    bruteforce_best_of_k, emit_report, evaluate, evaluate_branch, failure_rate, nme, nme_with, predict, read_report,
    EvalOptions, EvalReport, ReportFormat,
};
use sepbn_core::model::{perturb_zero_weights, to_raw};
use sepbn_core::norm::NormLayer;
use sepbn_core::{Error, ForwardCtx, NormKind, Param, Regressor, Result, Tensor, VanillaCnn, VanillaConfig};
use std::collections::VecDeque;

#[test]
fn nme_hand_case() {
    assert_eq!(nme_with(&[[3.0, 4.0]], &[[0.0, 0.0]], 10.0).unwrap(), 50.0);
    assert_eq!(nme_with(&[[1.0, 2.0]], &[[1.0, 2.0]], 10.0).unwrap(), 0.0);
}

#[test]
fn failure_rate_counts_strictly_above_threshold() {
    assert_eq!(failure_rate(&[1.0, 2.0, 12.0, 9.0], 10.0).unwrap(), 25.0);
    assert_eq!(failure_rate(&[1.0, 10.0], 10.0).unwrap(), 0.0);
    assert!(matches!(failure_rate(&[], 10.0), Err(Error::UndefinedRate(_))));
}

#[test]
fn normalizers_follow_the_protocol() {
    let bbox = BBox { x: 0.0, y: 0.0, w: 16.0, h: 4.0 };
    // 9-point synth protocol normalizes by sqrt(w*h) = 8
    let p9 = synth_protocol("p9", 9).unwrap();
    let gt9 = vec![[0.0, 0.0]; 9];
    let mut pred9 = gt9.clone();
    pred9[0] = [8.0 * 9.0, 0.0];
    assert!((nme(&pred9, &gt9, &p9, &bbox).unwrap() - 100.0).abs() < 1e-12);

    // 5-point uses the eye distance
    let p5 = synth_protocol("p5", 5).unwrap();
    let gt5 = vec![[0.0, 0.0], [20.0, 0.0], [10.0, 5.0], [5.0, 10.0], [15.0, 10.0]];
    let pred5: Vec<[f64; 2]> = gt5.iter().map(|p| [p[0] + 2.0, p[1]]).collect();
    assert!((nme(&pred5, &gt5, &p5, &bbox).unwrap() - 10.0).abs() < 1e-12);

    let coincident = vec![[1.0, 1.0]; 5];
    assert!(matches!(nme(&coincident, &coincident, &p5, &bbox), Err(Error::ZeroNormalizer(_))));
}

#[test]
fn nme_is_translation_invariant_and_scales_inversely() {
    let gt = [[1.0, 2.0], [5.0, -1.0]];
    let pred = [[1.5, 2.5], [4.0, 0.0]];
    let a = nme_with(&pred, &gt, 4.0).unwrap();
    let shift = |v: &[[f64; 2]]| v.iter().map(|p| [p[0] + 7.25, p[1] - 3.5]).collect::<Vec<_>>();
    assert!((nme_with(&shift(&pred), &shift(&gt), 4.0).unwrap() - a).abs() < 1e-12);
    assert!((nme_with(&pred, &gt, 8.0).unwrap() - a / 2.0).abs() < 1e-12);
}

fn synth(n: usize, seed: u64) -> Dataset {
    synth_samples(&SynthConfig { n_samples: n, image_size: 48, seed, ..SynthConfig::default() }).unwrap()
}

fn small_net(kind: NormKind) -> VanillaCnn {
    let mut cfg = VanillaConfig::desk(5, kind);
    cfg.backbone.input_size = 32;
    cfg.hidden = 16;
    let mut net = VanillaCnn::new(cfg, 11).unwrap();
    perturb_zero_weights(net.params_mut(), 0.05, 3);
    net
}

/// Replays the ground-truth crop coordinates of each sample.
struct Oracle {
    size: usize,
    landmarks: usize,
    queue: VecDeque<Vec<f64>>,
}

impl Oracle {
    fn new(data: &Dataset, size: usize) -> Self {
        let queue = data
            .samples
            .iter()
            .map(|s| {
                let c = crop_resize(s, size).unwrap();
                c.landmarks.iter().flat_map(|p| [to_raw(p[0], size), to_raw(p[1], size)]).collect()
            })
            .collect();
        Oracle { size, landmarks: data.protocol.landmarks, queue }
    }
}

impl Regressor for Oracle {
    fn input_size(&self) -> usize {
        self.size
    }
    fn output_len(&self) -> usize {
        2 * self.landmarks
    }
    fn forward(&mut self, images: &Tensor, _: &ForwardCtx) -> Result<Tensor> {
        let n = images.shape()[0];
        let data: Vec<f64> = (0..n).flat_map(|_| self.queue.pop_front().unwrap()).collect();
        Tensor::new(vec![n, 2 * self.landmarks], data)
    }
    fn backward(&mut self, _: &Tensor) -> Result<()> {
        Ok(())
    }
    fn params(&self) -> Vec<&Param> {
        vec![]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![]
    }
    fn norm_layers(&self) -> Vec<&NormLayer> {
        vec![]
    }
    fn norm_layers_mut(&mut self) -> Vec<&mut NormLayer> {
        vec![]
    }
}

#[test]
fn ground_truth_stub_scores_zero() {
    let data = synth(20, 1);
    let mut stub = Oracle::new(&data, 32);
    let r = evaluate(&mut stub, &data, &EvalOptions { batch_size: 7, ..EvalOptions::default() }).unwrap();
    assert!(r.nme < 1e-9, "{}", r.nme);
    assert_eq!(r.failure_rate, 0.0);
    assert_eq!(r.samples, 20);
}

#[test]
fn protocol_mismatch_is_a_config_error() {
    let data = synth_samples(&SynthConfig { n_samples: 4, image_size: 48, landmarks: 9, ..SynthConfig::default() }).unwrap();
    let mut net = small_net(NormKind::Bn);
    assert!(matches!(evaluate(&mut net, &data, &EvalOptions::default()), Err(Error::Config(_))));
}

#[test]
fn report_matches_direct_recomputation() {
    let data = synth(30, 2);
    let mut net = small_net(NormKind::Bn);
    let opts = EvalOptions::default();
    let report = evaluate(&mut net, &data, &opts).unwrap();
    let preds = predict(&mut net, &data, &opts, None).unwrap();
    let mut per_sample = Vec::new();
    for (s, p) in data.samples.iter().zip(&preds) {
        let (l, r) = (s.landmarks[0], s.landmarks[1]);
        let d = ((l[0] - r[0]).powi(2) + (l[1] - r[1]).powi(2)).sqrt();
        let err: f64 = p.iter().zip(&s.landmarks).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).sum();
        per_sample.push(err / s.landmarks.len() as f64 / d * 100.0);
    }
    for (a, b) in report.per_sample.iter().zip(&per_sample) {
        assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
    }
    let fails = per_sample.iter().filter(|&&e| e > 10.0).count() as f64 * 100.0 / 30.0;
    assert!((report.failure_rate - fails).abs() < 1e-12);
}

#[test]
fn per_domain_nmes_recombine_to_overall() {
    let data = synth(45, 3);
    let mut net = small_net(NormKind::SepBn);
    let r = evaluate(&mut net, &data, &EvalOptions::default()).unwrap();
    assert_eq!(r.per_domain.iter().map(|d| d.samples).sum::<usize>(), r.samples);
    let weighted: f64 = r.per_domain.iter().map(|d| d.nme * d.samples as f64).sum::<f64>() / r.samples as f64;
    assert!((weighted - r.nme).abs() < 1e-10);
}

#[test]
fn best_of_k_is_a_per_sample_minimum() {
    let data = synth(24, 4);
    let mut net = small_net(NormKind::BruteForce);
    // one routed train-mode pass so the branches' running statistics differ
    let crops: Vec<_> = data.samples.iter().map(|s| crop_resize(s, 32).unwrap()).collect();
    let images = sepbn_core::eval::stack_images(&crops).unwrap();
    let domains = data.samples.iter().map(|s| s.domain).collect::<Option<Vec<_>>>();
    net.forward(&images, &ForwardCtx::train(1.0).with_domains(domains)).unwrap();
    let opts = EvalOptions::default();
    let best = bruteforce_best_of_k(&mut net, &data, &opts).unwrap();
    assert!(best.oracle_assisted);
    let k = net.brute_force_branches().unwrap();
    assert_eq!(k, 3);
    let mut any_differs = false;
    let branch0 = evaluate_branch(&mut net, &data, &opts, 0).unwrap();
    for b in 0..k {
        let r = evaluate_branch(&mut net, &data, &opts, b).unwrap();
        for (x, y) in best.per_sample.iter().zip(&r.per_sample) {
            assert!(x <= y);
        }
        assert!(best.nme <= r.nme);
        any_differs |= r.per_sample != branch0.per_sample;
    }
    assert!(any_differs, "branches should give different predictions");
}

#[test]
fn best_of_k_without_branches_equals_evaluate() {
    let data = synth(10, 5);
    let mut net = small_net(NormKind::Bn);
    let opts = EvalOptions::default();
    let a = evaluate(&mut net, &data, &opts).unwrap();
    let b = bruteforce_best_of_k(&mut net, &data, &opts).unwrap();
    assert_eq!(a, b);
    assert!(!b.oracle_assisted);
}

fn sample_report() -> EvalReport {
    let domains = [Some(0), Some(1), Some(1), None];
    let mut r = EvalReport::from_samples("synth5", vec![0.1, 1.0 / 3.0, 12.5, 2.0_f64.sqrt()], &domains, 10.0, false).unwrap();
    r.config = serde_json::json!({"seed": 7});
    r
}

#[test]
fn json_report_round_trips_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let r = sample_report();
    emit_report(&r, &path, ReportFormat::from_path(&path)).unwrap();
    assert_eq!(read_report(&path).unwrap(), r);
    let text = std::fs::read_to_string(&path).unwrap();
    // 1/3 printed with 17 significant digits
    assert!(text.contains("3.3333333333333331e-1"), "{text}");
}

#[test]
fn csv_report_has_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    assert_eq!(ReportFormat::from_path(&path), ReportFormat::Csv);
    emit_report(&sample_report(), &path, ReportFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("metric,value,domain"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 3));
    assert!(rows.iter().any(|r| r[0] == "nme" && r[2].is_empty()));
    assert!(rows.iter().any(|r| r[0] == "nme" && r[2] == "1"));
}
