use gazelearn_core::data::augment::prepare_plain;
use gazelearn_core::data::manifest::{load_dataset, write_dataset, ManifestRecord};
use gazelearn_core::data::synth::{synth_generate, SynthConfig};
use gazelearn_core::eval::{
    evaluate_attention, evaluate_classifier, fixation_cells, metric_cc, metric_kld, metric_nss,
    predict_saliency, probe_features, probe_sweep, softmax_regression_fit, target_at_head,
    AttnEvalReport, AttnPredictor, AttnTask, ProbeConfig,
};
use gazelearn_core::model::{build_network, Mode, NetworkConfig};
use gazelearn_core::rng::RngStream;
use gazelearn_core::saliency::SaliencyConfig;
use gazelearn_core::tape::{BnMode, Tape};
use gazelearn_core::Tensor32;
use std::path::Path;

#[test]
fn l2_grid_is_sixteen_log_spaced_values() {
    let grid = ProbeConfig::default().l2_grid();
    assert_eq!(grid.len(), 16);
    assert!((grid[0] - 1e-5).abs() < 1e-17);
    assert!((grid[15] - 10.0).abs() < 1e-12);
    let ratio = grid[1] / grid[0];
    for pair in grid.windows(2) {
        assert!((pair[1] / pair[0] - ratio).abs() < 1e-9);
    }
}

fn separable_data() -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = RngStream::new(5, 0);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..20 {
        x.push(vec![-2.0 - rng.uniform(), rng.uniform()]);
        y.push(0);
        x.push(vec![2.0 + rng.uniform(), rng.uniform()]);
        y.push(1);
    }
    (x, y)
}

#[test]
fn separable_data_is_fit_perfectly() {
    let (x, y) = separable_data();
    let cfg = ProbeConfig { max_iter: 5000, tol: 1e-6 };
    let model = softmax_regression_fit(&x, &y, 2, 1e-5, &cfg).unwrap();
    let correct = x.iter().zip(&y).filter(|(xi, &yi)| model.predict(xi) == yi).count();
    assert_eq!(correct, x.len());
}

#[test]
fn huge_l2_crushes_weights_to_uniform_predictions() {
    let (x, y) = separable_data();
    let model = softmax_regression_fit(&x, &y, 2, 1e6, &ProbeConfig::default()).unwrap();
    let wmax = model.weights.iter().flatten().fold(0.0f64, |m, &v| m.max(v.abs()));
    assert!(wmax < 1e-3, "weights {wmax} survived l2=1e6");
    let p = model.predict_probs(&x[0]);
    assert!((p[0] - 0.5).abs() < 1e-3 && (p[1] - 0.5).abs() < 1e-3);
}

#[test]
fn optimum_matches_an_independent_descent_run() {
    // small 3-class problem; both solvers must land on the same convex optimum
    let mut rng = RngStream::new(6, 0);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..21 {
        let c = i % 3;
        let center = [(0.0, 1.0), (1.0, -1.0), (-1.0, 0.0)][c];
        x.push(vec![
            center.0 + 0.6 * rng.normal(),
            center.1 + 0.6 * rng.normal(),
            rng.normal(),
        ]);
        y.push(c);
    }
    let l2 = 0.1;
    let n = x.len() as f64;
    let counts = [7.0, 7.0, 7.0];
    let weight = |c: usize| n / (3.0 * counts[c]);
    let objective = |w: &[f64], b: &[f64]| -> f64 {
        let mut loss = 0.0;
        for (xi, &yi) in x.iter().zip(&y) {
            let z: Vec<f64> = (0..3)
                .map(|c| {
                    xi.iter().zip(&w[c * 3..(c + 1) * 3]).map(|(&a, &b)| a * b).sum::<f64>() + b[c]
                })
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            loss += weight(yi) * (lse - z[yi]);
        }
        loss / n + 0.5 * l2 * w.iter().map(|&v| v * v).sum::<f64>()
    };

    let model = softmax_regression_fit(&x, &y, 3, l2, &ProbeConfig::default()).unwrap();
    let flat_w: Vec<f64> = model.weights.iter().flatten().cloned().collect();
    let lbfgs_loss = objective(&flat_w, &model.bias);

    // plain gradient descent with a fixed small step
    let mut w = vec![0.0f64; 9];
    let mut b = vec![0.0f64; 3];
    for _ in 0..200_000 {
        let mut gw = vec![0.0f64; 9];
        let mut gb = vec![0.0f64; 3];
        for (xi, &yi) in x.iter().zip(&y) {
            let z: Vec<f64> = (0..3)
                .map(|c| {
                    xi.iter().zip(&w[c * 3..(c + 1) * 3]).map(|(&a, &bb)| a * bb).sum::<f64>()
                        + b[c]
                })
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for c in 0..3 {
                let p = (z[c] - lse).exp();
                let coef = weight(yi) * (p - if c == yi { 1.0 } else { 0.0 }) / n;
                for (g, &xv) in gw[c * 3..(c + 1) * 3].iter_mut().zip(xi) {
                    *g += coef * xv;
                }
                gb[c] += coef;
            }
        }
        for (g, &wv) in gw.iter_mut().zip(&w) {
            *g += l2 * wv;
        }
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= 0.2 * g;
        }
        for (bv, g) in b.iter_mut().zip(&gb) {
            *bv -= 0.2 * g;
        }
    }
    let gd_loss = objective(&w, &b);
    assert!(
        (lbfgs_loss - gd_loss).abs() < 1e-6,
        "solvers disagree: {lbfgs_loss} vs {gd_loss}"
    );
}

#[test]
fn nonconvergence_is_reported() {
    let (x, y) = separable_data();
    let cfg = ProbeConfig { max_iter: 1, tol: 1e-12 };
    let err = softmax_regression_fit(&x, &y, 2, 0.01, &cfg).err().unwrap();
    assert!(err.to_string().contains("converge"), "{err}");
}

#[test]
fn degenerate_label_sets_are_rejected() {
    let x = vec![vec![1.0], vec![2.0]];
    assert!(softmax_regression_fit(&x, &[0, 0], 2, 0.1, &ProbeConfig::default()).is_err());
    assert!(softmax_regression_fit(&x, &[0], 2, 0.1, &ProbeConfig::default()).is_err());
    assert!(softmax_regression_fit(&x, &[0, 1], 2, -1.0, &ProbeConfig::default()).is_err());
}

fn small_synth(dir: &Path, seed: u64) -> gazelearn_core::data::manifest::DatasetManifest {
    let cfg = SynthConfig {
        scans: 7,
        frames_per_scan: 48,
        height: 64,
        width: 80,
        seed,
        ..Default::default()
    };
    synth_generate(dir, &cfg).unwrap();
    load_dataset(dir).unwrap()
}

#[test]
fn probe_features_are_pooled_activations() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_synth(dir.path(), 21);
    let net = build_network::<f32>(&NetworkConfig::mini(ds.classes.len(), 3)).unwrap();

    let (vecs, labels) = probe_features(&net, "stage2", &ds).unwrap();
    let n_labeled = ds.records.iter().filter(|r| r.label.is_some()).count();
    assert_eq!(vecs.len(), n_labeled);
    assert_eq!(labels.len(), n_labeled);
    assert!(vecs.iter().all(|v| v.len() == 16));
    assert!(labels.iter().all(|&l| l < ds.classes.len()));

    // deterministic across calls
    let (again, _) = probe_features(&net, "stage2", &ds).unwrap();
    assert_eq!(vecs, again);

    // oracle: recompute the first labeled frame's pooled vector by hand
    let first = ds.records.iter().position(|r| r.label.is_some()).unwrap();
    let sample = ds.load_frame(first).unwrap();
    let (image, _) = prepare_plain(&sample, 64, 80).unwrap();
    let mut tape = Tape::new(false);
    let vars = net.make_leaves(&mut tape);
    let x = tape.leaf(image);
    let out = net.forward_features(&mut tape, &vars, x, BnMode::Eval).unwrap();
    let map = tape.value(out.probes[1].1);
    let (c, h, w) = map.dims3().unwrap();
    for ch in 0..c {
        let mean = map.data()[ch * h * w..(ch + 1) * h * w]
            .iter()
            .map(|&v| v as f64)
            .sum::<f64>()
            / (h * w) as f64;
        assert!((vecs[0][ch] - mean).abs() < 1e-12);
    }

    let err = probe_features(&net, "stage9", &ds).err().unwrap();
    assert!(err.to_string().contains("stage1"), "{err}");
}

/// Frames whose bright-square size encodes the class; the pattern survives
/// per-image normalization, unlike a global brightness level. Every split is
/// the same directory.
fn pattern_dataset(dir: &Path, classes: &[String]) -> gazelearn_core::data::manifest::DatasetManifest {
    let mut records = Vec::new();
    std::fs::create_dir_all(dir.join("frames")).unwrap();
    for (ci, class) in classes.iter().enumerate() {
        for copy in 0..4 {
            let side = 6 + 6 * ci;
            let mut img = Tensor32::full(vec![1, 32, 40], 0.1);
            for i in 0..side.min(32) {
                for j in 0..side.min(40) {
                    img.data_mut()[(16 - side.min(32) / 2 + i).min(31) * 40
                        + (20 - side.min(40) / 2 + j).min(39)] = 0.9;
                }
            }
            let name = format!("frames/c{ci}_{copy}.pgm");
            gazelearn_core::data::manifest::save_frame_pgm(dir.join(&name), &img).unwrap();
            records.push(ManifestRecord {
                image: name,
                scan: format!("scan{ci}"),
                frame: copy,
                gaze: vec![[0.5, 0.5]],
                label: Some(class.clone()),
            });
        }
    }
    write_dataset(dir, &records, classes).unwrap();
    load_dataset(dir).unwrap()
}

#[test]
fn probe_sweep_separates_pattern_classes() {
    let classes: Vec<String> =
        ["a", "b", "c", "bg"].iter().map(|s| s.to_string()).collect();
    let dir = tempfile::tempdir().unwrap();
    let ds = pattern_dataset(dir.path(), &classes);
    let cfg = NetworkConfig {
        input: (32, 40),
        ..NetworkConfig::mini(classes.len(), 11)
    };
    let net = build_network::<f32>(&cfg).unwrap();
    let layers = vec!["stage2".to_string(), "stage3".to_string()];
    let reports =
        probe_sweep(&net, &layers, &ds, &ds, &ds, &ProbeConfig::default()).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        // four distinct constant inputs are linearly separable in feature space
        assert!(r.test.macro_f1 > 0.95, "{} scored {}", r.layer, r.test.macro_f1);
        assert!(ProbeConfig::default().l2_grid().contains(&r.selected_l2));
    }
}

#[test]
fn probe_sweep_breaks_ties_toward_stronger_regularization() {
    // a validation split holding only background rows scores macro-F1 = 0 for
    // every possible model, so all 16 grid values tie and the strongest
    // regularization must win
    let classes: Vec<String> = ["a", "b", "bg"].iter().map(|s| s.to_string()).collect();
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("frames")).unwrap();
    let img = Tensor32::full(vec![1, 32, 40], 0.5);
    gazelearn_core::data::manifest::save_frame_pgm(dir.path().join("frames/x.pgm"), &img).unwrap();
    let rows = |labels: &[&str]| -> Vec<ManifestRecord> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| ManifestRecord {
                image: "frames/x.pgm".into(),
                scan: format!("scan{l}"),
                frame: i,
                gaze: vec![[0.5, 0.5]],
                label: Some(l.to_string()),
            })
            .collect()
    };
    write_dataset(dir.path(), &rows(&["a", "a", "b", "b", "bg", "bg"]), &classes).unwrap();
    let train = load_dataset(dir.path()).unwrap();
    let val_dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(val_dir.path().join("frames")).unwrap();
    gazelearn_core::data::manifest::save_frame_pgm(val_dir.path().join("frames/x.pgm"), &img)
        .unwrap();
    write_dataset(val_dir.path(), &rows(&["bg", "bg", "bg"]), &classes).unwrap();
    let val = load_dataset(val_dir.path()).unwrap();

    let cfg = NetworkConfig { input: (32, 40), ..NetworkConfig::mini(classes.len(), 4) };
    let net = build_network::<f32>(&cfg).unwrap();
    let reports = probe_sweep(
        &net,
        &["stage3".to_string()],
        &train,
        &val,
        &train,
        &ProbeConfig::default(),
    )
    .unwrap();
    assert_eq!(reports[0].selected_l2, 10.0);
    assert_eq!(reports[0].val_f1, 0.0);
}

// ---- attention evaluation -------------------------------------------------

fn single_point_dataset(dir: &Path) -> gazelearn_core::data::manifest::DatasetManifest {
    let classes = vec!["fg".to_string(), "bg".to_string()];
    std::fs::create_dir_all(dir.join("frames")).unwrap();
    let mut records = Vec::new();
    for i in 0..4 {
        let img = Tensor32::full(vec![1, 32, 40], 0.4);
        let name = format!("frames/f{i}.pgm");
        gazelearn_core::data::manifest::save_frame_pgm(dir.join(&name), &img).unwrap();
        records.push(ManifestRecord {
            image: name,
            scan: "s0".into(),
            frame: i,
            gaze: vec![[0.5, 0.5]],
            label: None,
        });
    }
    write_dataset(dir, &records, &classes).unwrap();
    load_dataset(dir).unwrap()
}

#[test]
fn perfect_static_predictor_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = single_point_dataset(dir.path());
    let scfg = SaliencyConfig { sigma_px: 4.0, truncation: 4.0 };
    let input = (32, 40);
    // every frame shares the same single gaze point, so the per-frame target
    // equals this map exactly
    let map = target_at_head(&[(20.0, 16.0)], input, 2, &scfg).unwrap();
    let pred = AttnPredictor::<f32>::StaticMap { map: &map, input };
    let AttnEvalReport::Saliency { n_frames, metrics } =
        evaluate_attention(&pred, &ds, AttnTask::Saliency, &scfg).unwrap()
    else {
        panic!("wrong task")
    };
    assert_eq!(n_frames, 4);
    assert!(metrics.kld.mean.abs() < 1e-12);
    assert!((metrics.cc.mean - 1.0).abs() < 1e-12);
    assert!((metrics.sim.mean - 1.0).abs() < 1e-12);
    assert!(metrics.nss.mean > 0.0);
    assert!(metrics.kld.std.abs() < 1e-12);
}

#[test]
fn perfect_static_point_scores_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = single_point_dataset(dir.path());
    let pred = AttnPredictor::<f32>::StaticPoint { point: (20.0, 16.0), input: (32, 40) };
    let scfg = SaliencyConfig::default();
    let AttnEvalReport::Gaze { n_frames, l2_px } =
        evaluate_attention(&pred, &ds, AttnTask::Gaze, &scfg).unwrap()
    else {
        panic!("wrong task")
    };
    assert_eq!(n_frames, 4);
    assert!(l2_px.mean < 1e-9);

    // task/predictor mismatches are rejected
    assert!(evaluate_attention(&pred, &ds, AttnTask::Saliency, &scfg).is_err());
    let map = target_at_head(&[(20.0, 16.0)], (32, 40), 2, &scfg).unwrap();
    let mp = AttnPredictor::<f32>::StaticMap { map: &map, input: (32, 40) };
    assert!(evaluate_attention(&mp, &ds, AttnTask::Gaze, &scfg).is_err());
}

#[test]
fn network_report_matches_per_frame_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_synth(dir.path(), 31);
    let mut net = build_network::<f32>(&NetworkConfig::mini(ds.classes.len(), 9)).unwrap();
    net.dilate_for_attention().unwrap();
    let scfg = SaliencyConfig { sigma_px: 3.0, truncation: 4.0 };

    let sub = gazelearn_core::data::manifest::DatasetManifest {
        root: ds.root.clone(),
        records: ds.records[..6].to_vec(),
        classes: ds.classes.clone(),
    };
    let pred = AttnPredictor::Network(&net);
    let AttnEvalReport::Saliency { n_frames, metrics } =
        evaluate_attention(&pred, &sub, AttnTask::Saliency, &scfg).unwrap()
    else {
        panic!("wrong task")
    };
    assert_eq!(n_frames, 6);

    let mut kld = Vec::new();
    let mut nss = Vec::new();
    let mut cc = Vec::new();
    for idx in 0..6 {
        let sample = sub.load_frame(idx).unwrap();
        let (image, gaze) = prepare_plain(&sample, 64, 80).unwrap();
        let shat = predict_saliency(&net, &image).unwrap();
        let star = target_at_head(&gaze, (64, 80), 2, &scfg).unwrap();
        let fix = fixation_cells(&gaze, 32, 40, 2);
        kld.push(metric_kld(star.grid(), shat.grid()).unwrap());
        nss.push(metric_nss(shat.grid(), 32, 40, &fix).unwrap());
        cc.push(metric_cc(star.grid(), shat.grid()).unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((metrics.kld.mean - mean(&kld)).abs() < 1e-12);
    assert!((metrics.nss.mean - mean(&nss)).abs() < 1e-12);
    assert!((metrics.cc.mean - mean(&cc)).abs() < 1e-12);

    let empty = gazelearn_core::data::manifest::DatasetManifest {
        root: ds.root.clone(),
        records: vec![],
        classes: ds.classes.clone(),
    };
    assert!(evaluate_attention(&pred, &empty, AttnTask::Saliency, &scfg).is_err());
}

#[test]
fn network_gaze_predictions_stay_in_frame() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_synth(dir.path(), 41);
    let mut net = build_network::<f32>(&NetworkConfig::mini(ds.classes.len(), 13)).unwrap();
    net.dilate_for_attention().unwrap();
    let sub = gazelearn_core::data::manifest::DatasetManifest {
        root: ds.root.clone(),
        records: ds.records[..5].to_vec(),
        classes: ds.classes.clone(),
    };
    let pred = AttnPredictor::Network(&net);
    let scfg = SaliencyConfig::default();
    let AttnEvalReport::Gaze { n_frames, l2_px } =
        evaluate_attention(&pred, &sub, AttnTask::Gaze, &scfg).unwrap()
    else {
        panic!("wrong task")
    };
    assert_eq!(n_frames, 5);
    assert!(l2_px.mean.is_finite() && l2_px.mean >= 0.0);
    // a soft-argmax over a 64×80 frame cannot leave the frame diagonal
    assert!(l2_px.mean < (64.0f64 * 64.0 + 80.0 * 80.0).sqrt());
}

#[test]
fn classifier_evaluation_covers_labeled_frames() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_synth(dir.path(), 51);
    let net = build_network::<f32>(&NetworkConfig::mini(ds.classes.len(), 17)).unwrap();
    let report = evaluate_classifier(&net, &ds).unwrap();
    assert_eq!(report.per_class.len(), ds.classes.len());
    let n_labeled = ds.records.iter().filter(|r| r.label.is_some()).count();
    let total: usize = report.confusion.iter().flatten().sum();
    assert_eq!(total, n_labeled);
    assert!(report.macro_f1 >= 0.0 && report.macro_f1 <= 1.0);

    let mut attn = build_network::<f32>(&NetworkConfig::mini(ds.classes.len(), 17)).unwrap();
    attn.dilate_for_attention().unwrap();
    assert_eq!(attn.mode(), Mode::Attention);
    assert!(evaluate_classifier(&attn, &ds).is_err());
}
