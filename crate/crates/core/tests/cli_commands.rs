use gackan::cli::{
    self, decode_checkpoint, encode_iq, encode_spt, load_checkpoint, read_spt, write_spt,
    CliError, DatasetConfig, DatasetManifest, EvalOptions, GenOptions, InferOptions, InputFormat,
    TrainOptions,
};
use gackan::dsp::{image_pipeline, StftConfig};
use gackan::gackan::{ArchConfig, GacKanModel};
use gackan::nncore::{param_count, state_dict, Conv2d, ConvGeometry, Mode, Module, StateKind, Tensor};
use gackan::sigsynth::{synth_sample, ComplexSignal, JammerClass, SampleSpec};
use gackan::traineval::{Split, TrainConfig};
use rand::SeedableRng;
use rand_pcg::Pcg32;
use std::path::Path;

fn tiny_config(trials: usize) -> DatasetConfig {
    let mut cfg = DatasetConfig::desk();
    cfg.sim.trials_per_cell = trials;
    cfg
}

fn generate(dir: &Path, trials: usize, seed: u64, parallel: usize) -> DatasetManifest {
    cli::gen_dataset(&GenOptions {
        config: tiny_config(trials),
        out: dir.to_path_buf(),
        seed,
        parallel,
        export_ppm: false,
    })
    .unwrap()
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn quick_train(data: &Path, ckpt: &Path, epochs: usize, lr: f64) {
    let config = TrainConfig {
        epochs,
        base_lr: lr,
        warmup_epochs: 1,
        batch_size: 16,
        ..TrainConfig::desk()
    };
    cli::train(&TrainOptions {
        data: data.to_path_buf(),
        out: ckpt.to_path_buf(),
        config,
        arch: None,
    })
    .unwrap();
}

#[test]
fn generation_is_independent_of_worker_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = generate(a.path(), 2, 11, 1);
    generate(b.path(), 2, 11, 5);
    assert_eq!(m.records.len(), 7 * 3 * 2);
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), 43);
    assert_eq!(ta, tb);
    DatasetManifest::load(a.path()).unwrap().validate(Some(a.path())).unwrap();
}

#[test]
fn stored_samples_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(dir.path(), 1, 3, 2);
    let cfg = tiny_config(1);
    for r in m.records.iter().step_by(5) {
        let sig = synth_sample(&SampleSpec { class: r.class, jnr_db: r.jnr_db, seed: r.seed }, &cfg.sim).unwrap();
        let want = image_pipeline(&sig, &cfg.stft).unwrap();
        let got = read_spt(&dir.path().join(&r.path)).unwrap();
        assert_eq!(encode_spt(&got), encode_spt(&want), "{}", r.id);
        assert!(got.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn missing_sample_fails_preflight() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(dir.path(), 1, 3, 1);
    std::fs::remove_file(dir.path().join(&m.records[4].path)).unwrap();
    let err = cli::train(&TrainOptions {
        data: dir.path().to_path_buf(),
        out: dir.path().join("m.gkpt"),
        config: TrainConfig::desk(),
        arch: None,
    })
    .unwrap_err();
    assert!(matches!(err, CliError::Validation(_)), "{err}");
}

#[test]
fn architecture_mismatch_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 1, 3, 1);
    let err = cli::train(&TrainOptions {
        data: dir.path().to_path_buf(),
        out: dir.path().join("m.gkpt"),
        config: TrainConfig::desk(),
        arch: Some(ArchConfig::reference()),
    })
    .unwrap_err();
    assert!(matches!(err, CliError::Validation(_)), "{err}");
    assert!(!dir.path().join("m.gkpt").exists());
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 4, 5, 2);
    let ckpt = dir.path().join("m.gkpt");
    quick_train(dir.path(), &ckpt, 1, 0.0);
    let (trained, header) = load_checkpoint(&ckpt).unwrap();
    let fresh = GacKanModel::<f32>::new(ArchConfig::desk(), TrainConfig::desk().seed).unwrap();
    let (a, b) = (state_dict(&trained), state_dict(&fresh));
    assert_eq!(a.len(), b.len());
    for ((na, ka, ta), (nb, _, tb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        if *ka == StateKind::Param {
            assert_eq!(ta.data(), tb.data(), "{na}");
        }
    }
    let history: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("m.gkpt.history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 1);
    assert_eq!(header.epoch, Some(0));
}

#[test]
fn eval_fuse_report_and_infer_agree() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(dir.path(), 4, 9, 4);
    let ckpt = dir.path().join("m.gkpt");
    quick_train(dir.path(), &ckpt, 2, 1e-3);

    let report_path = dir.path().join("out/report.json");
    let eval_opts = |ckpt: &Path| EvalOptions {
        ckpt: ckpt.to_path_buf(),
        data: dir.path().to_path_buf(),
        report: report_path.clone(),
        split: Split::Test,
        batch_size: 8,
    };
    let r = cli::eval(&eval_opts(&ckpt)).unwrap();
    let trace: u64 = (0..7).map(|k| r.metrics.confusion[k][k]).sum();
    let total: u64 = r.metrics.confusion.iter().flatten().sum();
    assert_eq!(total, r.metrics.count);
    assert!((r.metrics.overall_accuracy - trace as f64 / total as f64).abs() < 1e-12);
    for svg in ["report.accuracy_vs_jnr.svg", "report.confusion.svg"] {
        assert!(dir.path().join("out").join(svg).is_file());
    }

    let fused = dir.path().join("f.gkpt");
    let s = cli::fuse(&ckpt, &fused).unwrap();
    assert!(!s.already_fused && s.params_after < s.params_before);
    let twice = dir.path().join("f2.gkpt");
    let s2 = cli::fuse(&fused, &twice).unwrap();
    assert!(s2.already_fused);
    assert_eq!(std::fs::read(&fused).unwrap(), std::fs::read(&twice).unwrap());
    let rf = cli::eval(&eval_opts(&fused)).unwrap();
    assert_eq!(rf.metrics.confusion, r.metrics.confusion);

    let (mut original, _) = load_checkpoint(&ckpt).unwrap();
    let (mut folded, _) = load_checkpoint(&fused).unwrap();
    let mut rng = Pcg32::seed_from_u64(77);
    for _ in 0..10 {
        let x: Vec<f32> = (0..3 * 64 * 64).map(|_| rand::RngExt::random::<f32>(&mut rng)).collect();
        let x = Tensor::from_vec(&[1, 3, 64, 64], x).unwrap();
        let a = original.forward(&x, Mode::Eval).unwrap();
        let b = folded.forward(&x, Mode::Eval).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-4);
    }

    let full = cli::report(&ckpt).unwrap();
    let small = cli::report(&fused).unwrap();
    assert!(small.flops.total <= full.flops.total);
    assert!(small.params < full.params);

    let rec = m.records.iter().find(|r| r.class == JammerClass::Stj && r.jnr_db == 10.0).unwrap();
    let cfg = tiny_config(4);
    let sig = synth_sample(&SampleSpec { class: rec.class, jnr_db: rec.jnr_db, seed: rec.seed }, &cfg.sim).unwrap();
    let iq_bytes = encode_iq(&sig.samples);
    let iq_path = dir.path().join("sig.iq");
    std::fs::write(&iq_path, &iq_bytes).unwrap();
    let rounded = ComplexSignal::new(cli::decode_iq(&iq_bytes).unwrap(), cfg.sim.sample_rate_hz);
    let spt_path = dir.path().join("sig.spt");
    write_spt(&spt_path, &image_pipeline(&rounded, &cfg.stft).unwrap()).unwrap();
    let run = |input: &Path, format| {
        cli::infer(&InferOptions { ckpt: fused.clone(), input: input.to_path_buf(), format, sample_rate_hz: None }).unwrap()
    };
    let (pi, ps) = (run(&iq_path, InputFormat::Iq), run(&spt_path, InputFormat::Spt));
    assert_eq!(pi.code, ps.code);
    for (a, b) in pi.logits.iter().zip(&ps.logits) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!((pi.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn malformed_inputs_report_byte_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.gkpt");
    let model = GacKanModel::<f32>::new(ArchConfig::desk(), 1).unwrap();
    let meta = cli::CheckpointMeta { pipeline: Some(StftConfig::desk()), ..Default::default() };
    cli::save_checkpoint(&ckpt, &model, &meta).unwrap();
    let bad = dir.path().join("bad.iq");
    std::fs::write(&bad, [0u8; 13]).unwrap();
    let err = cli::infer(&InferOptions {
        ckpt: ckpt.clone(),
        input: bad.clone(),
        format: InputFormat::Iq,
        sample_rate_hz: Some(2e6),
    })
    .unwrap_err();
    assert!(matches!(err, CliError::Format { offset: 8, .. }), "{err}");
    let err = cli::infer(&InferOptions { ckpt: ckpt.clone(), input: bad, format: InputFormat::Spt, sample_rate_hz: None }).unwrap_err();
    assert!(matches!(err, CliError::Format { offset: 13, .. }), "{err}");
    let wrong_magic = dir.path().join("bad.spt");
    std::fs::write(&wrong_magic, [b'X'; 32]).unwrap();
    let err = cli::infer(&InferOptions { ckpt, input: wrong_magic, format: InputFormat::Spt, sample_rate_hz: None }).unwrap_err();
    assert!(matches!(err, CliError::Format { offset: 0, .. }), "{err}");
    let bytes = std::fs::read(dir.path().join("m.gkpt")).unwrap();
    assert!(matches!(decode_checkpoint(&bytes[..40]), Err(CliError::Format { .. })));
}

#[test]
fn single_conv_fixture_has_448_parameters() {
    let mut rng = Pcg32::seed_from_u64(0);
    let conv = Conv2d::<f32>::new(3, 16, (3, 3), ConvGeometry::same(3, 3), true, &mut rng).unwrap();
    assert_eq!(param_count(&conv), 3 * 3 * 3 * 16 + 16);
    assert_eq!(param_count(&conv), 448);
}
